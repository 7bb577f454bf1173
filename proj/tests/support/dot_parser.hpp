#pragma once

// Minimal independent checker for the DOT subset the exporter emits:
//   digraph ID { stmt* }  with node statements `name [attrs];`,
//   edge statements `a -> b [attrs];` and `// ...` comments.

#include <cctype>
#include <string>

namespace testsupport {

class DotParser {
 public:
  explicit DotParser(std::string text) : s_(std::move(text)) {}

  bool parse(int* node_count = nullptr, int* edge_count = nullptr) {
    nodes_ = edges_ = 0;
    pos_ = 0;
    skip_ws();
    if (!word("digraph")) return false;
    skip_ws();
    if (!identifier()) return false;
    skip_ws();
    if (!consume('{')) return false;
    for (;;) {
      skip_ws();
      if (peek() == '}') break;
      if (pos_ >= s_.size()) return false;
      if (!statement()) return false;
    }
    if (!consume('}')) return false;
    skip_ws();
    if (pos_ != s_.size()) return false;
    if (node_count) *node_count = nodes_;
    if (edge_count) *edge_count = edges_;
    return true;
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  bool consume(char c) {
    if (peek() != c) return false;
    ++pos_;
    return true;
  }

  void skip_ws() {
    for (;;) {
      while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (pos_ + 1 < s_.size() && s_[pos_] == '/' && s_[pos_ + 1] == '/') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
        continue;
      }
      return;
    }
  }

  bool word(const std::string& w) {
    if (s_.compare(pos_, w.size(), w) != 0) return false;
    pos_ += w.size();
    return true;
  }

  bool identifier() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
      ++pos_;
    }
    return pos_ > start;
  }

  bool attr_list() {
    if (!consume('[')) return false;
    for (;;) {
      skip_ws();
      if (consume(']')) return true;
      if (pos_ >= s_.size()) return false;
      if (!identifier()) return false;
      skip_ws();
      if (!consume('=')) return false;
      skip_ws();
      if (peek() == '"') {
        ++pos_;
        while (pos_ < s_.size() && s_[pos_] != '"') ++pos_;
        if (!consume('"')) return false;
      } else if (!identifier()) {
        return false;
      }
      skip_ws();
      consume(',');
    }
  }

  bool statement() {
    if (!identifier()) return false;
    skip_ws();
    if (word("->")) {
      skip_ws();
      if (!identifier()) return false;
      skip_ws();
      if (peek() == '[' && !attr_list()) return false;
      skip_ws();
      if (!consume(';')) return false;
      ++edges_;
      return true;
    }
    if (consume('=')) {  // graph attribute: ID = ID ;
      skip_ws();
      if (!identifier()) return false;
      skip_ws();
      return consume(';');
    }
    if (peek() == '[' && !attr_list()) return false;
    skip_ws();
    if (!consume(';')) return false;
    ++nodes_;
    return true;
  }

  std::string s_;
  std::size_t pos_ = 0;
  int nodes_ = 0;
  int edges_ = 0;
};

}  // namespace testsupport
