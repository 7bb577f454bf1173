#include "dots/optim.hpp"

#include <cmath>

namespace dots {

Sgd::Sgd(std::vector<Tensor> params, double momentum, double weight_decay,
         std::optional<double> grad_clip)
    : params_(std::move(params)),
      momentum_(momentum),
      weight_decay_(weight_decay),
      grad_clip_(grad_clip) {
  check(momentum_ >= 0.0 && momentum_ < 1.0, "Sgd: momentum must be in [0,1)");
  check(weight_decay_ >= 0.0, "Sgd: weight decay must be nonnegative");
  if (grad_clip_) check(*grad_clip_ > 0.0, "Sgd: grad clip must be positive");
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) {
    check(p.valid(), "Sgd: invalid parameter tensor");
    velocity_.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
}

void Sgd::step(double lr) {
  for (const Tensor& p : params_) {
    check(p.grad_valid(), "Sgd::step: parameter is missing its gradient");
  }
  if (grad_clip_) {
    double sq = 0.0;
    for (const Tensor& p : params_) sq += p.grad().square().sum();
    const double norm = std::sqrt(sq);
    if (norm > *grad_clip_) {
      const double scale = *grad_clip_ / norm;
      for (Tensor& p : params_) p.grad() *= scale;
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    Eigen::ArrayXd g = p.grad();
    if (weight_decay_ != 0.0) g += weight_decay_ * p.value();
    velocity_[i] = momentum_ * velocity_[i] + g;
    p.value() -= lr * velocity_[i];
  }
}

void Sgd::zero_grad() {
  for (Tensor& p : params_) {
    p.node()->ensure_grad();
    p.zero_grad();
  }
}

double cosine_lr(int step, int total_steps, double lr0) {
  check(total_steps > 0, "cosine_lr: total_steps must be positive");
  check(step >= 0 && step <= total_steps,
        "cosine_lr: step " + std::to_string(step) + " outside [0, " +
            std::to_string(total_steps) + "]");
  const double pi = 3.14159265358979323846264338327950288;
  return lr0 * 0.5 * (1.0 + std::cos(pi * static_cast<double>(step) / total_steps));
}

}  // namespace dots
