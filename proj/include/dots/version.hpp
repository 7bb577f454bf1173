#pragma once

namespace dots {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace dots
