#pragma once

namespace icjm {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace icjm
