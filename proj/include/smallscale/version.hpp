#pragma once

namespace smallscale {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace smallscale
