#pragma once

namespace rrl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rrl
