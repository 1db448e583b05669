#pragma once

namespace bilevel {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bilevel
