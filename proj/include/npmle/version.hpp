#pragma once

namespace npmle {

inline constexpr const char* kVersion = "0.1.0";

} // namespace npmle
