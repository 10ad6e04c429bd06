#pragma once

namespace mglab {
inline constexpr const char* kVersion = "0.1.0";
}
