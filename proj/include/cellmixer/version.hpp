#pragma once

namespace cellmixer {

inline constexpr const char* kVersion = "0.1.0";

} // namespace cellmixer
