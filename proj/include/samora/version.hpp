#pragma once

namespace samora {

inline constexpr const char* kVersion = "samora-0.1.0";

}  // namespace samora
