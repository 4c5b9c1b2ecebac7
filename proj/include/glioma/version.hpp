#pragma once

namespace glioma {

inline constexpr const char* kVersionString = "0.3.0";

}  // namespace glioma
