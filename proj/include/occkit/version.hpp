#pragma once

#include <string>

#include "occkit/io.hpp"

namespace occkit {

inline constexpr const char* kVersion = "1.0.0";

inline std::string version_string() {
  return std::string("occkit ") + kVersion + " (OCCK format v" +
         std::to_string(io::kFormatVersion) + ")";
}

}  // namespace occkit
