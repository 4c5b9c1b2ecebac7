#pragma once

#include <stdexcept>
#include <string>

namespace glioma {

/// Runtime failure inside a numerical or I/O routine.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid or unknown configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace glioma
