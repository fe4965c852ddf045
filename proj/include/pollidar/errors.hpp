#pragma once

#include <stdexcept>
#include <string>

namespace pollidar {

/// Malformed config/scene/schedule input. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// I/O or processing failure at runtime. CLI maps this to exit code 1.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pollidar
