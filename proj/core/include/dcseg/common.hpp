#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dcseg {

/// Thrown when an operation's input contract is violated (bad shapes,
/// non-finite values, out-of-range labels, ...).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for malformed or inconsistent run configuration. The message names
/// the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown for file format and filesystem failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when training produces a non-finite loss. The message names the
/// first non-finite component.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

}  // namespace dcseg

#define DCSEG_CHECK(cond, ...)                                              \
  do {                                                                      \
    if (!(cond)) {                                                          \
      throw ::dcseg::ContractViolation(                                     \
          ::dcseg::detail::format_msg("contract violation: ", __VA_ARGS__)); \
    }                                                                       \
  } while (0)

#define DCSEG_CHECK_CONFIG(cond, ...)                                  \
  do {                                                                 \
    if (!(cond)) {                                                     \
      throw ::dcseg::ConfigError(                                      \
          ::dcseg::detail::format_msg("config error: ", __VA_ARGS__)); \
    }                                                                  \
  } while (0)

#define DCSEG_CHECK_IO(cond, ...)                                  \
  do {                                                              \
    if (!(cond)) {                                                  \
      throw ::dcseg::IoError(::dcseg::detail::format_msg(__VA_ARGS__)); \
    }                                                               \
  } while (0)
