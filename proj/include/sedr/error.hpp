#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sedr {

/// Violated precondition or invariant of a public operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Tensor shapes that cannot be combined by an operation.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A forward pass or loss produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents. The message names the byte offset or line number.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Infeasible configuration (e.g. a synthetic corpus that cannot be generated).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace detail
}  // namespace sedr

// Message arguments are evaluated only when the check fails.
#define SEDR_REQUIRE_AS(Err, cond, ...) \
  do {                                  \
    if (!(cond)) throw Err(::sedr::detail::concat(__VA_ARGS__)); \
  } while (0)

#define SEDR_REQUIRE(cond, ...) SEDR_REQUIRE_AS(::sedr::ContractError, cond, __VA_ARGS__)
