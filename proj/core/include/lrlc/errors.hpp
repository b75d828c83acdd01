#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace lrlc {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A parameter or option is invalid (even filter size, zero rank, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Runtime data violates a contract (label out of range, non-finite values).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A byte stream does not match the expected file format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The operation is well-formed but not supported (e.g. lowering a dynamic layer).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Parts>
std::string concat(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

}  // namespace detail

/// Throws E with a streamed message when `ok` is false.
template <typename E = Error, typename... Parts>
void require(bool ok, Parts&&... parts) {
  if (!ok) throw E(detail::concat(std::forward<Parts>(parts)...));
}

}  // namespace lrlc
