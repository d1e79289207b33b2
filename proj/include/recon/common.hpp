#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace recon {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using u128 = unsigned __int128;

/// Base for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary or text input. Carries the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

#define RECON_REQUIRE(cond, msg)                                   \
  do {                                                             \
    if (!(cond)) throw ::recon::ContractViolation(std::string(msg)); \
  } while (0)

}  // namespace recon
