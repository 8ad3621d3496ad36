#pragma once

#include <stdexcept>
#include <string>

namespace dce {

enum class ErrorKind {
  kShape,    // tensor extents disagree
  kValue,    // argument outside its admissible range
  kIo,       // file missing, unreadable or unwritable
  kFormat,   // malformed file contents
  kNumeric,  // NaN/Inf or a degenerate system
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dce
