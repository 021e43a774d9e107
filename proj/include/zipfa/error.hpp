#pragma once

#include <stdexcept>
#include <string>

namespace zipfa {

enum class ErrorKind {
  Input,          // malformed or invalid data file / matrix content
  Argument,       // caller passed an out-of-range or inconsistent argument
  DegenerateColumn,
  Numeric,        // non-finite intermediate, failed factorization
  NoConvergence,
  Calibration,
  Partition,
  Selection,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace zipfa
