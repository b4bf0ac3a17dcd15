#pragma once

#include <stdexcept>
#include <string>

namespace salient {

enum class ErrorKind {
  kUsage,
  kConfig,
  kShape,
  kCapacity,
  kIndex,
  kSegment,
  kValidation,
  kParse,
  kIo,
  kDegenerate,
  kDivergence,
};

const char* error_kind_name(ErrorKind kind);

// Every failure raised by the core carries a kind so the C API can map it to
// a stable status code.
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

}  // namespace salient
