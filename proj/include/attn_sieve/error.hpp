#pragma once

#include <stdexcept>
#include <string>

namespace attn_sieve {

enum class ErrorKind {
  usage,       // bad arguments or configuration
  format,      // malformed or invariant-violating input data
  degenerate,  // data that cannot support the requested statistic
  io,          // sink/source failure
};

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

}  // namespace attn_sieve
