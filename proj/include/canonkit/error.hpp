#pragma once

#include <stdexcept>
#include <string>

namespace canonkit {

enum class ErrKind {
  dim,       // shape / dimension mismatch
  config,    // bad configuration value
  parse,     // malformed input file
  index,     // out-of-range index
  group,     // element does not belong to the group
  contract,  // API precondition violated
  artifact,  // checkpoint / output file problem
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const noexcept { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind k, const std::string& msg) { throw Error(k, msg); }

#define CK_CHECK(cond, kind, msg)                \
  do {                                           \
    if (!(cond)) ::canonkit::fail((kind), (msg)); \
  } while (0)

}  // namespace canonkit
