#pragma once

#include <stdexcept>
#include <string>

namespace subflow {

enum class Errc {
  io = 1,
  format,
  dimension,
  parameter,
  state,
  empty_region,
  numeric,
};

const char* errc_name(Errc code) noexcept;

// All library failures are reported through this exception. `what()` carries
// the module-qualified message, e.g. "dataset: shard 3 truncated".
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& module, const std::string& message)
      : std::runtime_error(module + ": " + message), code_(code), module_(module) {}

  Errc code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  Errc code_;
  std::string module_;
};

[[noreturn]] inline void fail(Errc code, const std::string& module, const std::string& message) {
  throw Error(code, module, message);
}

}  // namespace subflow
