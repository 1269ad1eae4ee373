#include "subflow/error.hpp"

namespace subflow {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::dimension: return "dimension";
    case Errc::parameter: return "parameter";
    case Errc::state: return "state";
    case Errc::empty_region: return "empty_region";
    case Errc::numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace subflow
