#include "subflow/parallel.hpp"

#include <cstdlib>
#include <string>

namespace subflow {

int resolve_threads(int requested) {
  if (requested >= 1) return requested;
  if (const char* env = std::getenv("SUBFLOW_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (...) {
    }
  }
  return 1;
}

}  // namespace subflow
