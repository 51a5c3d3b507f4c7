#include "ssilab/parallel.hpp"

#include <cstdlib>
#include <string>

namespace ssilab {

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) {
    return requested;
  }
  if (const char* env = std::getenv("SSILAB_THREADS"); env != nullptr && *env != '\0') {
    try {
      const long parsed = std::stol(env);
      if (parsed > 0) {
        return static_cast<unsigned>(parsed);
      }
    } catch (const std::exception&) {
      // fall through to hardware default
    }
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

}  // namespace ssilab
