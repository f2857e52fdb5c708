#include "adabatch/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace adabatch::parallel {

namespace {
std::atomic<int> g_threads{1};
}

int num_threads() noexcept { return g_threads.load(std::memory_order_relaxed); }

void set_num_threads(int n) noexcept { g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

int threads_from_env() noexcept {
  const char* v = std::getenv("ADABATCH_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) return 1;
  return static_cast<int>(n);
}

}  // namespace adabatch::parallel
