#pragma once

namespace adabatch::parallel {

// Worker count used by the OpenMP kernels. 1 selects the serial reference
// paths. Process-wide; set it from the driver thread only.
int num_threads() noexcept;
void set_num_threads(int n) noexcept;

// Reads ADABATCH_THREADS; returns 1 when unset or invalid.
int threads_from_env() noexcept;

// RAII override of the worker count.
class ThreadScope {
 public:
  explicit ThreadScope(int n) noexcept : saved_(num_threads()) { set_num_threads(n); }
  ~ThreadScope() { set_num_threads(saved_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int saved_;
};

}  // namespace adabatch::parallel
