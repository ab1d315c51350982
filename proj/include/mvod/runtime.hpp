#pragma once

#include <cstdint>
#include <functional>

namespace mvod::runtime {

/// Worker count for kernel-internal parallelism. Read once from the
/// MVOD_NUM_THREADS environment variable (default 1); overridable.
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [begin, end) over a static partition. Each index is
/// owned by exactly one worker, so results do not depend on thread count as
/// long as fn(i) writes only to storage owned by i.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

}  // namespace mvod::runtime

namespace mvod::instrument {

// Debug counter of convolution multiply-accumulates executed by conv2d.
void enable_mac_counting(bool on);
bool mac_counting_enabled();
void reset_mac_count();
std::uint64_t conv_mac_count();
void add_conv_macs(std::uint64_t n);

/// Enables counting for the lifetime of the guard, restoring the prior state.
class MacCountScope {
 public:
  MacCountScope();
  ~MacCountScope();
  MacCountScope(const MacCountScope&) = delete;
  MacCountScope& operator=(const MacCountScope&) = delete;
  std::uint64_t count() const;

 private:
  bool was_enabled_;
  std::uint64_t start_;
};

}  // namespace mvod::instrument
