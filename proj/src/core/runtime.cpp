#include "mvod/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mvod::runtime {
namespace {

int initial_threads() {
  if (const char* env = std::getenv("MVOD_NUM_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

std::atomic<int>& threads() {
  static std::atomic<int> n{initial_threads()};
  return n;
}

}  // namespace

int thread_count() { return threads().load(); }

void set_thread_count(int n) { threads().store(std::max(1, n)); }

void parallel_for(int begin, int end, const std::function<void(int)>& fn) {
  const int total = end - begin;
  if (total <= 0) return;
  const int workers = std::min(thread_count(), total);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const int chunk = (total + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    const int lo = begin + t * chunk;
    const int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
}

}  // namespace mvod::runtime

namespace mvod::instrument {
namespace {
std::atomic<bool> g_enabled{false};
std::atomic<std::uint64_t> g_macs{0};
}  // namespace

void enable_mac_counting(bool on) { g_enabled.store(on); }
bool mac_counting_enabled() { return g_enabled.load(); }
void reset_mac_count() { g_macs.store(0); }
std::uint64_t conv_mac_count() { return g_macs.load(); }
void add_conv_macs(std::uint64_t n) {
  if (g_enabled.load(std::memory_order_relaxed)) g_macs.fetch_add(n);
}

MacCountScope::MacCountScope() : was_enabled_(g_enabled.load()), start_(g_macs.load()) {
  g_enabled.store(true);
}
MacCountScope::~MacCountScope() { g_enabled.store(was_enabled_); }
std::uint64_t MacCountScope::count() const { return g_macs.load() - start_; }

}  // namespace mvod::instrument
