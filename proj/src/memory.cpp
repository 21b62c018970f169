// SPDX-License-Identifier: Apache-2.0
#include <atomic>

#include "etc/tensor.hpp"

namespace etc {

Precision parse_precision(const std::string& name) {
  if (name == "single" || name == "float" || name == "f32") return Precision::kSingle;
  if (name == "double" || name == "f64") return Precision::kDouble;
  throw std::invalid_argument("unknown precision '" + name + "' (expected single or double)");
}

const char* to_string(Precision p) { return p == Precision::kSingle ? "single" : "double"; }

namespace memory {
namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

void record_allocation(std::size_t bytes) noexcept {
  std::size_t now = g_live.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void record_release(std::size_t bytes) noexcept { g_live.fetch_sub(bytes, std::memory_order_relaxed); }

std::size_t live_bytes() noexcept { return g_live.load(std::memory_order_relaxed); }
std::size_t peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() noexcept { g_peak.store(g_live.load(std::memory_order_relaxed), std::memory_order_relaxed); }

}  // namespace memory
}  // namespace etc
