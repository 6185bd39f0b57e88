// SPDX-License-Identifier: Apache-2.0
//
// Replacement global operator new/delete that keep a running count of live
// heap bytes. Each block carries a max_align_t-sized header with its size.
// Over-aligned allocations go through the library defaults and are not
// counted.

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <new>

#include "xmf/bench.hpp"

namespace {

constexpr std::size_t kHeader = alignof(std::max_align_t);

std::atomic<std::uint64_t> g_live{0};
std::atomic<std::uint64_t> g_peak{0};

void* tracked_alloc(std::size_t n) noexcept {
  void* base = std::malloc(n + kHeader);
  if (!base) return nullptr;
  *static_cast<std::size_t*>(base) = n;
  const std::uint64_t now = g_live.fetch_add(n, std::memory_order_relaxed) + n;
  std::uint64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
  return static_cast<char*>(base) + kHeader;
}

void tracked_free(void* p) noexcept {
  if (!p) return;
  char* base = static_cast<char*>(p) - kHeader;
  g_live.fetch_sub(*reinterpret_cast<std::size_t*>(base), std::memory_order_relaxed);
  std::free(base);
}

void* checked_alloc(std::size_t n) {
  void* p = tracked_alloc(n == 0 ? 1 : n);
  if (!p) throw std::bad_alloc();
  return p;
}

}  // namespace

void* operator new(std::size_t n) { return checked_alloc(n); }
void* operator new[](std::size_t n) { return checked_alloc(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
  return tracked_alloc(n == 0 ? 1 : n);
}
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept {
  return tracked_alloc(n == 0 ? 1 : n);
}
void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { tracked_free(p); }

namespace xmf::bench {

AllocationScope::AllocationScope() : baseline_(g_live.load()) { g_peak.store(baseline_); }

AllocationScope::~AllocationScope() = default;

std::uint64_t AllocationScope::peak_bytes() const {
  const std::uint64_t peak = g_peak.load();
  return peak > baseline_ ? peak - baseline_ : 0;
}

}  // namespace xmf::bench
