// SPDX-License-Identifier: Apache-2.0

#include "xmf/fault.hpp"

#include <atomic>

namespace xmf::fault {
namespace {
std::atomic<unsigned> g_armed{0};

unsigned bit(Site s) { return 1u << static_cast<unsigned>(s); }
}  // namespace

void arm(Site site) { g_armed.fetch_or(bit(site)); }
void disarm_all() { g_armed.store(0); }
bool armed(Site site) { return (g_armed.load(std::memory_order_relaxed) & bit(site)) != 0; }
double gradient_factor(Site site) { return armed(site) ? 1.05 : 1.0; }

std::optional<Site> parse_site(std::string_view name) {
  if (name == "scan") return Site::scan;
  if (name == "mmd") return Site::mmd;
  if (name == "layer_norm") return Site::layer_norm;
  if (name == "matmul") return Site::matmul;
  return std::nullopt;
}

}  // namespace xmf::fault
