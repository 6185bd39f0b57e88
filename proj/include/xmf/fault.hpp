// SPDX-License-Identifier: Apache-2.0
//
// Fault injection for the gradient self-check. Arming a site perturbs the
// analytic gradient produced by that op's backward pass, which the
// finite-difference checks must then flag. Never armed in normal runs.

#pragma once

#include <optional>
#include <string_view>

namespace xmf::fault {

enum class Site : unsigned { scan = 0, mmd = 1, layer_norm = 2, matmul = 3 };

void arm(Site site);
void disarm_all();
bool armed(Site site);
/// 1.0 normally, 1.05 while the site is armed.
double gradient_factor(Site site);

std::optional<Site> parse_site(std::string_view name);

}  // namespace xmf::fault
