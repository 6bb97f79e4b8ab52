#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

namespace sgr {

// Many-to-one map from latent regions to ground-truth components.
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (region, component)
  std::size_t components = 0;  // C
  std::size_t uncovered = 0;   // components with no region (only when K < C)
  bool over_budget = false;    // C exceeded the active-region budget L

  bool empty() const { return pairs.empty(); }

  std::vector<std::size_t> matched_regions() const {
    std::vector<std::size_t> out;
    for (const auto& [r, c] : pairs) out.push_back(r);
    std::sort(out.begin(), out.end());
    return out;
  }

  // Regions matched to each component, in the order they were assigned.
  std::vector<std::vector<std::size_t>> regions_by_component() const {
    std::vector<std::vector<std::size_t>> out(components);
    for (const auto& [r, c] : pairs) out[c].push_back(r);
    return out;
  }
};

}  // namespace sgr
