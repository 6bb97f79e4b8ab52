#pragma once

// Two-stage assignment of latent regions to ground-truth components: an
// optimal one-to-one matching that covers every component, followed by a
// greedy many-to-one extension up to the active-region budget.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgr/assignment.hpp"
#include "sgr/components.hpp"
#include "sgr/losses.hpp"
#include "sgr/tensor.hpp"

namespace sgr {

// rows = regions (K), cols = components (C).
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) throw std::invalid_argument("CostMatrix: size mismatch");
  }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

// Cost[i, j] = focal(P_i, M_j) + rho * dice(P_i, M_j), on detached masks.
inline CostMatrix build_cost_matrix(const Tensor& masks, const ComponentSet& cs, double rho,
                                    double focal_gamma = 2.0) {
  if (cs.empty()) throw std::invalid_argument("build_cost_matrix: empty component set");
  if (rho < 0) throw std::invalid_argument("build_cost_matrix: rho must be non-negative");
  detail::require(masks.rank() == 2 && masks.dim(0) == cs.width * cs.height, "build_cost_matrix",
                  "masks " + shape_string(masks.shape()) + " do not match the component grid");
  NoGradScope no_grad;
  const Tensor detached = masks.detach();
  const std::size_t k = masks.dim(1);
  std::vector<Tensor> targets;
  for (const auto& c : cs.components) targets.push_back(binary_target(c.mask));
  CostMatrix cost(k, cs.size(), std::vector<double>(k * cs.size()));
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor p = column(detached, i);
    for (std::size_t j = 0; j < cs.size(); ++j)
      cost(i, j) = focal_loss(p, targets[j], focal_gamma).item() + rho * dice_loss(p, targets[j]).item();
  }
  return cost;
}

namespace detail {

// Shortest-augmenting-path Hungarian method on an n x m matrix, n <= m.
// Returns for every row the column it is assigned to.
inline std::vector<std::size_t> hungarian_rows(const std::vector<double>& a, std::size_t n, std::size_t m) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

// Minimum-cost injective map from components to regions (requires K >= C).
inline Assignment hungarian_match(const CostMatrix& cost) {
  if (cost.cols == 0) throw std::invalid_argument("hungarian_match: no components");
  if (cost.rows < cost.cols)
    throw std::invalid_argument("hungarian_match: " + std::to_string(cost.rows) + " regions cannot cover " +
                                std::to_string(cost.cols) + " components");
  std::vector<double> a(cost.cols * cost.rows);
  for (std::size_t c = 0; c < cost.cols; ++c)
    for (std::size_t r = 0; r < cost.rows; ++r) a[c * cost.rows + r] = cost(r, c);
  const auto comp_to_region = detail::hungarian_rows(a, cost.cols, cost.rows);
  Assignment out;
  out.components = cost.cols;
  for (std::size_t c = 0; c < cost.cols; ++c) out.pairs.emplace_back(comp_to_region[c], c);
  return out;
}

// Sum of the assigned costs, accumulated in component order.
inline double assignment_cost(const CostMatrix& cost, const Assignment& a) {
  auto pairs = a.pairs;
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    return std::pair(x.second, x.first) < std::pair(y.second, y.first);
  });
  double total = 0.0;
  for (const auto& [r, c] : pairs) total += cost(r, c);
  return total;
}

// Adds unmatched regions by ascending best cost until min(l, K) regions are
// matched. Ties go to the lower region index, then the lower component.
inline Assignment greedy_extend(const CostMatrix& cost, const Assignment& base, std::size_t l) {
  Assignment out = base;
  const std::size_t target = std::min(l, cost.rows);
  if (out.pairs.size() >= target) return out;
  std::vector<char> matched(cost.rows, 0);
  for (const auto& [r, c] : out.pairs) matched[r] = 1;
  struct Candidate {
    double cost;
    std::size_t region, component;
  };
  std::vector<Candidate> candidates;
  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (matched[r]) continue;
    std::size_t best = 0;
    for (std::size_t c = 1; c < cost.cols; ++c)
      if (cost(r, c) < cost(r, best)) best = c;
    candidates.push_back({cost(r, best), r, best});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    return a.region < b.region;
  });
  for (const auto& cand : candidates) {
    if (out.pairs.size() >= target) break;
    out.pairs.emplace_back(cand.region, cand.component);
  }
  return out;
}

// Two-stage matching on a prepared cost matrix. With fewer regions than
// components every region is matched one-to-one and the shortfall is
// recorded in `uncovered`.
inline Assignment match_cost(const CostMatrix& cost, std::size_t l) {
  if (cost.cols == 0) return Assignment{};
  if (cost.rows < cost.cols) {
    std::vector<double> a(cost.values);  // regions as rows
    const auto region_to_comp = detail::hungarian_rows(a, cost.rows, cost.cols);
    Assignment out;
    out.components = cost.cols;
    for (std::size_t r = 0; r < cost.rows; ++r) out.pairs.emplace_back(r, region_to_comp[r]);
    out.uncovered = cost.cols - cost.rows;
    out.over_budget = cost.cols > l;
    return out;
  }
  Assignment base = hungarian_match(cost);
  base.over_budget = cost.cols > l;
  return greedy_extend(cost, base, l);
}

inline Assignment match_regions(const Tensor& masks, const ComponentSet& cs, double rho, std::size_t l,
                                double focal_gamma = 2.0) {
  if (cs.empty()) return Assignment{};
  return match_cost(build_cost_matrix(masks, cs, rho, focal_gamma), l);
}

}  // namespace sgr
