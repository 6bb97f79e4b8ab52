#pragma once

// Brute-force reference implementations and the randomized suites that
// compare the library against them. Shared by the `oracle` subcommand and
// the acceptance binary.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sgr/components.hpp"
#include "sgr/grad_check.hpp"
#include "sgr/losses.hpp"
#include "sgr/matching.hpp"
#include "sgr/metrics.hpp"
#include "sgr/sgr_net.hpp"
#include "sgr/train.hpp"

namespace sgr::oracle {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Reference implementations

// Minimum over every injective component -> region map, summed in component
// order. Exponential; intended for C <= 7.
inline double exhaustive_assignment_min(const CostMatrix& cost) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> used(cost.rows, 0);
  std::vector<std::size_t> pick(cost.cols);
  std::function<void(std::size_t)> rec = [&](std::size_t c) {
    if (c == cost.cols) {
      double total = 0.0;
      for (std::size_t j = 0; j < cost.cols; ++j) total += cost(pick[j], j);
      best = std::min(best, total);
      return;
    }
    for (std::size_t r = 0; r < cost.rows; ++r) {
      if (used[r]) continue;
      used[r] = 1;
      pick[c] = r;
      rec(c + 1);
      used[r] = 0;
    }
  };
  rec(0);
  return best;
}

// A component as (class id, sorted pixel indices).
using CanonicalComponent = std::pair<int, std::vector<std::size_t>>;

inline std::vector<CanonicalComponent> canonical(const ComponentSet& cs) {
  std::vector<CanonicalComponent> out;
  for (const auto& c : cs.components) {
    std::vector<std::size_t> px;
    for (std::size_t i = 0; i < c.mask.size(); ++i)
      if (c.mask[i]) px.push_back(i);
    out.emplace_back(c.class_id, std::move(px));
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {
struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a), b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// 8-connected groups of equal nonnegative values, by union-find over pixel pairs.
inline std::vector<CanonicalComponent> union_find_groups(const std::vector<int>& ids, std::size_t w, std::size_t h) {
  DisjointSets sets(ids.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t n = y * w + x;
      if (ids[n] < 0) continue;
      const long nbr[4][2] = {{1, 0}, {-1, 1}, {0, 1}, {1, 1}};
      for (const auto& d : nbr) {
        const long nx = static_cast<long>(x) + d[0], ny = static_cast<long>(y) + d[1];
        if (nx < 0 || nx >= static_cast<long>(w) || ny >= static_cast<long>(h)) continue;
        const std::size_t m = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
        if (ids[m] == ids[n]) sets.unite(n, m);
      }
    }
  std::vector<CanonicalComponent> out;
  std::vector<long> slot(ids.size(), -1);
  for (std::size_t n = 0; n < ids.size(); ++n) {
    if (ids[n] < 0) continue;
    const std::size_t root = sets.find(n);
    if (slot[root] < 0) {
      slot[root] = static_cast<long>(out.size());
      out.push_back({ids[n], {}});
    }
    out[static_cast<std::size_t>(slot[root])].second.push_back(n);
  }
  std::sort(out.begin(), out.end());
  return out;
}
}  // namespace detail

inline std::vector<CanonicalComponent> flood_fill_components(const LabelMap& labels) {
  return detail::union_find_groups(labels.class_ids, labels.width, labels.height);
}

// Opening by a 3x3 square: a pixel survives iff some 3x3 window lying
// entirely inside the grid and inside the mask contains it.
inline std::vector<std::uint8_t> opening_by_windows(const std::vector<std::uint8_t>& mask, std::size_t w,
                                                    std::size_t h) {
  std::vector<std::uint8_t> out(mask.size(), 0);
  if (w < 3 || h < 3) return out;
  for (std::size_t y0 = 0; y0 + 3 <= h; ++y0)
    for (std::size_t x0 = 0; x0 + 3 <= w; ++x0) {
      bool full = true;
      for (std::size_t y = y0; y < y0 + 3 && full; ++y)
        for (std::size_t x = x0; x < x0 + 3; ++x) full = full && mask[y * w + x];
      if (!full) continue;
      for (std::size_t y = y0; y < y0 + 3; ++y)
        for (std::size_t x = x0; x < x0 + 3; ++x) out[y * w + x] = 1;
    }
  return out;
}

// Opening, regrouping and the 5% rule, without the library's helpers.
inline std::vector<CanonicalComponent> filtered_components(const LabelMap& labels, double fraction = 0.05) {
  const auto raw = flood_fill_components(labels);
  if (raw.empty()) return raw;
  std::vector<CanonicalComponent> opened;
  for (const auto& [cls, px] : raw) {
    std::vector<std::uint8_t> mask(labels.pixels(), 0);
    for (auto p : px) mask[p] = 1;
    const auto o = opening_by_windows(mask, labels.width, labels.height);
    std::vector<int> ids(o.size(), -1);
    for (std::size_t i = 0; i < o.size(); ++i)
      if (o[i]) ids[i] = cls;
    for (auto& piece : detail::union_find_groups(ids, labels.width, labels.height)) opened.push_back(piece);
  }
  if (opened.empty()) {
    // Largest original; ties go to the lower class, then the earlier first pixel.
    auto best = raw.front();
    for (const auto& c : raw)
      if (c.second.size() > best.second.size()) best = c;
    return {best};
  }
  std::size_t max_area = 0;
  for (const auto& c : opened) max_area = std::max(max_area, c.second.size());
  std::vector<CanonicalComponent> out;
  for (const auto& c : opened)
    if (static_cast<double>(c.second.size()) >= fraction * static_cast<double>(max_area)) out.push_back(c);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Random instance builders

inline LabelMap random_label_grid(std::mt19937_64& rng, std::size_t w, std::size_t h, int classes,
                                  bool blocky) {
  LabelMap lm;
  lm.width = w;
  lm.height = h;
  lm.class_ids.assign(w * h, 0);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  if (!blocky) {
    for (auto& c : lm.class_ids) c = cls(rng);
    return lm;
  }
  std::uniform_int_distribution<std::size_t> px(0, w - 1), py(0, h - 1);
  const int rects = std::uniform_int_distribution<int>(2, 8)(rng);
  for (int r = 0; r < rects; ++r) {
    std::size_t x0 = px(rng), x1 = px(rng), y0 = py(rng), y1 = py(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    const int c = cls(rng);
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) lm.class_ids[y * w + x] = c;
  }
  return lm;
}

// Values uniform in [lo, hi].
inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_binary(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(rng() & 1);
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) v[0] = 1.0;
  return Tensor({n}, std::move(v));
}

// C components partitioning a random subset of an n-pixel grid.
inline ComponentSet random_partition(std::mt19937_64& rng, std::size_t w, std::size_t h, std::size_t c) {
  ComponentSet cs{w, h, {}};
  const std::size_t n = w * h;
  std::vector<std::size_t> group(n);
  std::uniform_int_distribution<std::size_t> g(0, c);
  for (auto& x : group) x = g(rng);
  for (std::size_t j = 0; j < c; ++j) group[j] = j;  // every component is non-empty
  for (std::size_t j = 0; j < c; ++j) {
    Component comp;
    comp.class_id = static_cast<int>(j % 3) + 1;
    comp.mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      if (group[i] == j) comp.mask[i] = 1, ++comp.area;
    cs.components.push_back(std::move(comp));
  }
  return cs;
}

// ---------------------------------------------------------------------------
// Suites

namespace detail {
class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};
}  // namespace detail

struct GradSuiteOptions {
  std::size_t instances = 100;
  double step = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 7;
  double budget_seconds = 120.0;
};

// Small network used by the gradient suite.
inline SgrConfig grad_suite_config() {
  SgrConfig cfg;
  cfg.width = cfg.height = 8;
  cfg.channels = 4;
  cfg.concepts = 6;
  cfg.active = 3;
  cfg.token_dim = 4;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.num_classes = 3;
  return cfg;
}

struct OpGradSummary {
  std::string name;
  GradCheckReport worst;  // instance with the largest error
  std::size_t instances = 0;
  std::size_t failures = 0;
  double largest_failing_grad = 0.0;  // max(|analytic|, |numeric|) at failing elements
  double largest_loss = 0.0;

  bool passed() const { return failures == 0; }

  // Smallest gradient central differences resolve: one ulp of the loss over 2h.
  double resolution(double step) const {
    return std::numeric_limits<double>::epsilon() * std::max(largest_loss, 1.0) / (2.0 * step);
  }
};

// Worst-case grad_check per op over random instances; one entry per loss op
// and one for the full forward pass followed by the total loss.
inline std::vector<OpGradSummary> gradient_checks(const GradSuiteOptions& opt) {
  const SgrConfig cfg = grad_suite_config();
  const std::size_t n = cfg.pixels(), k = cfg.concepts;
  std::mt19937_64 rng(opt.seed);
  std::vector<OpGradSummary> summary;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    auto it = std::find_if(summary.begin(), summary.end(), [&](const auto& s) { return s.name == name; });
    if (it == summary.end()) {
      summary.push_back({name, r});
      it = summary.end() - 1;
    } else if (r.max_relative_error > it->worst.max_relative_error) {
      it->worst = r;
    }
    ++it->instances;
    it->largest_loss = std::max(it->largest_loss, std::abs(r.loss));
    if (!r.passed) {
      ++it->failures;
      it->largest_failing_grad =
          std::max({it->largest_failing_grad, std::abs(r.worst_analytic), std::abs(r.worst_numeric)});
    }
  };
  auto check = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
    record(name, grad_check(f, std::move(leaves), opt.step, opt.tol));
  };
  const LossWeights weights;
  for (std::size_t it = 0; it < opt.instances; ++it) {
    {
      Tensor p = random_tensor(rng, {n}, 0.02, 0.98);
      const Tensor t = random_binary(rng, n);
      check("focal_loss", [&] { return focal_loss(p, t); }, {p});
      check("dice_loss", [&] { return dice_loss(p, t); }, {p});
    }
    {
      const std::size_t m = 2 + rng() % 3;
      std::vector<Tensor> masks;
      for (std::size_t i = 0; i < m; ++i) masks.push_back(random_tensor(rng, {n}, 0.02, 0.98));
      check("cosine_pair_loss", [&] { return cosine_pair_loss(masks); }, masks);
    }
    {
      const LabelMap lm = random_label_grid(rng, cfg.width, cfg.height, 3, true);
      const ComponentSet cs = extract_components(lm);
      Tensor masks = random_tensor(rng, {n, k}, 0.02, 0.98);
      const Assignment a = match_regions(masks, cs, weights.rho, cfg.active);
      check("concept_loss", [&] { return concept_loss(masks, cs, a, weights); }, {masks});
      Tensor logits = random_tensor(rng, {n, cfg.num_classes}, -2.0, 2.0);
      check("pixel_cross_entropy", [&] { return pixel_cross_entropy(logits, lm.class_ids); }, {logits});
      check(
          "total_loss",
          [&] {
            return total_loss(pixel_cross_entropy(logits, lm.class_ids), concept_loss(masks, cs, a, weights),
                              weights.beta);
          },
          {logits, masks});
    }
    {
      const LabelMap lm = random_label_grid(rng, cfg.width, cfg.height, static_cast<int>(cfg.num_classes), true);
      const ComponentSet cs = supervision_components(lm);
      const SgrParameters params = SgrParameters::init(cfg, rng());
      const Tensor image = random_tensor(rng, {n, 3}, 0.0, 1.0);
      Assignment a;
      {
        NoGradScope no_grad;
        a = match_regions(sgr_forward(image, params, cfg).masks, cs, weights.rho, cfg.active);
      }
      auto f = [&] {
        const auto out = sgr_forward(image, params, cfg);
        return compute_losses(out, lm, cs, weights, cfg.active, weights.beta, &a).total;
      };
      check("sgr_forward+total_loss", f, params.all());
    }
  }
  return summary;
}

inline SuiteResult gradient_suite(const GradSuiteOptions& opt = {}) {
  detail::Stopwatch clock;
  SuiteResult r{"gradient suite", true, {}, 0.0};
  std::ostringstream oss;
  oss.precision(3);
  for (const auto& s : gradient_checks(opt)) {
    r.passed = r.passed && s.passed();
    oss << s.name << "=" << s.worst.max_relative_error;
    if (!s.passed())
      oss << " (" << s.failures << "/" << s.instances << " instances fail; failing elements have |grad| <= "
          << s.largest_failing_grad << ", difference resolution " << s.resolution(opt.step) << ")";
    oss << " ";
  }
  r.seconds = clock.seconds();
  if (r.seconds >= opt.budget_seconds) {
    r.passed = false;
    oss << "over time budget ";
  }
  oss << "instances=" << opt.instances << " step=" << opt.step << " tol=" << opt.tol;
  r.detail = oss.str();
  return r;
}

inline SuiteResult hungarian_suite(std::size_t trials = 1000, std::uint64_t seed = 11, double budget = 30.0) {
  detail::Stopwatch clock;
  std::mt19937_64 rng(seed);
  std::size_t mismatches = 0, integer_cases = 0;
  std::ostringstream first_bad;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t rows = 1 + rng() % 7;
    const std::size_t cols = 1 + rng() % rows;
    const bool integer = (t % 2) == 0;  // integer costs force ties
    integer_cases += integer;
    std::vector<double> v(rows * cols);
    for (auto& x : v)
      x = integer ? static_cast<double>(rng() % 10) : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const CostMatrix cost(rows, cols, v);
    const Assignment a = hungarian_match(cost);
    std::vector<char> seen(rows, 0);
    bool valid = a.pairs.size() == cols;
    for (const auto& [r, c] : a.pairs) {
      valid = valid && r < rows && !seen[r];
      if (r < rows) seen[r] = 1;
    }
    const double got = assignment_cost(cost, a), want = exhaustive_assignment_min(cost);
    if (!valid || got != want) {
      if (mismatches++ == 0) first_bad << "trial " << t << " " << rows << "x" << cols << " got " << got << " want " << want;
    }
  }
  SuiteResult r{"hungarian oracle", mismatches == 0, {}, clock.seconds()};
  if (r.seconds >= budget) r.passed = false;
  std::ostringstream oss;
  oss << trials << " matrices up to 7x7 (" << integer_cases << " integer-valued), mismatches=" << mismatches;
  if (mismatches) oss << ", first: " << first_bad.str();
  r.detail = oss.str();
  return r;
}

inline SuiteResult matching_suite(std::size_t trials = 500, std::uint64_t seed = 13) {
  detail::Stopwatch clock;
  std::mt19937_64 rng(seed);
  std::size_t uncovered = 0, wrong_count = 0, duplicate = 0, nondeterministic = 0, scale_variant = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = 2 + rng() % 15;       // K in [2, 16]
    const std::size_t l = 1 + rng() % (k - 1);  // K > L >= 1
    const std::size_t c = 1 + rng() % l;        // C <= L
    const std::size_t w = 8, h = 8;
    const Tensor masks = random_tensor(rng, {w * h, k}, 0.01, 0.99);
    const ComponentSet cs = random_partition(rng, w, h, c);
    const Assignment a = match_regions(masks, cs, 1.0, l);
    std::vector<std::size_t> per_comp(c, 0);
    for (const auto& [r, j] : a.pairs) ++per_comp[j];
    if (std::count(per_comp.begin(), per_comp.end(), 0u) > 0) ++uncovered;
    if (a.pairs.size() != std::min(l, k)) ++wrong_count;
    auto regions = a.matched_regions();
    if (std::adjacent_find(regions.begin(), regions.end()) != regions.end()) ++duplicate;
    if (match_regions(masks, cs, 1.0, l).pairs != a.pairs) ++nondeterministic;
    CostMatrix cost = build_cost_matrix(masks, cs, 1.0);
    const double factor = std::uniform_real_distribution<double>(1e-3, 1e3)(rng);
    CostMatrix scaled = cost;
    for (auto& v : scaled.values) v *= factor;
    if (match_cost(scaled, l).pairs != match_cost(cost, l).pairs) ++scale_variant;
  }
  const bool ok = uncovered + wrong_count + duplicate + nondeterministic + scale_variant == 0;
  std::ostringstream oss;
  oss << trials << " instances: uncovered=" << uncovered << " wrong_count=" << wrong_count
      << " duplicate_region=" << duplicate << " nondeterministic=" << nondeterministic
      << " scale_variant=" << scale_variant;
  return {"matching invariants", ok, oss.str(), clock.seconds()};
}

inline ComponentSet sized_components(std::vector<std::size_t> areas, std::size_t w = 32, std::size_t h = 32) {
  ComponentSet cs{w, h, {}};
  std::size_t next = 0;
  for (auto a : areas) {
    Component c;
    c.class_id = 1;
    c.mask.assign(w * h, 0);
    for (std::size_t i = 0; i < a; ++i) c.mask[next++] = 1;
    c.area = a;
    cs.components.push_back(std::move(c));
  }
  return cs;
}

// Square blocks of the given sides, one per class, spaced apart on a void grid.
inline LabelMap square_blocks(const std::vector<std::size_t>& sides, std::size_t w, std::size_t h) {
  LabelMap lm{w, h, std::vector<int>(w * h, -1), {}};  // void background
  std::size_t x0 = 1;
  int cls = 1;
  for (auto s : sides) {
    for (std::size_t y = 1; y <= s; ++y)
      for (std::size_t x = x0; x < x0 + s; ++x) lm.class_ids[y * w + x] = cls;
    x0 += s + 2;
    ++cls;
  }
  return lm;
}

inline SuiteResult components_suite(std::size_t trials = 500, std::uint64_t seed = 17) {
  detail::Stopwatch clock;
  std::mt19937_64 rng(seed);
  std::size_t raw_mismatch = 0, filtered_mismatch = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const int classes = 2 + static_cast<int>(rng() % 3);
    const LabelMap lm = random_label_grid(rng, 16, 16, classes, t % 2 == 1);
    if (canonical(extract_components(lm)) != flood_fill_components(lm)) ++raw_mismatch;
    if (canonical(supervision_components(lm)) != filtered_components(lm)) ++filtered_mismatch;
  }
  // Threshold boundary: 5% of 100 is 5, inclusive keep.
  const bool drop4 = drop_small_components(sized_components({100, 4})).size() == 1;
  const bool keep5 = drop_small_components(sized_components({100, 5})).size() == 2;
  // The same rule after opening; blocks below 3x3 cannot survive it, so the
  // boundary is probed with 9-pixel blocks next to 180- and 200-pixel ones.
  LabelMap keep_map = square_blocks({3}, 40, 40), drop_map = square_blocks({3}, 40, 40);
  for (std::size_t y = 20; y < 30; ++y)
    for (std::size_t x = 0; x < 18; ++x) keep_map.class_ids[y * 40 + x] = 2;  // 180 pixels
  for (std::size_t y = 20; y < 30; ++y)
    for (std::size_t x = 0; x < 20; ++x) drop_map.class_ids[y * 40 + x] = 2;  // 200 pixels
  auto count_class = [](const ComponentSet& cs, int cls) {
    return std::count_if(cs.components.begin(), cs.components.end(), [&](const Component& c) { return c.class_id == cls; });
  };
  const bool keep9 = count_class(supervision_components(keep_map), 1) == 1;
  const bool drop9 = count_class(supervision_components(drop_map), 1) == 0;
  const bool ok = raw_mismatch == 0 && filtered_mismatch == 0 && drop4 && keep5 && keep9 && drop9;
  std::ostringstream oss;
  oss << trials << " 16x16 grids: raw_mismatch=" << raw_mismatch << " filtered_mismatch=" << filtered_mismatch
      << "; {100,4} drops=" << drop4 << " {100,5} keeps=" << keep5 << " {180,9} keeps=" << keep9
      << " {200,9} drops=" << drop9;
  return {"connected-components oracle", ok, oss.str(), clock.seconds()};
}

inline SuiteResult metrics_suite(std::size_t trials = 500, std::uint64_t seed = 19) {
  detail::Stopwatch clock;
  std::mt19937_64 rng(seed);
  std::ostringstream oss;
  bool ok = true;

  // One-hot and two-bin uniform entropies.
  const std::vector<double> onehot{0.0, 1.0, 0.0}, uniform2{0.5, 0.5};
  const double e0 = entropy(onehot), e2 = entropy(uniform2);
  const bool onehot_ok = e0 == 0.0;
  const bool uniform_ok = std::abs(e2 - std::log(2.0)) <= 1e-12;
  ok = ok && onehot_ok && uniform_ok;
  oss << "onehot_entropy=" << e0 << " uniform2_err=" << std::abs(e2 - std::log(2.0));

  // Class entropy <= instance entropy over the same pixels.
  std::size_t refine_violations = 0, diversity_violations = 0, scale_violations = 0;
  double worst_scale = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t w = 8, h = 8, n = w * h, k = 1 + rng() % 6;
    LabelMap lm = random_label_grid(rng, w, h, 3, t % 2 == 0);
    lm.instance_ids.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const bool thing = lm.class_ids[i] > 0 || (rng() % 4 == 0);
      if (thing) lm.instance_ids[i] = lm.class_ids[i] * 10 + 1 + static_cast<int>(rng() % 3);
    }
    if (present_labels(instance_labels(lm)).empty()) lm.instance_ids[0] = lm.class_ids[0] * 10 + 1;
    const Tensor masks = random_tensor(rng, {n, k}, 0.0, 1.0);
    std::vector<int> things_class(n, -1);
    for (std::size_t i = 0; i < n; ++i)
      if (lm.instance_ids[i] > 0) things_class[i] = lm.class_ids[i];
    const auto cls_h = token_histograms(masks, things_class);
    const auto inst_h = token_histograms(masks, instance_labels(lm));
    for (std::size_t j = 0; j < k; ++j)
      if (entropy(cls_h[j].probs) > entropy(inst_h[j].probs) + 1e-12) ++refine_violations;

    // Diversity vanishes exactly when every histogram is the same.
    std::vector<TokenHistogram> hs(2 + rng() % 5);
    const std::size_t bins = 1 + rng() % 5;
    const bool identical = t % 2 == 0;
    for (auto& hh : hs) {
      hh.probs.resize(bins);
      if (identical && &hh != &hs.front()) {
        hh.probs = hs.front().probs;
        continue;
      }
      double total = 0.0;
      for (auto& p : hh.probs) total += (p = std::uniform_real_distribution<double>(0.01, 1.0)(rng));
      for (auto& p : hh.probs) p /= total;
    }
    bool same = true;
    for (const auto& hh : hs) same = same && hh.probs == hs.front().probs;
    if ((image_diversity(hs) == 0.0) != same) ++diversity_violations;

    // Mask scaling leaves histograms unchanged.
    const double factor = std::uniform_real_distribution<double>(1e-3, 1e3)(rng);
    const auto scaled_h = token_histograms(scale(masks, factor), lm.class_ids);
    const auto base_h = token_histograms(masks, lm.class_ids);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t b = 0; b < base_h[j].probs.size(); ++b) {
        const double d = std::abs(scaled_h[j].probs[b] - base_h[j].probs[b]);
        worst_scale = std::max(worst_scale, d);
        if (d > 1e-12) ++scale_violations;
      }
  }
  ok = ok && refine_violations == 0 && diversity_violations == 0 && scale_violations == 0;
  oss << "; " << trials << " trials: refine_violations=" << refine_violations
      << " diversity_iff_violations=" << diversity_violations << " scale_violations=" << scale_violations
      << " (worst " << worst_scale << ")";
  return {"metrics identities", ok, oss.str(), clock.seconds()};
}

inline SuiteResult loss_spot_suite() {
  detail::Stopwatch clock;
  const std::size_t n = 36;
  const Tensor half = Tensor::full({n}, 0.5);
  std::vector<double> t(n, 0.0);
  for (std::size_t i = 0; i < n; i += 3) t[i] = 1.0;
  const double focal = focal_loss(half, Tensor({n}, t)).item();
  const double focal_err = std::abs(focal - 0.25 * std::log(2.0));

  std::vector<double> pred(n, 0.0), target(n, 0.0);
  for (std::size_t i = 0; i < 20; ++i) pred[i] = 0.5, target[i] = 1.0;
  const double dice = dice_loss(Tensor({n}, pred), Tensor({n}, target)).item();
  const double dice_err = std::abs(dice - 0.2);

  const double base = 0.004;
  const double lr = lr_schedule(1000, 2000, base, 0.9);
  const double lr_err = std::abs(lr - base * std::pow(0.5, 0.9));

  const bool ok = focal_err <= 1e-9 && dice_err <= 1e-6 && lr_err <= 1e-12;
  std::ostringstream oss;
  oss << "focal_err=" << focal_err << " (tol 1e-9) dice_err=" << dice_err << " (tol 1e-6) lr_err=" << lr_err
      << " (tol 1e-12)";
  return {"loss spot values", ok, oss.str(), clock.seconds()};
}

struct ToyRunOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t steps = 2000;
  double min_accuracy = 0.85;
  double max_loss_ratio = 0.5;
  std::size_t final_window = 100;  // final loss = mean of the last steps
  double budget_seconds = 600.0;
};

struct ToySeedResult {
  std::uint64_t seed = 0;
  double initial_loss = 0.0, final_loss = 0.0, accuracy = 0.0;
  double s_class_sup = 0.0, s_class_off = 0.0, d_class_sup = 0.0, d_class_off = 0.0;
  bool passed = false;
};

inline double tail_mean(const std::vector<double>& v, std::size_t window) {
  const std::size_t w = std::min(window, v.size());
  return std::accumulate(v.end() - static_cast<long>(w), v.end(), 0.0) / static_cast<double>(w);
}

// Supervised and beta = 0 runs per seed on the default toy configuration.
inline SuiteResult toy_run_suite(const ToyRunOptions& opt = {}, std::vector<ToySeedResult>* per_seed = nullptr) {
  detail::Stopwatch clock;
  TrainConfig base;
  base.steps = opt.steps;
  const auto train_set = training_scenes(base);
  const auto eval_set = evaluation_scenes(base);
  bool ok = true;
  std::ostringstream oss;
  oss.precision(4);
  for (auto seed : opt.seeds) {
    ToySeedResult s;
    s.seed = seed;
    TrainConfig sup = base, off = base;
    sup.seed = off.seed = seed;
    off.token_supervision = false;
    const auto run_sup = train(sup, train_set);
    const auto eval_sup = evaluate(run_sup.params, sup.model, eval_set);
    const auto run_off = train(off, train_set);
    const auto eval_off = evaluate(run_off.params, off.model, eval_set);
    s.initial_loss = run_sup.report.losses.front();
    s.final_loss = tail_mean(run_sup.report.losses, opt.final_window);
    s.accuracy = eval_sup.pixel_accuracy;
    s.s_class_sup = eval_sup.metrics->s_class;
    s.d_class_sup = eval_sup.metrics->d_class;
    s.s_class_off = eval_off.metrics->s_class;
    s.d_class_off = eval_off.metrics->d_class;
    const double off_ratio = tail_mean(run_off.report.losses, opt.final_window) / run_off.report.losses.front();
    s.passed = s.final_loss <= opt.max_loss_ratio * s.initial_loss && off_ratio <= opt.max_loss_ratio &&
               s.accuracy >= opt.min_accuracy && eval_off.pixel_accuracy >= opt.min_accuracy &&
               s.s_class_sup < s.s_class_off && s.d_class_sup > s.d_class_off;
    ok = ok && s.passed;
    oss << "[seed " << seed << (s.passed ? " ok" : " FAIL") << ": loss " << s.initial_loss << "->" << s.final_loss
        << " (beta=0 ratio " << off_ratio << "), acc " << s.accuracy << "/" << eval_off.pixel_accuracy
        << ", s_class " << s.s_class_sup << "<" << s.s_class_off << ", d_class " << s.d_class_sup << ">"
        << s.d_class_off << "] ";
    if (per_seed) per_seed->push_back(s);
  }
  SuiteResult r{"end-to-end toy run", ok, oss.str(), clock.seconds()};
  if (r.seconds >= opt.budget_seconds) {
    r.passed = false;
    r.detail += "over time budget";
  }
  return r;
}

}  // namespace sgr::oracle
