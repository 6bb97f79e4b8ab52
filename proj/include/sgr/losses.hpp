#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgr/assignment.hpp"
#include "sgr/components.hpp"
#include "sgr/tensor.hpp"

namespace sgr {

struct LossWeights {
  double rho = 1.0;          // dice weight (matching cost and concept loss)
  double gamma = 0.25;       // pairwise cosine weight
  double beta = 0.25;        // concept loss weight in the total objective
  double focal_gamma = 2.0;  // focusing exponent

  void validate() const {
    if (rho < 0 || gamma < 0 || beta < 0 || focal_gamma < 0)
      throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
};

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kDiceEps = 1e-6;

inline Tensor binary_target(const std::vector<std::uint8_t>& mask) {
  std::vector<double> v(mask.begin(), mask.end());
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

// Mean over pixels of -(1 - p_t)^gamma * log(p_t).
inline Tensor focal_loss(const Tensor& pred, const Tensor& target, double focal_gamma = 2.0) {
  detail::require(pred.size() == target.size(), "focal_loss",
                  "shape mismatch " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  const Tensor p = reshape(clamp(pred, kProbClamp, 1.0 - kProbClamp), {pred.size()});
  // p_t = (1 - t) + (2t - 1) * p for binary t.
  std::vector<double> slope(target.size()), offset(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    slope[i] = 2.0 * target[i] - 1.0;
    offset[i] = 1.0 - target[i];
  }
  const Shape flat{target.size()};
  const Tensor pt = add(mul(p, Tensor(flat, std::move(slope))), Tensor(flat, std::move(offset)));
  const Tensor modulator = pow(add_scalar(scale(pt, -1.0), 1.0), focal_gamma);
  return scale(mean(mul(modulator, log(pt))), -1.0);
}

// 1 - (2 sum(p t) + eps) / (sum(p^2) + sum(t^2) + eps).
inline Tensor dice_loss(const Tensor& pred, const Tensor& target) {
  detail::require(pred.size() == target.size(), "dice_loss",
                  "shape mismatch " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  const Tensor numer = add_scalar(scale(dot(pred, target), 2.0), kDiceEps);
  const Tensor denom = add_scalar(add(dot(pred, pred), dot(target, target)), kDiceEps);
  return add_scalar(scale(mul(numer, pow(denom, -1.0)), -1.0), 1.0);
}

// Mean cosine similarity over unordered pairs of masks; 0 for fewer than two.
inline Tensor cosine_pair_loss(const std::vector<Tensor>& masks) {
  if (masks.empty()) throw std::invalid_argument("cosine_pair_loss: no masks");
  if (masks.size() < 2) return Tensor::scalar(0.0);
  std::vector<Tensor> inv_norms;
  inv_norms.reserve(masks.size());
  for (const auto& m : masks) {
    const Tensor sq = dot(m, m);
    if (!(sq.item() > 0.0)) throw DomainError("cosine_pair_loss", "zero-norm mask");
    inv_norms.push_back(pow(sq, -0.5));
  }
  Tensor total = Tensor::scalar(0.0);
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t k = i + 1; k < masks.size(); ++k, ++pairs)
      total = add(total, mul(dot(masks[i], masks[k]), mul(inv_norms[i], inv_norms[k])));
  return scale(total, 1.0 / static_cast<double>(pairs));
}

// Mean over pixels of -log softmax(logits)[label]. Void pixels (label < 0)
// are excluded from the mean.
inline Tensor pixel_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  detail::require_matrix(logits, "pixel_cross_entropy");
  detail::require(logits.dim(0) == labels.size(), "pixel_cross_entropy", "label count mismatch");
  const std::size_t classes = logits.dim(1);
  std::vector<double> onehot(logits.size(), 0.0);
  std::size_t counted = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0) continue;
    if (static_cast<std::size_t>(labels[n]) >= classes)
      throw std::out_of_range("pixel_cross_entropy: class id " + std::to_string(labels[n]) + " out of range");
    onehot[n * classes + static_cast<std::size_t>(labels[n])] = 1.0;
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("pixel_cross_entropy: no labeled pixels");
  const Tensor picked = dot(log_softmax(logits), Tensor(logits.shape(), std::move(onehot)));
  return scale(picked, -1.0 / static_cast<double>(counted));
}

// Union of the regions matched to each component, clamped into [0, 1]
// before focal and dice; cosine term penalizes overlap among those regions.
inline Tensor concept_loss(const Tensor& masks, const ComponentSet& cs, const Assignment& a,
                           const LossWeights& w) {
  detail::require_matrix(masks, "concept_loss");
  detail::require(masks.dim(0) == cs.width * cs.height, "concept_loss", "mask grid does not match components");
  detail::require(a.components == cs.size(), "concept_loss", "assignment built for a different component set");
  Tensor total = Tensor::scalar(0.0);
  const auto groups = a.regions_by_component();
  for (std::size_t j = 0; j < groups.size(); ++j) {
    if (groups[j].empty()) continue;
    std::vector<Tensor> cols;
    cols.reserve(groups[j].size());
    for (std::size_t r : groups[j]) cols.push_back(column(masks, r));
    Tensor uni = cols.front();
    for (std::size_t i = 1; i < cols.size(); ++i) uni = add(uni, cols[i]);
    uni = clamp(uni, 0.0, 1.0);
    const Tensor target = binary_target(cs.components[j].mask);
    total = add(total, focal_loss(uni, target, w.focal_gamma));
    total = add(total, scale(dice_loss(uni, target), w.rho));
    if (cols.size() > 1 && w.gamma > 0.0) total = add(total, scale(cosine_pair_loss(cols), w.gamma));
  }
  return total;
}

inline Tensor total_loss(const Tensor& ce, const Tensor& concept_term, double beta) {
  if (beta < 0) throw std::invalid_argument("total_loss: beta must be non-negative");
  if (beta == 0.0) return ce;
  return add(ce, scale(concept_term, beta));
}

}  // namespace sgr
