#pragma once

// Interpretability metrics over soft token masks. Every pixel votes for its
// ground-truth label with the weight the token's mask assigns it; the
// normalized votes form one histogram per token. Semantics is the mean
// histogram entropy (lower is purer) and diversity the mean across-token
// variance of the histogram bins (higher is more diverse).

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgr/components.hpp"
#include "sgr/tensor.hpp"

namespace sgr {

struct TokenHistogram {
  std::size_t token = 0;
  std::vector<int> labels;    // bins, ascending
  std::vector<double> probs;  // same length as labels, sums to 1
};

// Sorted distinct non-negative labels.
inline std::vector<int> present_labels(std::span<const int> labels) {
  std::vector<int> out;
  for (int l : labels)
    if (l >= 0) out.push_back(l);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// bin[l] = sum of mask over pixels labeled l / sum of mask over all labeled
// pixels. Pixels whose label is negative or absent from `present` are void.
inline TokenHistogram token_histogram(std::span<const double> mask, std::span<const int> labels,
                                      std::span<const int> present, std::size_t token = 0) {
  if (mask.size() != labels.size()) throw std::invalid_argument("token_histogram: mask/label size mismatch");
  TokenHistogram h;
  h.token = token;
  h.labels.assign(present.begin(), present.end());
  h.probs.assign(present.size(), 0.0);
  double total = 0.0;
  for (std::size_t n = 0; n < mask.size(); ++n) {
    if (labels[n] < 0) continue;
    auto it = std::lower_bound(h.labels.begin(), h.labels.end(), labels[n]);
    if (it == h.labels.end() || *it != labels[n]) continue;
    if (mask[n] < 0) throw std::invalid_argument("token_histogram: negative mask weight");
    h.probs[static_cast<std::size_t>(it - h.labels.begin())] += mask[n];
    total += mask[n];
  }
  if (!(total > 0.0)) throw std::domain_error("token_histogram: token has no mass on labeled pixels");
  for (auto& p : h.probs) p /= total;
  return h;
}

inline double entropy(std::span<const double> probs) {
  double e = 0.0;
  for (double p : probs)
    if (p > 0.0) e -= p * std::log(p);
  return e;
}

inline double image_semantics(const std::vector<TokenHistogram>& hists) {
  if (hists.empty()) return 0.0;
  double s = 0.0;
  for (const auto& h : hists) s += entropy(h.probs);
  return s / static_cast<double>(hists.size());
}

// Per-bin population variance across tokens, averaged over bins.
inline double image_diversity(const std::vector<TokenHistogram>& hists) {
  if (hists.size() < 2) {
    std::cerr << "warning: diversity needs at least two tokens; reporting 0\n";
    return 0.0;
  }
  const std::size_t bins = hists.front().probs.size();
  if (bins == 0) return 0.0;
  const double t = static_cast<double>(hists.size());
  double acc = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    // Deviations are taken from the first token so identical bins give 0 exactly.
    const double ref = hists.front().probs.at(b);
    double mu = 0.0;
    for (const auto& h : hists) mu += h.probs.at(b) - ref;
    mu /= t;
    double var = 0.0;
    for (const auto& h : hists) {
      const double dev = (h.probs[b] - ref) - mu;
      var += dev * dev;
    }
    acc += var / t;
  }
  return acc / static_cast<double>(bins);
}

inline double semantics_score(const std::vector<std::vector<TokenHistogram>>& per_image) {
  if (per_image.empty()) return 0.0;
  double s = 0.0;
  for (const auto& img : per_image) s += image_semantics(img);
  return s / static_cast<double>(per_image.size());
}

inline double diversity_score(const std::vector<std::vector<TokenHistogram>>& per_image) {
  if (per_image.empty()) return 0.0;
  double s = 0.0;
  for (const auto& img : per_image) s += image_diversity(img);
  return s / static_cast<double>(per_image.size());
}

// One histogram per column of `masks` ([N, K]).
inline std::vector<TokenHistogram> token_histograms(const Tensor& masks, std::span<const int> labels) {
  detail::require(masks.rank() == 2 && masks.dim(0) == labels.size(), "token_histograms",
                  "masks " + shape_string(masks.shape()) + " do not match label grid");
  const auto present = present_labels(labels);
  const std::size_t n = masks.dim(0), k = masks.dim(1);
  std::vector<TokenHistogram> out;
  std::vector<double> col(n);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = masks[i * k + j];
    out.push_back(token_histogram(col, labels, present, j));
  }
  return out;
}

// Instance bins: pixels with instance id 0 (stuff classes) are void.
inline std::vector<int> instance_labels(const LabelMap& labels) {
  if (!labels.has_instances()) throw std::invalid_argument("instance metrics require instance ids");
  std::vector<int> out(labels.instance_ids.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels.instance_ids[i] > 0 ? labels.instance_ids[i] : -1;
  return out;
}

struct ImageMetrics {
  std::string id;
  double s_class = 0.0, d_class = 0.0;
  double s_instance = 0.0, d_instance = 0.0;
  bool has_instances = false;
  std::vector<TokenHistogram> class_histograms, instance_histograms;
};

// (s_instance, d_instance) for one image.
inline std::pair<double, double> instance_metrics(const Tensor& masks, const LabelMap& labels) {
  const auto inst = instance_labels(labels);
  const auto hists = token_histograms(masks, inst);
  return {image_semantics(hists), image_diversity(hists)};
}

inline ImageMetrics image_metrics(const Tensor& masks, const LabelMap& labels, std::string id) {
  ImageMetrics m;
  m.id = std::move(id);
  m.class_histograms = token_histograms(masks, labels.class_ids);
  m.s_class = image_semantics(m.class_histograms);
  m.d_class = image_diversity(m.class_histograms);
  if (labels.has_instances()) {
    const auto inst = instance_labels(labels);
    if (!present_labels(inst).empty()) {
      m.has_instances = true;
      m.instance_histograms = token_histograms(masks, inst);
      m.s_instance = image_semantics(m.instance_histograms);
      m.d_instance = image_diversity(m.instance_histograms);
    }
  }
  return m;
}

struct MetricsReport {
  double s_class = 0.0, s_instance = 0.0, d_class = 0.0, d_instance = 0.0;
  std::vector<ImageMetrics> images;

  nlohmann::json to_json() const {
    auto hist_json = [](const std::vector<TokenHistogram>& hs) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& h : hs) arr.push_back({{"token", h.token}, {"labels", h.labels}, {"probs", h.probs}});
      return arr;
    };
    auto entropies = [](const std::vector<TokenHistogram>& hs) {
      std::vector<double> e;
      for (const auto& h : hs) e.push_back(entropy(h.probs));
      return e;
    };
    nlohmann::json j;
    j["s_class"] = s_class;
    j["s_instance"] = s_instance;
    j["d_class"] = d_class;
    j["d_instance"] = d_instance;
    j["images"] = nlohmann::json::array();
    for (const auto& img : images) {
      j["images"].push_back({{"id", img.id},
                             {"s_class", img.s_class},
                             {"d_class", img.d_class},
                             {"s_instance", img.s_instance},
                             {"d_instance", img.d_instance},
                             {"class_entropies", entropies(img.class_histograms)},
                             {"instance_entropies", entropies(img.instance_histograms)},
                             {"class_histograms", hist_json(img.class_histograms)},
                             {"instance_histograms", hist_json(img.instance_histograms)}});
    }
    return j;
  }
};

// Dataset means of the per-image scores; instance scores average only over
// images that contain instance-labeled pixels.
inline MetricsReport metrics_report(std::vector<ImageMetrics> images) {
  if (images.empty()) throw std::invalid_argument("metrics_report: empty dataset");
  MetricsReport r;
  std::size_t with_inst = 0;
  for (const auto& m : images) {
    r.s_class += m.s_class;
    r.d_class += m.d_class;
    if (m.has_instances) {
      r.s_instance += m.s_instance;
      r.d_instance += m.d_instance;
      ++with_inst;
    }
  }
  const double n = static_cast<double>(images.size());
  r.s_class /= n;
  r.d_class /= n;
  if (with_inst) {
    r.s_instance /= static_cast<double>(with_inst);
    r.d_instance /= static_cast<double>(with_inst);
  }
  r.images = std::move(images);
  return r;
}

}  // namespace sgr
