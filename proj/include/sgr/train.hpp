#pragma once

// Training loop (momentum SGD with a polynomial schedule), evaluation and
// mask rendering.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgr/components.hpp"
#include "sgr/losses.hpp"
#include "sgr/matching.hpp"
#include "sgr/metrics.hpp"
#include "sgr/pgm.hpp"
#include "sgr/sgr_net.hpp"
#include "sgr/synthdata.hpp"
#include "sgr/tensor.hpp"

namespace sgr {

// base * (1 - step/total)^power.
inline double lr_schedule(std::size_t step, std::size_t total, double base, double power = 0.9) {
  if (total == 0 || step >= total) throw std::invalid_argument("lr_schedule: step must lie in [0, total)");
  return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

struct TrainConfig {
  SgrConfig model;
  LossWeights weights;
  double lr = 0.002;
  double momentum = 0.9;
  std::size_t steps = 2000;
  double poly_power = 0.9;
  std::uint64_t seed = 0;
  bool token_supervision = true;
  std::size_t train_scenes = 200;
  std::size_t eval_scenes = 50;
  std::uint64_t train_scene_seed = 1000;  // first scene seed of each split
  std::uint64_t eval_scene_seed = 50000;
  SceneSpec scenes;

  void validate() const {
    model.validate();
    weights.validate();
    if (!(lr > 0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("TrainConfig: momentum must lie in [0, 1)");
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be at least 1");
  }

  // Concept-loss weight actually applied.
  double effective_beta() const { return token_supervision ? weights.beta : 0.0; }
};

// Scene spec matching the model grid and class count.
inline SceneSpec scene_spec(const TrainConfig& cfg, std::uint64_t first_seed) {
  SceneSpec spec = cfg.scenes;
  spec.width = cfg.model.width;
  spec.height = cfg.model.height;
  spec.num_classes = static_cast<int>(cfg.model.num_classes);
  spec.seed = first_seed;
  return spec;
}

inline std::vector<Scene> training_scenes(const TrainConfig& cfg) {
  return generate_dataset(scene_spec(cfg, cfg.train_scene_seed), cfg.train_scenes);
}

inline std::vector<Scene> evaluation_scenes(const TrainConfig& cfg) {
  return generate_dataset(scene_spec(cfg, cfg.eval_scene_seed), cfg.eval_scenes);
}

struct LossParts {
  Tensor total;
  Tensor ce;
  Tensor concept_term;  // undefined when supervision is off or nothing matched
  Assignment assignment;
};

// total = CE + beta * concept for one image. Matching runs on the
// detached masks unless a fixed assignment is supplied.
inline LossParts compute_losses(const SgrOutput& out, const LabelMap& labels, const ComponentSet& components,
                                const LossWeights& w, std::size_t active, double beta,
                                const Assignment* fixed = nullptr) {
  LossParts parts;
  parts.ce = pixel_cross_entropy(out.logits, labels.class_ids);
  if (beta == 0.0 || components.empty()) {
    parts.total = parts.ce;
    return parts;
  }
  parts.assignment = fixed ? *fixed : match_regions(out.masks, components, w.rho, active, w.focal_gamma);
  parts.concept_term = concept_loss(out.masks, components, parts.assignment, w);
  parts.total = total_loss(parts.ce, parts.concept_term, beta);
  return parts;
}

struct EvalResult {
  double pixel_accuracy = 0.0;
  std::vector<double> class_iou;  // NaN where a class is absent from both prediction and truth
  double mean_iou = 0.0;
};

// Pixel accuracy and IoU from per-image logits ([N, classes]).
inline EvalResult score_predictions(const std::vector<Tensor>& logits, const std::vector<const LabelMap*>& labels,
                                    std::size_t num_classes) {
  if (logits.size() != labels.size()) throw std::invalid_argument("score_predictions: size mismatch");
  std::vector<double> inter(num_classes, 0.0), uni(num_classes, 0.0);
  double correct = 0.0, total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& lg = logits[i];
    const auto& truth = labels[i]->class_ids;
    for (std::size_t n = 0; n < truth.size(); ++n) {
      if (truth[n] < 0) continue;
      std::size_t best = 0;
      for (std::size_t c = 1; c < num_classes; ++c)
        if (lg.at(n, c) > lg.at(n, best)) best = c;
      const auto t = static_cast<std::size_t>(truth[n]);
      total += 1.0;
      if (best == t) {
        correct += 1.0;
        inter[t] += 1.0;
        uni[t] += 1.0;
      } else {
        uni[t] += 1.0;
        uni[best] += 1.0;
      }
    }
  }
  EvalResult r;
  r.pixel_accuracy = total > 0 ? correct / total : 0.0;
  double iou_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (uni[c] == 0) {
      r.class_iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    r.class_iou.push_back(inter[c] / uni[c]);
    iou_sum += r.class_iou.back();
    ++counted;
  }
  r.mean_iou = counted ? iou_sum / static_cast<double>(counted) : 0.0;
  return r;
}

struct RunReport {
  std::vector<double> losses;
  std::vector<double> ce_losses;
  std::vector<double> concept_losses;
  double pixel_accuracy = 0.0;
  std::vector<double> class_iou;
  double mean_iou = 0.0;
  std::optional<MetricsReport> metrics;
  double wall_seconds = 0.0;

  nlohmann::json to_json(bool include_images = false) const {
    nlohmann::json j;
    j["steps"] = losses.size();
    j["losses"] = losses;
    j["pixel_accuracy"] = pixel_accuracy;
    nlohmann::json iou = nlohmann::json::array();
    for (double v : class_iou) iou.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    j["class_iou"] = iou;
    j["mean_iou"] = mean_iou;
    j["wall_seconds"] = wall_seconds;
    if (metrics) {
      auto m = metrics->to_json();
      if (!include_images) m.erase("images");
      j["metrics"] = m;
    }
    return j;
  }
};

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

struct TrainResult {
  SgrParameters params;
  RunReport report;
};

// One image per step, cycling through `data` in order.
inline TrainResult train(const TrainConfig& cfg, const std::vector<Scene>& data) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const auto started = std::chrono::steady_clock::now();
  TrainResult result{SgrParameters::init(cfg.model, cfg.seed), {}};
  const double beta = cfg.effective_beta();

  std::vector<ComponentSet> components;
  components.reserve(data.size());
  for (const auto& scene : data)
    components.push_back(beta > 0 ? supervision_components(scene.labels) : ComponentSet{});

  auto params = result.params.all();
  std::vector<std::vector<double>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.size(), 0.0);

  Tape tape;
  std::size_t over_budget = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t idx = step % data.size();
    const Scene& scene = data[idx];
    LossParts parts;
    {
      TapeScope scope(tape);
      const auto out = sgr_forward(scene.image_tensor(), result.params, cfg.model);
      parts = compute_losses(out, scene.labels, components[idx], cfg.weights, cfg.model.active, beta);
      const double value = parts.total.item();
      if (!std::isfinite(value)) {
        std::ostringstream oss;
        oss << "train: non-finite loss at step " << step << " (scene seed " << scene.seed
            << ", ce=" << parts.ce.item()
            << ", concept=" << (parts.concept_term.defined() ? parts.concept_term.item() : 0.0)
            << ", components=" << components[idx].size() << ")";
        throw std::runtime_error(oss.str());
      }
      tape.backward(parts.total);
    }
    if (parts.assignment.over_budget) ++over_budget;
    result.report.losses.push_back(parts.total.item());
    result.report.ce_losses.push_back(parts.ce.item());
    result.report.concept_losses.push_back(parts.concept_term.defined() ? parts.concept_term.item() : 0.0);

    const double lr = lr_schedule(step, cfg.steps, cfg.lr, cfg.poly_power);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto values = params[i].mutable_data();
      auto grad = params[i].grad();
      if (grad.empty()) continue;
      auto& v = velocity[i];
      for (std::size_t e = 0; e < values.size(); ++e) {
        v[e] = cfg.momentum * v[e] + grad[e];
        values[e] -= lr * v[e];
      }
      params[i].zero_grad();
    }
  }
  if (over_budget)
    std::cerr << "warning: " << over_budget << " of " << cfg.steps
              << " steps had more components than active regions; all components were still matched\n";
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

inline RunReport evaluate(const SgrParameters& params, const SgrConfig& cfg, const std::vector<Scene>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const auto started = std::chrono::steady_clock::now();
  NoGradScope no_grad;
  std::vector<Tensor> logits;
  std::vector<const LabelMap*> labels;
  std::vector<ImageMetrics> images;
  for (const auto& scene : data) {
    const auto out = sgr_forward(scene.image_tensor(), params, cfg);
    logits.push_back(out.logits);
    labels.push_back(&scene.labels);
    images.push_back(image_metrics(out.masks, scene.labels, "seed-" + std::to_string(scene.seed)));
  }
  const auto scores = score_predictions(logits, labels, cfg.num_classes);
  RunReport report;
  report.pixel_accuracy = scores.pixel_accuracy;
  report.class_iou = scores.class_iou;
  report.mean_iou = scores.mean_iou;
  report.metrics = metrics_report(std::move(images));
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// One 8-bit PGM per mask column, values round(255 * P).
inline std::vector<std::filesystem::path> render_masks(const Tensor& masks, std::size_t width, std::size_t height,
                                                       const std::filesystem::path& out_dir,
                                                       const std::string& prefix = "mask") {
  detail::require(masks.rank() == 2 && masks.dim(0) == width * height, "render_masks",
                  "masks " + shape_string(masks.shape()) + " do not match the grid");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  const std::size_t k = masks.dim(1);
  std::vector<std::filesystem::path> written;
  for (std::size_t j = 0; j < k; ++j) {
    GrayImage img{width, height, 255, std::vector<int>(width * height)};
    for (std::size_t n = 0; n < width * height; ++n) img.pixels[n] = quantize_unit(masks[n * k + j]);
    std::ostringstream name;
    name << prefix << '_' << (j < 10 ? "0" : "") << j << ".pgm";
    written.push_back(out_dir / name.str());
    write_pgm(written.back(), img);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Parameter files

inline nlohmann::json config_to_json(const SgrConfig& c) {
  return {{"width", c.width},         {"height", c.height},     {"channels", c.channels},
          {"concepts", c.concepts},   {"active", c.active},     {"token_dim", c.token_dim},
          {"num_layers", c.num_layers}, {"num_heads", c.num_heads}, {"num_classes", c.num_classes}};
}

inline SgrConfig config_from_json(const nlohmann::json& j) {
  SgrConfig c;
  c.width = j.at("width");
  c.height = j.at("height");
  c.channels = j.at("channels");
  c.concepts = j.at("concepts");
  c.active = j.at("active");
  c.token_dim = j.at("token_dim");
  c.num_layers = j.at("num_layers");
  c.num_heads = j.at("num_heads");
  c.num_classes = j.at("num_classes");
  c.validate();
  return c;
}

inline void save_parameters(const std::filesystem::path& path, const SgrConfig& cfg, const SgrParameters& params) {
  nlohmann::json j;
  j["config"] = config_to_json(cfg);
  j["tensors"] = nlohmann::json::array();
  for (const auto& t : params.all()) j["tensors"].push_back({{"shape", t.shape()}, {"data", t.values()}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump();
}

inline std::pair<SgrConfig, SgrParameters> load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  const SgrConfig cfg = config_from_json(j.at("config"));
  SgrParameters params = SgrParameters::init(cfg, 0);
  auto tensors = params.all();
  const auto& stored = j.at("tensors");
  if (stored.size() != tensors.size()) throw std::runtime_error(path.string() + ": tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto shape = stored[i].at("shape").get<Shape>();
    const auto data = stored[i].at("data").get<std::vector<double>>();
    if (shape != tensors[i].shape() || data.size() != tensors[i].size())
      throw std::runtime_error(path.string() + ": tensor " + std::to_string(i) + " has the wrong shape");
    std::copy(data.begin(), data.end(), tensors[i].mutable_data().begin());
  }
  return {cfg, params};
}

}  // namespace sgr
