// sgr: train, evaluate and inspect the semantic global reasoning model on
// procedural scenes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>

#include "CLI11.hpp"
#include "json.hpp"
#include "sgr/config.hpp"
#include "sgr/oracles.hpp"
#include "sgr/synthdata.hpp"
#include "sgr/train.hpp"

namespace fs = std::filesystem;
using namespace sgr;

namespace {

struct Flags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, l, d, steps;
  std::optional<double> beta, rho, gamma, lr;
  bool no_token_supervision = false;
  std::optional<std::string> out;
  std::optional<std::string> params;
  std::uint64_t scene_seed = 50000;
  std::size_t instances = 100;
};

void add_run_flags(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config, "flat key=value config file");
  app.add_option("--seed", f.seed, "parameter initialization seed");
  app.add_option("--k", f.k, "concept bank size");
  app.add_option("--l", f.l, "active regions per image");
  app.add_option("--d", f.d, "token width");
  app.add_option("--beta", f.beta, "concept loss weight");
  app.add_option("--rho", f.rho, "dice weight");
  app.add_option("--gamma", f.gamma, "pairwise cosine weight");
  app.add_option("--steps", f.steps, "training steps");
  app.add_option("--lr", f.lr, "base learning rate");
  app.add_flag("--no-token-supervision", f.no_token_supervision, "train with beta = 0");
  app.add_option("--out", f.out, "output directory");
}

// Config file first, then command-line flags.
RunSettings resolve(const Flags& f) {
  RunSettings s;
  if (f.config) apply_settings(s, read_config_file(*f.config));
  KeyValues kv;
  auto put = [&kv](const char* key, const auto& v) {
    if (v) {
      std::ostringstream o;
      o.precision(17);
      o << *v;
      kv[key] = o.str();
    }
  };
  put("seed", f.seed);
  put("k", f.k);
  put("l", f.l);
  put("d", f.d);
  put("steps", f.steps);
  put("beta", f.beta);
  put("rho", f.rho);
  put("gamma", f.gamma);
  put("lr", f.lr);
  put("out", f.out);
  if (f.no_token_supervision) kv["no-token-supervision"] = "true";
  apply_settings(s, kv);
  s.train.validate();
  return s;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::pair<SgrConfig, SgrParameters> load_model(const Flags& f, const RunSettings& s) {
  const fs::path path = f.params ? fs::path(*f.params) : s.out / "params.json";
  auto loaded = load_parameters(path);
  const auto& m = loaded.first;
  if (m.width != s.train.model.width || m.height != s.train.model.height ||
      m.num_classes != s.train.model.num_classes)
    throw std::runtime_error(path.string() + ": grid or class count differs from the run settings");
  return loaded;
}

int cmd_train(const Flags& f) {
  const RunSettings s = resolve(f);
  fs::create_directories(s.out);
  {
    std::ofstream cfg(s.out / "config.txt");
    cfg << format_settings(s);
  }
  std::cerr << "training " << s.train.steps << " steps (beta=" << s.train.effective_beta() << ", seed "
            << s.train.seed << ")\n";
  auto result = train(s.train, training_scenes(s.train));
  const auto eval = evaluate(result.params, s.train.model, evaluation_scenes(s.train));
  RunReport report = eval;
  report.losses = result.report.losses;
  report.ce_losses = result.report.ce_losses;
  report.concept_losses = result.report.concept_losses;
  report.wall_seconds = result.report.wall_seconds + eval.wall_seconds;
  save_parameters(s.out / "params.json", s.train.model, result.params);
  write_loss_csv(s.out / "loss.csv", report.losses);
  write_json(s.out / "run_report.json", report.to_json());
  std::printf("loss %.6f -> %.6f  pixel_accuracy %.4f  mean_iou %.4f  s_class %.4f  d_class %.4f\n",
              report.losses.front(), report.losses.back(), report.pixel_accuracy, report.mean_iou,
              report.metrics->s_class, report.metrics->d_class);
  std::printf("wrote %s\n", s.out.string().c_str());
  return 0;
}

int cmd_eval(const Flags& f, bool metrics_only) {
  const RunSettings s = resolve(f);
  fs::create_directories(s.out);
  const auto [model, params] = load_model(f, s);
  const auto report = evaluate(params, model, evaluation_scenes(s.train));
  if (metrics_only) {
    write_json(s.out / "metrics_report.json", report.metrics->to_json());
    std::printf("s_class %.6f  d_class %.6f  s_instance %.6f  d_instance %.6f\n", report.metrics->s_class,
                report.metrics->d_class, report.metrics->s_instance, report.metrics->d_instance);
  } else {
    write_json(s.out / "eval_report.json", report.to_json());
    std::printf("pixel_accuracy %.4f  mean_iou %.4f\n", report.pixel_accuracy, report.mean_iou);
  }
  return 0;
}

int cmd_render(const Flags& f) {
  const RunSettings s = resolve(f);
  SceneSpec spec = scene_spec(s.train, f.scene_seed);
  const Scene scene = generate_scene(spec);
  const fs::path dir = s.out / ("render_" + std::to_string(f.scene_seed));
  export_scene_pgm(scene, dir, "scene");
  SgrConfig model = s.train.model;
  SgrParameters params;
  if (f.params || fs::exists(s.out / "params.json")) {
    std::tie(model, params) = load_model(f, s);
  } else {
    std::cerr << "no trained parameters found; rendering masks of a freshly initialized model\n";
    params = SgrParameters::init(model, s.train.seed);
  }
  NoGradScope no_grad;
  const auto out = sgr_forward(scene.image_tensor(), params, model);
  const auto files = render_masks(out.masks, model.width, model.height, dir);
  std::printf("wrote %zu masks and scene images to %s\n", files.size(), dir.string().c_str());
  return 0;
}

int cmd_gradcheck(const Flags& f) {
  oracle::GradSuiteOptions opt;
  opt.instances = f.instances;
  opt.budget_seconds = 1e9;
  if (f.seed) opt.seed = *f.seed;
  bool ok = true;
  for (const auto& op : oracle::gradient_checks(opt)) {
    ok = ok && op.passed();
    std::printf("%-24s %s worst=%.3e failures=%zu/%zu largest_failing_grad=%.3e\n", op.name.c_str(),
                op.passed() ? "pass" : "FAIL", op.worst.max_relative_error, op.failures, op.instances,
                op.largest_failing_grad);
  }
  return ok ? 0 : 1;
}

int cmd_oracle() {
  bool ok = true;
  for (const auto& r : {oracle::hungarian_suite(), oracle::matching_suite(), oracle::components_suite(),
                        oracle::metrics_suite(), oracle::loss_spot_suite()}) {
    ok = ok && r.passed;
    std::printf("%s %s [%.2fs] %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic global reasoning on procedural scenes"};
  app.require_subcommand(1);
  Flags f;

  auto* train_cmd = app.add_subcommand("train", "train a model and write params, loss curve and run report");
  auto* eval_cmd = app.add_subcommand("eval", "pixel accuracy and IoU of a trained model on held-out scenes");
  auto* metrics_cmd = app.add_subcommand("metrics", "interpretability metrics of a trained model");
  auto* render_cmd = app.add_subcommand("render", "write a scene and its region masks as PGM");
  auto* grad_cmd = app.add_subcommand("gradcheck", "central-difference checks of every loss and the full model");
  auto* oracle_cmd = app.add_subcommand("oracle", "brute-force oracle suites");

  for (auto* cmd : {train_cmd, eval_cmd, metrics_cmd, render_cmd}) add_run_flags(*cmd, f);
  for (auto* cmd : {eval_cmd, metrics_cmd, render_cmd})
    cmd->add_option("--params", f.params, "parameter file (default <out>/params.json)");
  render_cmd->add_option("--scene-seed", f.scene_seed, "seed of the scene to render");
  grad_cmd->add_option("--instances", f.instances, "random instances per operation");
  grad_cmd->add_option("--seed", f.seed, "instance seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(f);
    if (*eval_cmd) return cmd_eval(f, false);
    if (*metrics_cmd) return cmd_eval(f, true);
    if (*render_cmd) return cmd_render(f);
    if (*grad_cmd) return cmd_gradcheck(f);
    if (*oracle_cmd) return cmd_oracle();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
