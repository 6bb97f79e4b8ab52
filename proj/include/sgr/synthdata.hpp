#pragma once

// Procedural scenes of rectangles and discs on a background, with class and
// instance ground truth. Class 0 is background; every scene holds one
// foreground class as two disjoint blobs in diagonally opposite quadrants.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgr/components.hpp"
#include "sgr/pgm.hpp"
#include "sgr/tensor.hpp"

namespace sgr {

struct SceneSpec {
  std::size_t width = 32;
  std::size_t height = 32;
  int num_classes = 4;
  int max_instances_per_class = 2;
  bool rectangles = true;
  bool discs = true;
  double noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (width < 12 || height < 12) throw std::invalid_argument("SceneSpec: grid must be at least 12x12");
    if (num_classes < 2) throw std::invalid_argument("SceneSpec: need background plus one class");
    if (max_instances_per_class < 1) throw std::invalid_argument("SceneSpec: max_instances_per_class < 1");
    if (!rectangles && !discs) throw std::invalid_argument("SceneSpec: empty shape palette");
    if (noise < 0) throw std::invalid_argument("SceneSpec: negative noise");
  }
};

struct Scene {
  std::uint64_t seed = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> image;  // [pixel][rgb]
  LabelMap labels;

  Tensor image_tensor() const { return Tensor({width * height, 3}, image); }
};

inline std::array<double, 3> class_color(int cls, int num_classes) {
  static constexpr std::array<std::array<double, 3>, 8> palette{{{0.20, 0.20, 0.20},
                                                                 {0.90, 0.25, 0.20},
                                                                 {0.20, 0.75, 0.30},
                                                                 {0.25, 0.35, 0.90},
                                                                 {0.90, 0.85, 0.20},
                                                                 {0.80, 0.30, 0.85},
                                                                 {0.20, 0.85, 0.85},
                                                                 {0.95, 0.60, 0.20}}};
  if (cls < static_cast<int>(palette.size())) return palette[static_cast<std::size_t>(cls)];
  const double t = static_cast<double>(cls) / static_cast<double>(num_classes);
  return {0.5 + 0.4 * std::sin(6.283 * t), 0.5 + 0.4 * std::sin(6.283 * t + 2.1),
          0.5 + 0.4 * std::sin(6.283 * t + 4.2)};
}

namespace detail {

struct ShapeStamp {
  bool disc = false;
  long x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
  int cls = 0;
};

inline bool stamp_covers(const ShapeStamp& s, long x, long y) {
  if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) return false;
  if (!s.disc) return true;
  const double cx = 0.5 * static_cast<double>(s.x0 + s.x1), cy = 0.5 * static_cast<double>(s.y0 + s.y1);
  const double r = 0.5 * static_cast<double>(s.x1 - s.x0) + 0.25;
  const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
  return dx * dx + dy * dy <= r * r;
}

// Random shape inside the box [bx0, bx1] x [by0, by1] with side in [lo, hi].
inline ShapeStamp random_stamp(std::mt19937_64& rng, const SceneSpec& spec, int cls, long bx0, long by0, long bx1,
                               long by1, long lo, long hi) {
  auto uni = [&rng](long a, long b) { return std::uniform_int_distribution<long>(a, b)(rng); };
  ShapeStamp s;
  s.cls = cls;
  s.disc = spec.discs && (!spec.rectangles || uni(0, 1) == 1);
  hi = std::min({hi, bx1 - bx0 + 1, by1 - by0 + 1});
  lo = std::min(lo, hi);
  const long w = uni(lo, hi);
  const long h = s.disc ? w : uni(lo, hi);
  s.x0 = uni(bx0, bx1 - w + 1);
  s.y0 = uni(by0, by1 - h + 1);
  s.x1 = s.x0 + w - 1;
  s.y1 = s.y0 + h - 1;
  return s;
}

}  // namespace detail

inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL);
  const long w = static_cast<long>(spec.width), h = static_cast<long>(spec.height);
  const long small = 5, large = std::max(small, std::min(w, h) / 3);

  std::vector<detail::ShapeStamp> stamps;
  const int paired = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes - 1));
  for (int cls = 1; cls < spec.num_classes; ++cls) {
    if (cls == paired) continue;
    const int count = std::uniform_int_distribution<int>(1, spec.max_instances_per_class)(rng);
    for (int i = 0; i < count; ++i)
      stamps.push_back(detail::random_stamp(rng, spec, cls, 0, 0, w - 1, h - 1, small, large));
  }
  std::shuffle(stamps.begin(), stamps.end(), rng);
  // The paired class goes on top, one blob per diagonal quadrant, with a
  // gap so the two never touch.
  const long mx = w / 2, my = h / 2;
  const bool main_diag = (rng() & 1) == 0;
  const long qlarge = std::min(large, std::min(mx, my) - 2);
  stamps.push_back(detail::random_stamp(rng, spec, paired, 0, main_diag ? 0 : my + 1, mx - 2,
                                        main_diag ? my - 2 : h - 1, small, qlarge));
  stamps.push_back(detail::random_stamp(rng, spec, paired, mx + 1, main_diag ? my + 1 : 0, w - 1,
                                        main_diag ? h - 1 : my - 2, small, qlarge));

  Scene scene;
  scene.seed = spec.seed;
  scene.width = spec.width;
  scene.height = spec.height;
  scene.labels.width = spec.width;
  scene.labels.height = spec.height;
  scene.labels.class_ids.assign(spec.width * spec.height, 0);
  scene.labels.instance_ids.assign(spec.width * spec.height, 0);

  std::vector<std::array<double, 3>> colors;
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    auto c = class_color(stamps[i].cls, spec.num_classes);
    for (auto& v : c) v += jitter(rng);
    colors.push_back(c);
    for (long y = std::max(0L, stamps[i].y0); y <= std::min(h - 1, stamps[i].y1); ++y)
      for (long x = std::max(0L, stamps[i].x0); x <= std::min(w - 1, stamps[i].x1); ++x)
        if (detail::stamp_covers(stamps[i], x, y)) {
          const std::size_t n = static_cast<std::size_t>(y * w + x);
          scene.labels.class_ids[n] = stamps[i].cls;
          scene.labels.instance_ids[n] = static_cast<int>(i + 1);
        }
  }

  std::normal_distribution<double> noise(0.0, spec.noise);
  const auto background = class_color(0, spec.num_classes);
  scene.image.resize(spec.width * spec.height * 3);
  for (std::size_t n = 0; n < spec.width * spec.height; ++n) {
    const int inst = scene.labels.instance_ids[n];
    const auto& base = inst > 0 ? colors[static_cast<std::size_t>(inst - 1)] : background;
    for (std::size_t c = 0; c < 3; ++c) scene.image[n * 3 + c] = base[c] + (spec.noise > 0 ? noise(rng) : 0.0);
  }
  return scene;
}

// Scenes for seeds spec.seed .. spec.seed + n - 1.
inline std::vector<Scene> generate_dataset(SceneSpec spec, std::size_t n) {
  if (n == 0) throw std::invalid_argument("generate_dataset: n must be at least 1");
  std::vector<Scene> out;
  out.reserve(n);
  const std::uint64_t first = spec.seed;
  for (std::size_t i = 0; i < n; ++i) {
    spec.seed = first + i;
    out.push_back(generate_scene(spec));
  }
  return out;
}

// Writes <stem>_r/_g/_b.pgm (8-bit channels), <stem>_class.pgm and
// <stem>_instance.pgm into `dir`.
inline std::vector<std::filesystem::path> export_scene_pgm(const Scene& scene, const std::filesystem::path& dir,
                                                           const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const char* names[3] = {"_r", "_g", "_b"};
  for (std::size_t c = 0; c < 3; ++c) {
    GrayImage img{scene.width, scene.height, 255, std::vector<int>(scene.width * scene.height)};
    for (std::size_t n = 0; n < img.pixels.size(); ++n) img.pixels[n] = quantize_unit(scene.image[n * 3 + c]);
    written.push_back(dir / (stem + names[c] + ".pgm"));
    write_pgm(written.back(), img);
  }
  auto max_of = [](const std::vector<int>& v) { return std::max(1, *std::max_element(v.begin(), v.end())); };
  GrayImage cls{scene.width, scene.height, std::max(255, max_of(scene.labels.class_ids)), scene.labels.class_ids};
  written.push_back(dir / (stem + "_class.pgm"));
  write_pgm(written.back(), cls);
  GrayImage inst{scene.width, scene.height, std::max(255, max_of(scene.labels.instance_ids)),
                 scene.labels.instance_ids};
  written.push_back(dir / (stem + "_instance.pgm"));
  write_pgm(written.back(), inst);
  return written;
}

}  // namespace sgr
