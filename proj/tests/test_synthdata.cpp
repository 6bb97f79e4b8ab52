#include <gtest/gtest.h>

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <set>

#include "sgr/components.hpp"
#include "sgr/pgm.hpp"
#include "sgr/synthdata.hpp"

using namespace sgr;

namespace {

SceneSpec spec_with_seed(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Synth, SameSeedSameScene) {
  const auto a = generate_scene(spec_with_seed(42)), b = generate_scene(spec_with_seed(42));
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.labels.class_ids, b.labels.class_ids);
  EXPECT_EQ(a.labels.instance_ids, b.labels.instance_ids);
  EXPECT_NE(generate_scene(spec_with_seed(43)).labels.class_ids, a.labels.class_ids);
}

TEST(Synth, LabelsAreConsistent) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = generate_scene(spec_with_seed(seed));
    ASSERT_EQ(s.image.size(), 32u * 32u * 3u);
    EXPECT_NO_THROW(s.labels.validate(4));
    for (std::size_t n = 0; n < s.labels.pixels(); ++n)
      EXPECT_EQ(s.labels.class_ids[n] == 0, s.labels.instance_ids[n] == 0) << "seed " << seed << " pixel " << n;
  }
}

TEST(Synth, SomeClassSplitsIntoTwoComponents) {
  // One foreground class is always stamped as two separated blobs on top.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = generate_scene(spec_with_seed(seed));
    const auto cs = extract_components(s.labels);
    std::map<int, int> per_class;
    for (const auto& c : cs.components) ++per_class[c.class_id];
    bool split = false;
    for (const auto& [cls, count] : per_class) split = split || (cls > 0 && count >= 2);
    EXPECT_TRUE(split) << "seed " << seed;
  }
}

TEST(Synth, InstancesRefineClasses) {
  const auto s = generate_scene(spec_with_seed(7));
  std::map<int, std::set<int>> classes_of;
  for (std::size_t n = 0; n < s.labels.pixels(); ++n) classes_of[s.labels.instance_ids[n]].insert(s.labels.class_ids[n]);
  for (const auto& [inst, cls] : classes_of) EXPECT_EQ(cls.size(), 1u) << "instance " << inst;
}

TEST(Synth, NoiseFreeImageIsPiecewiseConstant) {
  SceneSpec spec = spec_with_seed(3);
  spec.noise = 0.0;
  const auto s = generate_scene(spec);
  std::map<int, std::array<double, 3>> color;
  for (std::size_t n = 0; n < s.labels.pixels(); ++n) {
    const std::array<double, 3> c{s.image[n * 3], s.image[n * 3 + 1], s.image[n * 3 + 2]};
    auto [it, fresh] = color.emplace(s.labels.instance_ids[n], c);
    if (!fresh) EXPECT_EQ(it->second, c);
  }
}

TEST(Synth, ShapePaletteRespected) {
  SceneSpec spec = spec_with_seed(11);
  spec.discs = false;
  const auto s = generate_scene(spec);
  // Every instance of a rectangle-only scene fills its bounding box except
  // where later stamps overwrite it, so the largest instance is at least 5x5.
  std::map<int, std::size_t> area;
  for (int id : s.labels.instance_ids)
    if (id > 0) ++area[id];
  std::size_t largest = 0;
  for (const auto& [id, a] : area) largest = std::max(largest, a);
  EXPECT_GE(largest, 25u);
  spec.rectangles = false;
  EXPECT_THROW(generate_scene(spec), std::invalid_argument);
}

TEST(Synth, SpecValidation) {
  SceneSpec spec;
  spec.width = 8;
  EXPECT_THROW(generate_scene(spec), std::invalid_argument);
  spec = SceneSpec{};
  spec.num_classes = 1;
  EXPECT_THROW(generate_scene(spec), std::invalid_argument);
  EXPECT_THROW(generate_dataset(SceneSpec{}, 0), std::invalid_argument);
}

TEST(Synth, DatasetSeedsAreConsecutive) {
  const auto ds = generate_dataset(spec_with_seed(100), 3);
  ASSERT_EQ(ds.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ds[i].seed, 100 + i);
    EXPECT_EQ(ds[i].image, generate_scene(spec_with_seed(100 + i)).image);
  }
}

TEST(Synth, TwoHundredScenesQuickly) {
  const auto start = std::chrono::steady_clock::now();
  const auto ds = generate_dataset(SceneSpec{}, 200);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(ds.size(), 200u);
  EXPECT_LT(secs, 5.0);
}

TEST(Synth, PgmExportRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "sgr_test_synth_export";
  std::filesystem::remove_all(dir);
  const auto s = generate_scene(spec_with_seed(5));
  const auto files = export_scene_pgm(s, dir, "scene");
  ASSERT_EQ(files.size(), 5u);
  EXPECT_EQ(label_map_from_pgm(dir / "scene_class.pgm").class_ids, s.labels.class_ids);
  EXPECT_EQ(read_pgm(dir / "scene_instance.pgm").pixels, s.labels.instance_ids);
  const auto red = read_pgm(dir / "scene_r.pgm");
  for (std::size_t n = 0; n < red.pixels.size(); ++n) EXPECT_EQ(red.pixels[n], quantize_unit(s.image[n * 3]));
  std::filesystem::remove_all(dir);
}

TEST(Pgm, AsciiAndWideBinaryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "sgr_test_pgm";
  std::filesystem::create_directories(dir);
  const GrayImage img{3, 2, 1000, {0, 1, 999, 1000, 256, 7}};
  write_pgm(dir / "a.pgm", img, false);
  write_pgm(dir / "b.pgm", img, true);
  EXPECT_EQ(read_pgm(dir / "a.pgm").pixels, img.pixels);
  EXPECT_EQ(read_pgm(dir / "b.pgm").pixels, img.pixels);
  EXPECT_EQ(quantize_unit(0.5), 128);
  EXPECT_EQ(quantize_unit(-1.0), 0);
  EXPECT_EQ(quantize_unit(2.0), 255);
  EXPECT_THROW(read_pgm(dir / "missing.pgm"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
