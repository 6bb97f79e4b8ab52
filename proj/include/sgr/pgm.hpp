#pragma once

// Portable graymap (P2 ASCII / P5 binary) reading and writing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgr/components.hpp"

namespace sgr {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int max_value = 255;
  std::vector<int> pixels;  // row-major
};

namespace detail {
inline std::string next_pgm_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  return {};
}
}  // namespace detail

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto fail = [&](const std::string& what) { return std::runtime_error(path.string() + ": " + what); };
  const std::string magic = detail::next_pgm_token(in);
  if (magic != "P2" && magic != "P5") throw fail("not a P2/P5 graymap");
  GrayImage img;
  try {
    img.width = std::stoul(detail::next_pgm_token(in));
    img.height = std::stoul(detail::next_pgm_token(in));
    img.max_value = std::stoi(detail::next_pgm_token(in));
  } catch (const std::exception&) {
    throw fail("malformed header");
  }
  if (img.width == 0 || img.height == 0 || img.max_value <= 0 || img.max_value > 65535) throw fail("bad header values");
  img.pixels.resize(img.width * img.height);
  if (magic == "P2") {
    for (auto& p : img.pixels) {
      const std::string tok = detail::next_pgm_token(in);
      if (tok.empty()) throw fail("truncated pixel data");
      p = std::stoi(tok);
    }
  } else {
    in.get();  // single whitespace after maxval
    const bool wide = img.max_value > 255;
    for (auto& p : img.pixels) {
      unsigned char b[2] = {0, 0};
      if (!in.read(reinterpret_cast<char*>(b), wide ? 2 : 1)) throw fail("truncated pixel data");
      p = wide ? (b[0] << 8) | b[1] : b[0];
    }
  }
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img, bool binary = true) {
  if (img.pixels.size() != img.width * img.height) throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (binary ? "P5" : "P2") << '\n' << img.width << ' ' << img.height << '\n' << img.max_value << '\n';
  if (binary) {
    const bool wide = img.max_value > 255;
    for (int p : img.pixels) {
      if (wide) out.put(static_cast<char>((p >> 8) & 0xff));
      out.put(static_cast<char>(p & 0xff));
    }
  } else {
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      out << img.pixels[i] << (((i + 1) % img.width == 0) ? '\n' : ' ');
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// 8-bit quantization round(255 * v) of values in [0, 1], halves rounded up.
inline int quantize_unit(double v) {
  return static_cast<int>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

// Pixel value = class id.
inline LabelMap label_map_from_pgm(const std::filesystem::path& path) {
  const GrayImage img = read_pgm(path);
  LabelMap labels;
  labels.width = img.width;
  labels.height = img.height;
  labels.class_ids = img.pixels;
  return labels;
}

}  // namespace sgr
