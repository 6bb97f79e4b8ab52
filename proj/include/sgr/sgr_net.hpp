#pragma once

// Semantic global reasoning block: pixels are softly grouped into K latent
// concept regions, each region is pooled into a token, tokens exchange
// information through a small transformer, and the refined tokens are
// scattered back onto the pixels through the same soft masks.
//
// Feature maps are stored as [height*width, channels] matrices with pixel
// index n = y*width + x. Grid coordinates exposed to callers are 1-based.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgr/tensor.hpp"

namespace sgr {

struct SgrConfig {
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t channels = 16;    // C
  std::size_t concepts = 16;    // K
  std::size_t active = 8;       // L
  std::size_t token_dim = 16;   // D
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t num_classes = 4;

  std::size_t pixels() const { return width * height; }

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("SgrConfig: " + what); };
    if (width == 0 || height == 0) fail("empty grid");
    if (channels == 0 || channels % 2 != 0) fail("channels must be positive and even");
    if (!(concepts > active && active > 0)) fail("require concepts > active > 0");
    if (num_heads == 0 || token_dim == 0 || token_dim % (2 * num_heads) != 0)
      fail("token_dim must be divisible by 2*num_heads");
    if (num_classes < 2) fail("need at least two classes");
  }
};

struct TransformerLayer {
  Tensor norm1_gain, norm1_bias;
  std::vector<Tensor> query, key, value;  // one [D, D/heads] map per head
  Tensor attn_out, attn_out_bias;
  Tensor norm2_gain, norm2_bias;
  Tensor ff1, ff1_bias, ff2, ff2_bias;
};

// Tokens are unnormalized sums over every pixel, so the gradient of the
// reduction kernel grows with W*H. The stored kernel is multiplied by this
// constant before use: the effective 1x1 kernel, and therefore the tokens,
// are unchanged, but SGD steps stay commensurate across parameters.
inline double reduce_kernel_scale(const SgrConfig& cfg) { return 1.0 / static_cast<double>(cfg.pixels()); }

struct SgrParameters {
  Tensor stem1_w, stem1_b;  // [27, C], [C]
  Tensor stem2_w, stem2_b;  // [9C, C], [C]
  Tensor concept_bank;      // [K, 2C]
  Tensor reduce_kernel;     // [2C, D], stored times W*H (see reduce_kernel_scale)
  Tensor output_kernel;     // [D, C]
  std::vector<TransformerLayer> layers;
  Tensor head_w, head_b;    // [C, classes], [classes]

  static SgrParameters init(const SgrConfig& cfg, std::uint64_t seed);

  // Every trainable tensor, in a fixed order.
  std::vector<Tensor> all() const {
    std::vector<Tensor> out{stem1_w, stem1_b, stem2_w, stem2_b, concept_bank, reduce_kernel, output_kernel};
    for (const auto& l : layers) {
      out.insert(out.end(), {l.norm1_gain, l.norm1_bias});
      out.insert(out.end(), l.query.begin(), l.query.end());
      out.insert(out.end(), l.key.begin(), l.key.end());
      out.insert(out.end(), l.value.begin(), l.value.end());
      out.insert(out.end(), {l.attn_out, l.attn_out_bias, l.norm2_gain, l.norm2_bias, l.ff1,
                             l.ff1_bias, l.ff2, l.ff2_bias});
    }
    out.insert(out.end(), {head_w, head_b});
    return out;
  }

  // Deep copy; the returned parameters share no storage with *this.
  SgrParameters clone() const {
    SgrParameters p = *this;
    auto c = [](const Tensor& t) { return t.clone(); };
    p.stem1_w = c(stem1_w), p.stem1_b = c(stem1_b), p.stem2_w = c(stem2_w), p.stem2_b = c(stem2_b);
    p.concept_bank = c(concept_bank), p.reduce_kernel = c(reduce_kernel), p.output_kernel = c(output_kernel);
    for (auto& l : p.layers) {
      l.norm1_gain = c(l.norm1_gain), l.norm1_bias = c(l.norm1_bias);
      for (auto& t : l.query) t = c(t);
      for (auto& t : l.key) t = c(t);
      for (auto& t : l.value) t = c(t);
      l.attn_out = c(l.attn_out), l.attn_out_bias = c(l.attn_out_bias);
      l.norm2_gain = c(l.norm2_gain), l.norm2_bias = c(l.norm2_bias);
      l.ff1 = c(l.ff1), l.ff1_bias = c(l.ff1_bias), l.ff2 = c(l.ff2), l.ff2_bias = c(l.ff2_bias);
    }
    p.head_w = c(head_w), p.head_b = c(head_b);
    return p;
  }
};

inline SgrParameters SgrParameters::init(const SgrConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto normal = [&rng](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
  };
  auto constant = [](Shape shape, double value) { return Tensor::full(std::move(shape), value, true); };

  const double c = static_cast<double>(cfg.channels);
  const double d = static_cast<double>(cfg.token_dim);
  const std::size_t dh = cfg.token_dim / cfg.num_heads;

  SgrParameters p;
  p.stem1_w = normal({27, cfg.channels}, std::sqrt(2.0 / 27.0));
  p.stem1_b = constant({cfg.channels}, 0.0);
  p.stem2_w = normal({9 * cfg.channels, cfg.channels}, std::sqrt(2.0 / (9.0 * c)));
  p.stem2_b = constant({cfg.channels}, 0.0);
  p.concept_bank = normal({cfg.concepts, 2 * cfg.channels}, 1.0 / std::sqrt(2.0 * c));
  p.reduce_kernel = normal({2 * cfg.channels, cfg.token_dim}, 2.0 / std::sqrt(2.0 * c));
  p.output_kernel = normal({cfg.token_dim, cfg.channels},
                           1.0 / (std::sqrt(d) * static_cast<double>(cfg.concepts)));
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    TransformerLayer l;
    l.norm1_gain = constant({cfg.token_dim}, 1.0);
    l.norm1_bias = constant({cfg.token_dim}, 0.0);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      l.query.push_back(normal({cfg.token_dim, dh}, 1.0 / std::sqrt(d)));
      l.key.push_back(normal({cfg.token_dim, dh}, 1.0 / std::sqrt(d)));
      l.value.push_back(normal({cfg.token_dim, dh}, 1.0 / std::sqrt(d)));
    }
    l.attn_out = normal({cfg.token_dim, cfg.token_dim}, 1.0 / std::sqrt(d));
    l.attn_out_bias = constant({cfg.token_dim}, 0.0);
    l.norm2_gain = constant({cfg.token_dim}, 1.0);
    l.norm2_bias = constant({cfg.token_dim}, 0.0);
    l.ff1 = normal({cfg.token_dim, 4 * cfg.token_dim}, 1.0 / std::sqrt(d));
    l.ff1_bias = constant({4 * cfg.token_dim}, 0.0);
    l.ff2 = normal({4 * cfg.token_dim, cfg.token_dim}, 1.0 / std::sqrt(4.0 * d));
    l.ff2_bias = constant({cfg.token_dim}, 0.0);
    p.layers.push_back(std::move(l));
  }
  p.head_w = normal({cfg.channels, cfg.num_classes}, 1.0 / std::sqrt(c));
  p.head_b = constant({cfg.num_classes}, 0.0);
  return p;
}

// ---------------------------------------------------------------------------
// Sinusoidal encodings

// Entry j of the length-`width` encoding of a (1-based, possibly
// fractional) position: sin for even j, cos for odd j, with frequency
// 10000^(-2*(j/2)/width).
inline double sinusoid(double pos, std::size_t j, std::size_t width) {
  const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(width));
  return (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
}

inline double sinusoid_derivative(double pos, std::size_t j, std::size_t width) {
  const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(width));
  return (j % 2 == 0) ? freq * std::cos(pos * freq) : -freq * std::sin(pos * freq);
}

inline std::vector<double> positional_encoding(double pos, std::size_t width) {
  std::vector<double> pe(width);
  for (std::size_t j = 0; j < width; ++j) pe[j] = sinusoid(pos, j, width);
  return pe;
}

// [X + PE(column), X + PE(row)] concatenated along channels -> [N, 2C].
inline Tensor add_positional_embedding(const Tensor& x, std::size_t width, std::size_t height) {
  detail::require_matrix(x, "add_positional_embedding");
  detail::require(x.dim(0) == width * height, "add_positional_embedding", "pixel count mismatch");
  const std::size_t c = x.dim(1);
  if (c % 2 != 0) throw ShapeError("add_positional_embedding", "channel count must be even");
  std::vector<double> pex(width * height * c), pey(width * height * c);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t xx = 0; xx < width; ++xx) {
      const std::size_t n = y * width + xx;
      for (std::size_t j = 0; j < c; ++j) {
        pex[n * c + j] = sinusoid(static_cast<double>(xx + 1), j, c);
        pey[n * c + j] = sinusoid(static_cast<double>(y + 1), j, c);
      }
    }
  const Tensor tx(x.shape(), std::move(pex)), ty(x.shape(), std::move(pey));
  return concat_cols({add(x, tx), add(x, ty)});
}

// ---------------------------------------------------------------------------
// Projection to regions and tokens

// P[n, k] = sigmoid(<x_pos[n, :], bank[k, :]>), shape [N, K].
inline Tensor compute_region_masks(const Tensor& x_pos, const Tensor& concept_bank) {
  detail::require(concept_bank.rank() == 2 && x_pos.rank() == 2 && concept_bank.dim(1) == x_pos.dim(1),
                  "compute_region_masks",
                  "concept bank " + shape_string(concept_bank.shape()) + " vs features " +
                      shape_string(x_pos.shape()));
  return sigmoid(matmul(x_pos, transpose(concept_bank)));
}

// T = P^T (x_pos W_d): mask-weighted, unnormalized sums of reduced features.
inline Tensor aggregate_tokens(const Tensor& masks, const Tensor& x_pos, const Tensor& reduce_kernel) {
  detail::require(masks.dim(0) == x_pos.dim(0), "aggregate_tokens", "pixel count mismatch");
  return matmul(transpose(masks), matmul(x_pos, reduce_kernel));
}

struct Centroid {
  double x = 0.0;
  double y = 0.0;
};

// Mask-weighted mean of 1-based grid coordinates for every column of P.
inline std::vector<Centroid> region_centroids(const Tensor& masks, std::size_t width, std::size_t height) {
  detail::require(masks.rank() == 2 && masks.dim(0) == width * height, "region_centroids",
                  "masks " + shape_string(masks.shape()) + " do not cover the grid");
  const std::size_t k = masks.dim(1);
  std::vector<Centroid> out(k);
  std::vector<double> mass(k, 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double* row = masks.data().data() + (y * width + x) * k;
      for (std::size_t j = 0; j < k; ++j) {
        mass[j] += row[j];
        out[j].x += static_cast<double>(x + 1) * row[j];
        out[j].y += static_cast<double>(y + 1) * row[j];
      }
    }
  for (std::size_t j = 0; j < k; ++j) {
    if (!(mass[j] > 0.0)) throw DomainError("region_centroids", "mask " + std::to_string(j) + " has no mass");
    out[j].x /= mass[j];
    out[j].y /= mass[j];
  }
  return out;
}

// [K, D] sinusoidal code of each region's centroid: x in the first D/2
// channels, y in the rest. Differentiable with respect to the masks.
inline Tensor centroid_encoding(const Tensor& masks, std::size_t width, std::size_t height,
                                std::size_t token_dim) {
  const auto centroids = region_centroids(masks, width, height);
  const std::size_t k = centroids.size();
  const std::size_t half = token_dim / 2, rest = token_dim - half;
  std::vector<double> out(k * token_dim);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t c = 0; c < half; ++c) out[j * token_dim + c] = sinusoid(centroids[j].x, c, half);
    for (std::size_t c = 0; c < rest; ++c) out[j * token_dim + half + c] = sinusoid(centroids[j].y, c, rest);
  }
  return record_op(
      Tensor({k, token_dim}, std::move(out)), {&masks},
      [im = masks.impl(), centroids, width, height, token_dim, half, rest](const TensorImpl& o) {
        auto* g = detail::grad_sink(im);
        if (!g) return;
        const std::size_t k = centroids.size();
        std::vector<double> gx(k, 0.0), gy(k, 0.0), mass(k, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
          for (std::size_t c = 0; c < half; ++c)
            gx[j] += o.grad[j * token_dim + c] * sinusoid_derivative(centroids[j].x, c, half);
          for (std::size_t c = 0; c < rest; ++c)
            gy[j] += o.grad[j * token_dim + half + c] * sinusoid_derivative(centroids[j].y, c, rest);
        }
        for (std::size_t n = 0; n < width * height; ++n)
          for (std::size_t j = 0; j < k; ++j) mass[j] += im->data[n * k + j];
        for (std::size_t y = 0; y < height; ++y)
          for (std::size_t x = 0; x < width; ++x) {
            const std::size_t n = y * width + x;
            for (std::size_t j = 0; j < k; ++j)
              (*g)[n * k + j] += (gx[j] * (static_cast<double>(x + 1) - centroids[j].x) +
                                  gy[j] * (static_cast<double>(y + 1) - centroids[j].y)) /
                                 mass[j];
          }
      });
}

// T' = T + PE(centroid of P_k).
inline Tensor encode_token_positions(const Tensor& tokens, const Tensor& masks, std::size_t width,
                                     std::size_t height) {
  detail::require(tokens.rank() == 2 && masks.rank() == 2 && tokens.dim(0) == masks.dim(1),
                  "encode_token_positions", "token count does not match mask count");
  return add(tokens, centroid_encoding(masks, width, height, tokens.dim(1)));
}

// ---------------------------------------------------------------------------
// Transformer over tokens

inline Tensor multi_head_attention(const Tensor& z, const TransformerLayer& layer) {
  const std::size_t heads = layer.query.size();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(layer.query.front().dim(1)));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor q = matmul(z, layer.query[h]);
    const Tensor k = matmul(z, layer.key[h]);
    const Tensor v = matmul(z, layer.value[h]);
    const Tensor attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    outs.push_back(matmul(attn, v));
  }
  return add_bias(matmul(concat_cols(outs), layer.attn_out), layer.attn_out_bias);
}

// Pre-norm encoder layer: x + MHA(LN(x)), then h + FFN(LN(h)).
inline Tensor transformer_layer(const Tensor& x, const TransformerLayer& layer) {
  const Tensor h = add(x, multi_head_attention(layer_norm(x, layer.norm1_gain, layer.norm1_bias), layer));
  const Tensor z = layer_norm(h, layer.norm2_gain, layer.norm2_bias);
  const Tensor ff = add_bias(matmul(silu(add_bias(matmul(z, layer.ff1), layer.ff1_bias)), layer.ff2),
                             layer.ff2_bias);
  return add(h, ff);
}

inline Tensor transformer_encode(const Tensor& tokens, const std::vector<TransformerLayer>& layers) {
  Tensor x = tokens;
  for (const auto& layer : layers) x = transformer_layer(x, layer);
  return x;
}

// X + (P T_out) W_out.
inline Tensor back_project_fuse(const Tensor& tokens, const Tensor& masks, const Tensor& x,
                                const Tensor& output_kernel) {
  detail::require(masks.dim(1) == tokens.dim(0) && masks.dim(0) == x.dim(0), "back_project_fuse",
                  "masks " + shape_string(masks.shape()) + ", tokens " + shape_string(tokens.shape()) +
                      ", features " + shape_string(x.shape()));
  return add(x, matmul(matmul(masks, tokens), output_kernel));
}

// ---------------------------------------------------------------------------
// Full network

struct SgrOutput {
  Tensor features;  // X, [N, C]
  Tensor masks;     // P, [N, K]
  Tensor tokens;    // refined tokens, [K, D]
  Tensor fused;     // [N, C]
  Tensor logits;    // [N, classes]
};

inline Tensor stem_forward(const Tensor& image, const SgrParameters& params, std::size_t width,
                           std::size_t height) {
  const Tensor h = silu(conv3x3(image, params.stem1_w, params.stem1_b, width, height));
  return silu(conv3x3(h, params.stem2_w, params.stem2_b, width, height));
}

// `image` is [width*height, 3].
inline SgrOutput sgr_forward(const Tensor& image, const SgrParameters& params, const SgrConfig& cfg) {
  detail::require(image.rank() == 2 && image.dim(0) == cfg.pixels() && image.dim(1) == 3, "sgr_forward",
                  "image " + shape_string(image.shape()) + " does not match config grid");
  for (double v : image.data())
    if (!std::isfinite(v)) throw DomainError("sgr_forward", "non-finite image value");
  SgrOutput out;
  out.features = stem_forward(image, params, cfg.width, cfg.height);
  const Tensor x_pos = add_positional_embedding(out.features, cfg.width, cfg.height);
  out.masks = compute_region_masks(x_pos, params.concept_bank);
  const Tensor tokens =
      aggregate_tokens(out.masks, x_pos, scale(params.reduce_kernel, reduce_kernel_scale(cfg)));
  const Tensor placed = encode_token_positions(tokens, out.masks, cfg.width, cfg.height);
  out.tokens = transformer_encode(placed, params.layers);
  out.fused = back_project_fuse(out.tokens, out.masks, out.features, params.output_kernel);
  out.logits = add_bias(matmul(out.fused, params.head_w), params.head_b);
  return out;
}

inline Tensor image_tensor(const std::vector<double>& rgb, std::size_t width, std::size_t height) {
  return Tensor({width * height, 3}, rgb);
}

}  // namespace sgr
