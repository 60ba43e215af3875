#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "srnn/errors.hpp"
#include "srnn/rng.hpp"
#include "srnn/vision.hpp"

namespace srnn {

template <typename T>
struct Sample {
  Image<T> image;
  std::size_t label;
};

template <typename T>
struct Dataset {
  std::vector<Sample<T>> samples;
  std::size_t classes = 0;
  std::string split;  // "train" | "val"

  std::size_t size() const { return samples.size(); }
};

// ---------------------------------------------------------------------------
// Synthetic scale task: a large silhouette (readable after 4x downscale)
// filled with a high-frequency texture (destroyed by 4x downscale). The
// label couples both factors, so no single scale suffices.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t coarse_shapes = 4;  // G
  std::size_t fine_textures = 4;  // T
  std::size_t canvas = 64;
  std::size_t train_per_class = 200;
  std::size_t val_per_class = 50;
  double noise_amplitude = 0.12;
  std::uint64_t seed = 1;

  std::size_t classes() const { return coarse_shapes * fine_textures; }
};

namespace detail {

constexpr std::size_t kShapePrimitives = 4;   // disk, square, triangle, cross
constexpr std::size_t kTexturePrimitives = 4; // h-stripes, v-stripes, checker, diagonal

inline bool shape_mask(std::size_t shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::max(std::abs(dx), std::abs(dy)) <= 0.85 * r;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= r && std::abs(dx) <= 0.55 * (dy + r);
    default:  // cross
      return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) ||
             (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
  }
}

// All textures alternate the same two intensities at 50% duty so their
// means agree; after strong downscaling they are indistinguishable.
inline double texture_value(std::size_t tex, std::size_t x, std::size_t y,
                            std::size_t px, std::size_t py) {
  constexpr double hi = 0.85, lo = 0.35;
  switch (tex) {
    case 0:
      return (y + py) % 2 == 0 ? hi : lo;  // horizontal stripes
    case 1:
      return (x + px) % 2 == 0 ? hi : lo;  // vertical stripes
    case 2:
      return ((x + px) + (y + py)) % 2 == 0 ? hi : lo;  // checkerboard
    default:
      return ((x + px) + (y + py)) % 4 < 2 ? hi : lo;  // diagonal stripes
  }
}

// Size, position, background and texture phase all vary per sample, so
// silhouette classification at full resolution cannot lean on fixed pixel
// statistics; the coarse scales have to carry it.
template <typename T>
Image<T> render_scale_sample(const SyntheticSpec& spec, std::size_t shape,
                             std::size_t tex, Rng& rng) {
  const std::size_t n = spec.canvas;
  const double cx = n / 2.0 + rng.uniform(-4.0, 4.0);
  const double cy = n / 2.0 + rng.uniform(-4.0, 4.0);
  const double r = rng.uniform(0.28, 0.42) * static_cast<double>(n);
  const std::size_t px = rng.index(4), py = rng.index(4);
  constexpr double background = 0.08;

  Image<T> img(1, n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double noise =
          rng.uniform(-spec.noise_amplitude, spec.noise_amplitude);
      double v = shape_mask(shape, dx, dy, r) ? texture_value(tex, x, y, px, py)
                                              : background;
      img.at(0, y, x) = static_cast<T>(std::clamp(v + noise, 0.0, 1.0));
    }
  return img;
}

inline std::uint64_t sample_stream(bool val_split, std::size_t label,
                                   std::size_t index) {
  return (static_cast<std::uint64_t>(val_split) << 60) |
         (static_cast<std::uint64_t>(label) << 40) |
         static_cast<std::uint64_t>(index);
}

}  // namespace detail

template <typename T = float>
std::pair<Dataset<T>, Dataset<T>> generate_scale_task(
    const SyntheticSpec& spec) {
  if (spec.coarse_shapes < 2 || spec.fine_textures < 2)
    throw ContractError("generate_scale_task: need G >= 2 and T >= 2");
  if (spec.coarse_shapes > detail::kShapePrimitives)
    throw ConfigError("generate_scale_task: only " +
                      std::to_string(detail::kShapePrimitives) +
                      " shape primitives available, requested " +
                      std::to_string(spec.coarse_shapes));
  if (spec.fine_textures > detail::kTexturePrimitives)
    throw ConfigError("generate_scale_task: only " +
                      std::to_string(detail::kTexturePrimitives) +
                      " texture primitives available, requested " +
                      std::to_string(spec.fine_textures));
  Dataset<T> train, val;
  train.classes = val.classes = spec.classes();
  train.split = "train";
  val.split = "val";
  for (std::size_t g = 0; g < spec.coarse_shapes; ++g)
    for (std::size_t t = 0; t < spec.fine_textures; ++t) {
      const std::size_t label = g * spec.fine_textures + t;
      for (std::size_t i = 0; i < spec.train_per_class; ++i) {
        Rng rng(mix_seed(spec.seed, detail::sample_stream(false, label, i)));
        train.samples.push_back(
            {detail::render_scale_sample<T>(spec, g, t, rng), label});
      }
      for (std::size_t i = 0; i < spec.val_per_class; ++i) {
        Rng rng(mix_seed(spec.seed, detail::sample_stream(true, label, i)));
        val.samples.push_back(
            {detail::render_scale_sample<T>(spec, g, t, rng), label});
      }
    }
  return {std::move(train), std::move(val)};
}

// Nearest-centroid probe on strongly downscaled copies. High coarse-shape
// accuracy plus near-chance texture accuracy is what makes the task a real
// multi-scale problem; the generator's self-test asserts both.
struct SeparabilityReport {
  double coarse_accuracy;
  double fine_accuracy;
};

template <typename T>
SeparabilityReport scale_separability_selftest(const Dataset<T>& train,
                                               const Dataset<T>& val,
                                               const SyntheticSpec& spec,
                                               Size2d down = {16, 16}) {
  const std::size_t G = spec.coarse_shapes, Tn = spec.fine_textures;
  const std::size_t dim = down.first * down.second;
  auto shrink = [&](const Image<T>& img) {
    return bicubic_resize(img, down.first, down.second);
  };
  std::vector<std::vector<double>> gcent(G, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> tcent(Tn, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> gcount(G, 0), tcount(Tn, 0);
  for (const auto& s : train.samples) {
    const Image<T> small = shrink(s.image);
    const std::size_t g = s.label / Tn, t = s.label % Tn;
    for (std::size_t i = 0; i < dim; ++i) {
      gcent[g][i] += small.data[i];
      tcent[t][i] += small.data[i];
    }
    ++gcount[g];
    ++tcount[t];
  }
  for (std::size_t g = 0; g < G; ++g)
    for (auto& v : gcent[g]) v /= static_cast<double>(gcount[g]);
  for (std::size_t t = 0; t < Tn; ++t)
    for (auto& v : tcent[t]) v /= static_cast<double>(tcount[t]);

  auto nearest = [&](const std::vector<std::vector<double>>& cents,
                     const Image<T>& small) {
    std::size_t best = 0;
    double best_d = 0;
    for (std::size_t c = 0; c < cents.size(); ++c) {
      double d = 0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = cents[c][i] - static_cast<double>(small.data[i]);
        d += diff * diff;
      }
      if (c == 0 || d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  };

  std::size_t gok = 0, tok = 0;
  for (const auto& s : val.samples) {
    const Image<T> small = shrink(s.image);
    if (nearest(gcent, small) == s.label / Tn) ++gok;
    if (nearest(tcent, small) == s.label % Tn) ++tok;
  }
  const double n = static_cast<double>(val.samples.size());
  return {static_cast<double>(gok) / n, static_cast<double>(tok) / n};
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary records: 1 label byte + 3072 RGB bytes, plane-major 32x32.
// ---------------------------------------------------------------------------

constexpr std::size_t kCifarRecordBytes = 3073;

template <typename T = float>
Dataset<T> parse_cifar10_bytes(const std::vector<unsigned char>& bytes,
                               const std::string& origin = "cifar10") {
  if (bytes.size() % kCifarRecordBytes != 0)
    throw FormatError(origin + ": truncated record at byte offset " +
                      std::to_string(bytes.size() -
                                     bytes.size() % kCifarRecordBytes) +
                      " (file length " + std::to_string(bytes.size()) +
                      " is not a multiple of 3073)");
  Dataset<T> ds;
  ds.classes = 10;
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  ds.samples.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9)
      throw FormatError(origin + ": record " + std::to_string(r) +
                        " has label " + std::to_string(rec[0]) +
                        " outside [0, 9]");
    Image<T> img(3, 32, 32);
    for (std::size_t i = 0; i < 3072; ++i)
      img.data[i] = static_cast<T>(rec[1 + i] / 255.0);
    ds.samples.push_back({std::move(img), rec[0]});
  }
  return ds;
}

template <typename T = float>
Dataset<T> load_cifar10_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_cifar10_bytes<T>(bytes, path);
}

// Inverse of the loader; round-trips the exact input bytes.
template <typename T>
std::vector<unsigned char> cifar10_bytes(const Dataset<T>& ds) {
  std::vector<unsigned char> out;
  out.reserve(ds.samples.size() * kCifarRecordBytes);
  for (const auto& s : ds.samples) {
    out.push_back(static_cast<unsigned char>(s.label));
    for (std::size_t i = 0; i < 3072; ++i)
      out.push_back(static_cast<unsigned char>(
          std::lround(static_cast<double>(s.image.data[i]) * 255.0)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching: seed-fixed shuffle per epoch, final short batch kept.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>> make_batches(
    std::size_t count, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("make_batches: batch_size >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  for (std::size_t i = count; i > 1; --i)
    std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < count; at += batch_size) {
    const std::size_t end = std::min(count, at + batch_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  return batches;
}

}  // namespace srnn
