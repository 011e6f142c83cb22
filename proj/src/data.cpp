#include "radapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace radapt {
namespace {

const char* kGlyphNames[8] = {"circle",  "square", "triangle", "cross",
                              "ring",    "bar",    "diamond",  "chevron"};

bool in_triangle(double u, double v) {
  // Vertices (0,-1), (-0.95,0.8), (0.95,0.8); same-side sign test.
  auto edge = [](double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  };
  const double d1 = edge(0.0, -1.0, -0.95, 0.8, u, v);
  const double d2 = edge(-0.95, 0.8, 0.95, 0.8, u, v);
  const double d3 = edge(0.95, 0.8, 0.0, -1.0, u, v);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

bool glyph_mask(std::size_t glyph, double u, double v) {
  const double r2 = u * u + v * v;
  switch (glyph) {
    case 0: return r2 <= 1.0;                                    // circle
    case 1: return std::max(std::fabs(u), std::fabs(v)) <= 0.9;  // square
    case 2: return in_triangle(u, v);                            // triangle
    case 3:                                                      // cross
      return (std::fabs(u) <= 0.3 && std::fabs(v) <= 1.0) ||
             (std::fabs(v) <= 0.3 && std::fabs(u) <= 1.0);
    case 4: return r2 >= 0.55 * 0.55 && r2 <= 1.0;               // ring
    case 5: return std::fabs(u) <= 0.25 && std::fabs(v) <= 1.0;  // bar
    case 6: return std::fabs(u) + std::fabs(v) <= 1.0;           // diamond
    case 7:                                                      // chevron
      return std::fabs(v - 0.6 * std::fabs(u)) <= 0.28 && std::fabs(u) <= 1.0;
    default: throw std::logic_error("unknown glyph");
  }
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

Dataset generate_shapes(std::uint64_t seed, std::size_t n, std::size_t resolution,
                        std::size_t k) {
  if (k < 2 || k > 8) throw std::invalid_argument("generate_shapes: k must be in [2, 8]");
  if (resolution != 16 && resolution != 32 && resolution != 64) {
    throw std::invalid_argument("generate_shapes: resolution must be 16, 32 or 64");
  }
  if (n < k) throw std::invalid_argument("generate_shapes: n must be >= k");

  Dataset d;
  d.split = Split::kTrain;
  for (std::size_t c = 0; c < k; ++c) d.class_names.emplace_back(kGlyphNames[c]);
  d.images.reserve(n);

  Rng root(seed);
  const double res = static_cast<double>(resolution);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    const std::size_t label = i % k;  // balanced within +-1 by construction

    double bg[3], fg[3];
    for (int c = 0; c < 3; ++c) {
      bg[c] = rng.uniform(0.0, 0.5);
      // Foreground is consistently brighter with a per-channel contrast gap,
      // keeping glyphs visible at any color and classes linearly separable.
      fg[c] = clamp01(bg[c] + rng.uniform(0.15, 0.28));
    }
    const double cx = rng.uniform(0.38, 0.62) * res;
    const double cy = rng.uniform(0.38, 0.62) * res;
    const double scale = rng.uniform(0.3, 0.42) * res;
    const double noise_amp = rng.uniform(0.0, 0.05);

    LabeledImage img{Tensor({3, resolution, resolution}), label};
    for (std::size_t y = 0; y < resolution; ++y) {
      for (std::size_t x = 0; x < resolution; ++x) {
        const double u = (static_cast<double>(x) + 0.5 - cx) / scale;
        const double v = (static_cast<double>(y) + 0.5 - cy) / scale;
        const bool inside = glyph_mask(label, u, v);
        for (std::size_t c = 0; c < 3; ++c) {
          const double base = inside ? fg[c] : bg[c];
          img.pixels(c, y, x) = clamp01(base + rng.uniform(-noise_amp, noise_amp));
        }
      }
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

Dataset load_cifar10(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_cifar10: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  constexpr std::size_t kRecord = 3073;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw std::runtime_error("load_cifar10: file length " +
                             std::to_string(bytes.size()) +
                             " is not a multiple of 3073");
  }
  Dataset d;
  d.split = Split::kTrain;
  d.class_names = {"airplane", "automobile", "bird", "cat",  "deer",
                   "dog",      "frog",       "horse", "ship", "truck"};
  const std::size_t n = bytes.size() / kRecord;
  d.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + i * kRecord);
    if (rec[0] >= 10) {
      throw std::runtime_error("load_cifar10: label byte " + std::to_string(rec[0]) +
                               " out of range in record " + std::to_string(i));
    }
    LabeledImage img{Tensor({3, 32, 32}), static_cast<std::size_t>(rec[0])};
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) {
        img.pixels[c * 1024 + p] = static_cast<double>(rec[1 + c * 1024 + p]) / 255.0;
      }
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

void save_cifar10(const Dataset& d, const std::string& path) {
  if (d.images.empty()) throw std::invalid_argument("save_cifar10: empty dataset");
  if (d.resolution() != 32) throw std::invalid_argument("save_cifar10: 32x32 images required");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_cifar10: cannot open " + path);
  for (const auto& img : d.images) {
    const auto label = static_cast<unsigned char>(img.label);
    out.put(static_cast<char>(label));
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) {
        const double v = img.pixels[c * 1024 + p];
        const int byte = static_cast<int>(std::lround(v * 255.0));
        out.put(static_cast<char>(std::min(255, std::max(0, byte))));
      }
    }
  }
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, Rng rng,
                                          double train_fraction) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw std::invalid_argument("split_dataset: fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(d.size())));
  Dataset train, eval;
  train.class_names = eval.class_names = d.class_names;
  train.split = Split::kTrain;
  eval.split = Split::kEval;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : eval).images.push_back(d.images[order[i]]);
  }
  return {std::move(train), std::move(eval)};
}

Dataset take(const Dataset& d, std::size_t n) {
  Dataset out;
  out.class_names = d.class_names;
  out.split = d.split;
  if (n > d.size()) throw std::invalid_argument("take: n exceeds dataset size");
  out.images.assign(d.images.begin(), d.images.begin() + static_cast<long>(n));
  return out;
}

}  // namespace radapt
