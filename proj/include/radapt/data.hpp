#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "radapt/rng.hpp"
#include "radapt/tensor.hpp"

namespace radapt {

struct LabeledImage {
  Tensor pixels;      // [3, H, W], values in [0, 1]
  std::size_t label;  // < number of classes
};

enum class Split { kTrain, kEval };

struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;
  Split split = Split::kTrain;

  std::size_t size() const { return images.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::size_t resolution() const { return images.at(0).pixels.extent(1); }
};

/// Deterministic procedural-shapes generator. n images over k glyph classes
/// (circle, square, triangle, cross, ring, bar, diamond, chevron), class
/// counts balanced within +-1, randomized position/scale/color/background
/// plus additive noise of amplitude <= 0.05. Fully determined by seed.
Dataset generate_shapes(std::uint64_t seed, std::size_t n, std::size_t resolution,
                        std::size_t k);

/// CIFAR-10 binary layout: records of 1 label byte + 3072 pixel bytes
/// (1024 R, 1024 G, 1024 B, row-major 32x32). Pixels scaled to [0, 1].
Dataset load_cifar10(const std::string& path);

/// Export any 32x32 dataset to the same binary layout (values rounded to
/// bytes), so synthetic data can be interchanged with CIFAR-10 tooling.
void save_cifar10(const Dataset& d, const std::string& path);

/// Disjoint, exhaustive, seed-deterministic partition.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, Rng rng,
                                          double train_fraction);

/// First n images as a view-copy, preserving metadata.
Dataset take(const Dataset& d, std::size_t n);

}  // namespace radapt
