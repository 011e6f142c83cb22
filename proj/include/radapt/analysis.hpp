#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radapt/attacks.hpp"
#include "radapt/data.hpp"
#include "radapt/model.hpp"
#include "radapt/tensor.hpp"

namespace radapt {

/// Linear centered-kernel alignment between two feature matrices [n, d] and
/// [n, d']: tr(KHLH) / sqrt(tr(KHKH) tr(LHLH)) with K = XX^T, L = YY^T and
/// H the centering matrix. Throws on degenerate (constant) features.
double linear_cka(const Tensor& x, const Tensor& y);

struct CkaMap {
  std::vector<std::string> row_labels;  // model A layers
  std::vector<std::string> col_labels;  // model B layers
  Tensor values;                        // [rows, cols]
  std::string probe_description;

  void write_csv(const std::string& path, const std::string& provenance) const;
};

/// Cross-model layer similarity. Features per layer: mean-pooled patch
/// embedding for the "emb" row, then the CLS token after each block.
CkaMap cka_map(const ModelRef& a, const ModelRef& b, const Dataset& probe);

struct SpectralShiftMap {
  Tensor values;  // [K, K], centered layout
  std::string aggregation = "mean";

  void write_csv(const std::string& path, const std::string& provenance) const;
};

/// Mean over output-input channel pairs of |F(w_a)| - |F(w_b)| on the
/// centered layout. Kernels are [O, I, K, K] with identical shapes.
SpectralShiftMap spectral_shift(const Tensor& w_a, const Tensor& w_b);

/// View a model's patch-embedding weight as [D, 3, P, P] spatial kernels.
Tensor patch_kernels(const VitModel& m);

/// Mean of the map within centered distance <= r minus the mean outside.
/// Positive means the shift concentrates at low frequencies.
double low_frequency_mass(const SpectralShiftMap& map, double radius);

struct ReplacementCurve {
  std::vector<std::string> unit_order;       // forward-order unit ids
  std::vector<double> clean_accuracy;        // [units + 1], prefix 0 first
  std::vector<double> robust_accuracy;

  void write_csv(const std::string& path, const std::string& provenance) const;
};

/// For each prefix of the forward-order unit list, swap that prefix from
/// source into target and evaluate clean + robust accuracy.
ReplacementCurve progressive_replacement(const VitModel& target,
                                         const VitModel& source,
                                         const Dataset& d,
                                         const AttackConfig& cfg);

struct InsensitivityScore {
  double pairwise = 0.0;      // mean cosine over distinct probe pairs
  double vs_reference = 0.0;  // mean cosine against the white-input response
};

/// Cosine similarity of flattened block-1 attention outputs across probe
/// images, and against the reference (white) image.
InsensitivityScore insensitivity_score(const ModelRef& m, const Dataset& probe,
                                       const Tensor& reference);

struct ShapleyVector {
  std::vector<double> phi;              // per head
  std::vector<double> coalition_value;  // v indexed by keep-bitmask
  bool exact = true;
  std::vector<double> variance;         // sampled mode only
  std::size_t block = 0;

  void write_csv(const std::string& path, const std::string& provenance) const;
};

enum class ShapleyCharacteristic { kRobustAccuracy, kNegLoss };

/// Head attribution on block `block`: v(S) = robust accuracy (or negated
/// mean cross-entropy) of the model with only heads in S kept, on a fixed
/// labeled adversarial batch. Exact mode enumerates all 2^H coalitions
/// (requires H <= 8); sampled mode averages permutation marginals.
ShapleyVector shapley_heads(
    const VitModel& m, const Tensor& adv_batch,
    const std::vector<std::size_t>& labels, bool exact,
    std::size_t block = 0,
    ShapleyCharacteristic characteristic = ShapleyCharacteristic::kRobustAccuracy,
    std::size_t sample_budget = 64, std::uint64_t seed = 0);

}  // namespace radapt
