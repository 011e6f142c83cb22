#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radapt/data.hpp"
#include "radapt/grad.hpp"
#include "radapt/model.hpp"

namespace radapt {

struct AttackConfig {
  enum class Kind { kFgsm, kPgd, kSquare };
  Kind kind = Kind::kPgd;
  double epsilon = 4.0 / 255.0;  // l-inf radius in pixel units
  std::size_t steps = 10;
  double step_size = 1.0 / 255.0;
  LossKind loss = LossKind::kCrossEntropy;
  double kappa = 0.0;
  bool random_start = true;
  std::size_t queries = 200;  // square only
  std::uint64_t seed = 0;

  void validate() const;
};

/// Single-step signed-gradient attack:
///   x_adv = clamp(x + eps * sign(dL_CE/dx), 0, 1).
Tensor fgsm(const ModelRef& m, const Tensor& batch,
            const std::vector<std::size_t>& labels, double epsilon);

/// Iterated signed-gradient ascent on the adversarial objective, projected
/// onto the l-inf ball and [0,1] each step. Optional uniform random start.
Tensor pgd(const ModelRef& m, const Tensor& batch,
           const std::vector<std::size_t>& labels, const AttackConfig& cfg);

/// Gradient-free random search: +-eps vertical stripes init, then random
/// square patches kept when the margin objective improves. Never queries
/// gradients.
Tensor square_attack(const ModelRef& m, const Tensor& batch,
                     const std::vector<std::size_t>& labels,
                     const AttackConfig& cfg);

Tensor run_attack(const ModelRef& m, const Tensor& batch,
                  const std::vector<std::size_t>& labels,
                  const AttackConfig& cfg);

struct RobustnessReport {
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  double mean_linf = 0.0;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> clean_preds;
  std::vector<std::size_t> adv_preds;
  std::vector<bool> success;  // attack flipped a correct prediction
  std::vector<double> linf;   // per-sample perturbation size
  AttackConfig config;

  /// CSV with a one-line JSON provenance header; columns
  /// (sample_id, label, clean_pred, adv_pred, success, linf).
  void write_csv(const std::string& path, const std::string& provenance) const;
};

/// Clean accuracy over d, robust accuracy after a per-sample attack.
/// Deterministic given cfg.seed; samples are attacked in fixed-size batches
/// with per-batch split seeds and merged by index.
RobustnessReport evaluate(const ModelRef& m, const Dataset& d,
                          const AttackConfig& cfg);

}  // namespace radapt
