#pragma once

#include <map>
#include <string>
#include <vector>

#include "radapt/model.hpp"
#include "radapt/tensor.hpp"

namespace radapt {

enum class LossKind {
  kCrossEntropy,       // -log p_y
  kCwMargin,           // max(z_y - max_{i != y} z_i, -kappa)
  kDlr,                // -(z_y - max_{i != y} z_i) / (z_pi1 - z_pi3 + 1e-12)
  kEmbeddingDistance,  // || f(x) - z_ref ||^2
};

struct LossSpec {
  LossKind kind = LossKind::kCrossEntropy;
  double kappa = 0.0;                   // cw margin
  const Tensor* ref_embeddings = nullptr;  // [B, D_out], embedding distance only
};

struct GradReport {
  std::map<std::string, Tensor> grads;
  double loss = 0.0;
  double max_rel_err = 0.0;  // filled by verification helpers only
};

/// Mean batch loss at the current point.
double loss_value(const ModelRef& m, const Tensor& batch,
                  const std::vector<std::size_t>& labels, const LossSpec& loss);

/// Exact reverse-mode gradient of the mean batch loss w.r.t. input pixels
/// (through GIF and FRA when the adapter is active).
Tensor input_grad(const ModelRef& m, const Tensor& batch,
                  const std::vector<std::size_t>& labels, const LossSpec& loss,
                  double* loss_out = nullptr);

/// Gradients restricted to the parameters of the named units.
GradReport param_grads(const ModelRef& m, const Tensor& batch,
                       const std::vector<std::size_t>& labels,
                       const LossSpec& loss,
                       const std::vector<std::string>& units);

/// Gradient of mean cross-entropy w.r.t. the anchor A only; the base model
/// is treated as constant. Requires an active FRA.
Tensor anchor_grad(const ModelRef& adapted, const Tensor& batch,
                   const std::vector<std::size_t>& labels,
                   double* loss_out = nullptr);

}  // namespace radapt
