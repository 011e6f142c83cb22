#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radapt/attacks.hpp"
#include "radapt/data.hpp"
#include "radapt/model.hpp"
#include "radapt/tensor.hpp"

namespace radapt {

struct GifConfig {
  double cutoff = 6.0;  // D0, frequency-index units
  bool enabled = true;

  void validate() const;
};

/// The canonical cutoff is calibrated for 224-pixel inputs; scale linearly
/// with resolution to preserve the fractional bandwidth.
double default_cutoff(std::size_t resolution);

enum class AnchorProvenance { kTrainingFree, kModelGuided, kDataDriven };

std::string to_string(AnchorProvenance p);
AnchorProvenance anchor_provenance_from_string(const std::string& s);

/// Fixed token-response grid injected into block 1's attention output as
/// alpha * A + beta * h.
struct Anchor {
  Tensor values;  // [N, D]
  double alpha = 1.2;
  double beta = 0.0;
  AnchorProvenance provenance = AnchorProvenance::kTrainingFree;
  std::string source_digest;
  std::size_t optimization_budget = 0;  // images x epochs, data-driven only
};

void save_anchor(const Anchor& a, const GifConfig& gif, const std::string& path);
std::pair<Anchor, GifConfig> load_anchor(const std::string& path);

/// Frozen base model + GIF + FRA. Base parameters are never mutated; only
/// block 1's attention output path is altered.
struct AdaptedModel {
  VitModel base;
  GifConfig gif;
  Anchor anchor;

  ModelRef ref() const {
    Adapter a;
    a.gif_enabled = gif.enabled;
    a.d0 = gif.cutoff;
    a.fra_enabled = true;
    a.anchor = &anchor.values;
    a.alpha = anchor.alpha;
    a.beta = anchor.beta;
    return ModelRef(base, a);
  }
};

/// Per-channel frequency gate exp(-D^2 / 2 D0^2) on the centered layout,
/// output clamped to [0, 1]. If clamp_mask is given it receives 1 where the
/// pre-clamp value was inside [0, 1] (the gradient pass-through mask).
Tensor gif_filter_image(const Tensor& chw, double d0, Tensor* clamp_mask = nullptr);

/// Adjoint of the filter for backprop: the clamp mask gates the upstream
/// gradient, then the (self-adjoint) spectral gate is applied again.
Tensor gif_filter_backward(const Tensor& grad_chw, const Tensor& clamp_mask,
                           double d0);

Tensor gaussian_input_filter(const Tensor& image, double d0);

/// All-channels-1.0 probe image at model resolution.
Tensor white_input(const ModelConfig& cfg);

AdaptedModel inject_fra(const VitModel& base, const Anchor& anchor,
                        const GifConfig& gif);

/// Block-1 attention response (post projection, pre residual) of `source`
/// on the white input. Training-free when source is a standard model,
/// model-guided when source is a robust one.
Anchor extract_anchor(const VitModel& source, bool apply_gif,
                      const GifConfig& gif = {},
                      AnchorProvenance provenance = AnchorProvenance::kTrainingFree);

struct AnchorBudget {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  bool online_adversary = true;  // regenerate adversarial examples each epoch
};

struct AnchorOptResult {
  Anchor anchor;
  std::vector<double> epoch_loss;  // index 0 = loss before any update
};

/// Data-driven anchor: freeze the base, initialize A from the white-input
/// response, and minimize cross-entropy of the adapted model on adversarial
/// examples regenerated against the current adapted model. Only A is
/// updated; GIF stays active throughout.
AnchorOptResult optimize_anchor(const VitModel& base, const Dataset& adv_source,
                                const AnchorBudget& budget,
                                const AttackConfig& attack, const GifConfig& gif,
                                double alpha, double beta, std::uint64_t seed);

}  // namespace radapt
