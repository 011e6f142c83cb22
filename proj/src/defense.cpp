#include "radapt/defense.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "radapt/container.hpp"
#include "radapt/fourier.hpp"
#include "radapt/grad.hpp"

namespace radapt {
namespace {

// Frequency gain exp(-D^2 / 2 D0^2) in the natural (DC-at-origin) layout.
Tensor spectral_gain(std::size_t h, std::size_t w, double d0) {
  Tensor dist = centered_distance_matrix(h, w);
  Tensor gain({h, w});
  const double denom = 2.0 * d0 * d0;
  for (std::size_t i = 0; i < gain.size(); ++i) {
    gain[i] = std::exp(-dist[i] * dist[i] / denom);
  }
  return ifftshift(gain);
}

// Filter one real plane with a real, even spectral gain; the result is real
// up to rounding, so the imaginary part is dropped.
void filter_plane(const double* src, double* dst, const Tensor& gain,
                  std::size_t h, std::size_t w) {
  ComplexGrid g(h, w);
  for (std::size_t i = 0; i < h * w; ++i) g.re[i] = src[i];
  ComplexGrid f = dft2(g);
  for (std::size_t i = 0; i < h * w; ++i) {
    f.re[i] *= gain[i];
    f.im[i] *= gain[i];
  }
  ComplexGrid back = idft2(f);
  for (std::size_t i = 0; i < h * w; ++i) dst[i] = back.re[i];
}

}  // namespace

void GifConfig::validate() const {
  if (!(cutoff > 0.0) || !std::isfinite(cutoff)) {
    throw std::invalid_argument("gif: cutoff must be positive and finite");
  }
}

double default_cutoff(std::size_t resolution) {
  // 40 frequency indices at 224 px in the reference setting.
  return std::round(40.0 * static_cast<double>(resolution) / 224.0);
}

std::string to_string(AnchorProvenance p) {
  switch (p) {
    case AnchorProvenance::kTrainingFree: return "training-free";
    case AnchorProvenance::kModelGuided: return "model-guided";
    case AnchorProvenance::kDataDriven: return "data-driven";
  }
  throw std::logic_error("anchor provenance: bad enum");
}

AnchorProvenance anchor_provenance_from_string(const std::string& s) {
  if (s == "training-free") return AnchorProvenance::kTrainingFree;
  if (s == "model-guided") return AnchorProvenance::kModelGuided;
  if (s == "data-driven") return AnchorProvenance::kDataDriven;
  throw std::invalid_argument("anchor provenance: unknown value '" + s + "'");
}

Tensor gif_filter_image(const Tensor& chw, double d0, Tensor* clamp_mask) {
  if (chw.rank() != 3) throw std::invalid_argument("gif: expected [C, H, W]");
  if (!(d0 > 0.0)) throw std::invalid_argument("gif: cutoff must be positive");
  const std::size_t c = chw.extent(0), h = chw.extent(1), w = chw.extent(2);
  Tensor gain = spectral_gain(h, w, d0);
  Tensor out(chw.shape());
  if (clamp_mask) *clamp_mask = Tensor(chw.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    filter_plane(chw.data() + ch * h * w, out.data() + ch * h * w, gain, h, w);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool inside = (out[i] >= 0.0 && out[i] <= 1.0);
    if (clamp_mask) (*clamp_mask)[i] = inside ? 1.0 : 0.0;
    if (!inside) out[i] = out[i] < 0.0 ? 0.0 : 1.0;
  }
  return out;
}

Tensor gif_filter_backward(const Tensor& grad_chw, const Tensor& clamp_mask,
                           double d0) {
  if (!grad_chw.same_shape(clamp_mask)) {
    throw std::invalid_argument("gif backward: mask shape mismatch");
  }
  const std::size_t c = grad_chw.extent(0), h = grad_chw.extent(1),
                    w = grad_chw.extent(2);
  Tensor gated(grad_chw.shape());
  for (std::size_t i = 0; i < gated.size(); ++i) {
    gated[i] = grad_chw[i] * clamp_mask[i];
  }
  Tensor gain = spectral_gain(h, w, d0);
  Tensor out(grad_chw.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    filter_plane(gated.data() + ch * h * w, out.data() + ch * h * w, gain, h, w);
  }
  return out;
}

Tensor gaussian_input_filter(const Tensor& image, double d0) {
  return gif_filter_image(image, d0);
}

Tensor white_input(const ModelConfig& cfg) {
  Tensor x({1, 3, cfg.resolution, cfg.resolution});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 1.0;
  return x;
}

AdaptedModel inject_fra(const VitModel& base, const Anchor& anchor,
                        const GifConfig& gif) {
  const ModelConfig& cfg = base.cfg;
  if (anchor.values.rank() != 2 || anchor.values.extent(0) != cfg.tokens() ||
      anchor.values.extent(1) != cfg.embed_dim) {
    throw std::invalid_argument("inject_fra: anchor shape mismatch");
  }
  gif.validate();
  AdaptedModel a;
  a.base = base;
  a.gif = gif;
  a.anchor = anchor;
  return a;
}

Anchor extract_anchor(const VitModel& source, bool apply_gif,
                      const GifConfig& gif, AnchorProvenance provenance) {
  Adapter ad;
  if (apply_gif) {
    gif.validate();
    ad.gif_enabled = true;
    ad.d0 = gif.cutoff;
  }
  TraceOptions opts;
  opts.block1_attn_out = true;
  ForwardTrace t = forward(ModelRef(source, ad), white_input(source.cfg), opts);

  Anchor a;
  a.values = Tensor({source.cfg.tokens(), source.cfg.embed_dim});
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    a.values[i] = t.block1_attn_out[i];
  }
  a.provenance = provenance;
  a.source_digest = params_digest(source);
  // Mixing defaults per paradigm; callers may override.
  switch (provenance) {
    case AnchorProvenance::kTrainingFree: a.alpha = 1.2; a.beta = -0.8; break;
    case AnchorProvenance::kModelGuided: a.alpha = 1.2; a.beta = 0.0; break;
    case AnchorProvenance::kDataDriven: a.alpha = 0.8; a.beta = 0.2; break;
  }
  return a;
}

void save_anchor(const Anchor& a, const GifConfig& gif, const std::string& path) {
  Container c;
  c.config = {
      {"kind", "anchor"},
      {"alpha", a.alpha},
      {"beta", a.beta},
      {"provenance", to_string(a.provenance)},
      {"gif", {{"cutoff", gif.cutoff}, {"enabled", gif.enabled}}},
  };
  c.meta = {
      {"source_digest", a.source_digest},
      {"optimization_budget", a.optimization_budget},
  };
  c.tensors.emplace("anchor", a.values);
  write_container(path, c);
}

std::pair<Anchor, GifConfig> load_anchor(const std::string& path) {
  Container c = read_container(path);
  if (c.config.value("kind", "") != "anchor") {
    throw std::runtime_error("load_anchor: container is not an anchor: " + path);
  }
  Anchor a;
  a.values = c.tensors.at("anchor");
  a.alpha = c.config.at("alpha").get<double>();
  a.beta = c.config.at("beta").get<double>();
  a.provenance = anchor_provenance_from_string(c.config.at("provenance"));
  a.source_digest = c.meta.value("source_digest", "");
  a.optimization_budget = c.meta.value("optimization_budget", std::size_t{0});
  GifConfig gif;
  gif.cutoff = c.config.at("gif").at("cutoff").get<double>();
  gif.enabled = c.config.at("gif").at("enabled").get<bool>();
  return {std::move(a), gif};
}

AnchorOptResult optimize_anchor(const VitModel& base, const Dataset& adv_source,
                                const AnchorBudget& budget,
                                const AttackConfig& attack, const GifConfig& gif,
                                double alpha, double beta, std::uint64_t seed) {
  if (adv_source.size() == 0) throw std::invalid_argument("optimize_anchor: empty dataset");
  if (budget.epochs == 0 || budget.batch_size == 0) {
    throw std::invalid_argument("optimize_anchor: zero budget");
  }
  gif.validate();
  attack.validate();

  Anchor anchor = extract_anchor(base, gif.enabled, gif,
                                 AnchorProvenance::kDataDriven);
  anchor.alpha = alpha;
  anchor.beta = beta;
  anchor.optimization_budget = adv_source.size() * budget.epochs;
  AdaptedModel adapted = inject_fra(base, anchor, gif);

  const std::size_t n = adv_source.size();
  Rng root(seed);

  // Adversarial examples against the current adapted model; regenerated each
  // epoch when the adversary is online.
  std::vector<Tensor> adv(n);
  auto regenerate = [&](std::uint64_t epoch) {
    ModelRef ref = adapted.ref();
    AttackConfig acfg = attack;
    for (std::size_t start = 0; start < n; start += budget.batch_size) {
      const std::size_t bs = std::min(budget.batch_size, n - start);
      std::vector<Tensor> imgs(bs);
      std::vector<std::size_t> labels(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        imgs[i] = adv_source.images[start + i].pixels;
        labels[i] = adv_source.images[start + i].label;
      }
      acfg.seed = root.split(epoch * 1000003 + start).next_u64();
      Tensor x_adv = run_attack(ref, pack_batch(imgs), labels, acfg);
      const std::size_t per = x_adv.size() / bs;
      for (std::size_t i = 0; i < bs; ++i) {
        Tensor img(adv_source.images[start + i].pixels.shape());
        for (std::size_t j = 0; j < per; ++j) img[j] = x_adv[i * per + j];
        adv[start + i] = std::move(img);
      }
    }
  };

  auto mean_loss = [&]() {
    ModelRef ref = adapted.ref();
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += budget.batch_size) {
      const std::size_t bs = std::min(budget.batch_size, n - start);
      std::vector<Tensor> imgs(adv.begin() + start, adv.begin() + start + bs);
      std::vector<std::size_t> labels(bs);
      for (std::size_t i = 0; i < bs; ++i) labels[i] = adv_source.images[start + i].label;
      total += loss_value(ref, pack_batch(imgs), labels, LossSpec{}) * bs;
    }
    return total / static_cast<double>(n);
  };

  AnchorOptResult result;
  regenerate(0);
  result.epoch_loss.push_back(mean_loss());

  Tensor velocity(adapted.anchor.values.shape());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < budget.epochs; ++epoch) {
    if (budget.online_adversary && epoch > 0) regenerate(epoch);
    Rng shuffler = root.split(500000 + epoch);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[shuffler.uniform_int(i)]);
    }
    double epoch_total = 0.0;
    ModelRef ref = adapted.ref();
    for (std::size_t start = 0; start < n; start += budget.batch_size) {
      const std::size_t bs = std::min(budget.batch_size, n - start);
      std::vector<Tensor> imgs(bs);
      std::vector<std::size_t> labels(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        imgs[i] = adv[order[start + i]];
        labels[i] = adv_source.images[order[start + i]].label;
      }
      double batch_loss = 0.0;
      Tensor g = anchor_grad(ref, pack_batch(imgs), labels, &batch_loss);
      epoch_total += batch_loss * bs;
      for (std::size_t j = 0; j < velocity.size(); ++j) {
        velocity[j] = budget.momentum * velocity[j] - budget.learning_rate * g[j];
        adapted.anchor.values[j] += velocity[j];
      }
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(n));
  }

  result.anchor = adapted.anchor;
  return result;
}

}  // namespace radapt
