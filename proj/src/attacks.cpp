#include "radapt/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "radapt/rng.hpp"

namespace radapt {
namespace {

// Attacks ascend an adversarial objective. Cross-entropy and DLR grow as the
// prediction degrades, but the cw margin shrinks, so its gradient is negated.
double objective_sign(LossKind kind) {
  return kind == LossKind::kCwMargin ? -1.0 : 1.0;
}

void project(Tensor& x, const Tensor& clean, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = std::max(clean[i] - eps, 0.0);
    const double hi = std::min(clean[i] + eps, 1.0);
    x[i] = std::clamp(x[i], lo, hi);
  }
}

// Per-sample margin z_y - max_{i != y} z_i; negative means misclassified.
std::vector<double> margins(const ModelRef& m, const Tensor& batch,
                            const std::vector<std::size_t>& labels) {
  ForwardTrace t = forward(m, batch);
  const std::size_t B = t.logits.extent(0), K = t.logits.extent(1);
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t y = labels[b];
    double rival = -1e300;
    for (std::size_t i = 0; i < K; ++i) {
      if (i != y) rival = std::max(rival, t.logits(b, i));
    }
    out[b] = t.logits(b, y) - rival;
  }
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("attack: epsilon must be positive");
  }
  if (kind == Kind::kPgd) {
    if (steps == 0) throw std::invalid_argument("attack: pgd needs steps >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("attack: step size must be positive");
  }
  if (kind == Kind::kSquare && queries == 0) {
    throw std::invalid_argument("attack: square needs queries >= 1");
  }
}

Tensor fgsm(const ModelRef& m, const Tensor& batch,
            const std::vector<std::size_t>& labels, double epsilon) {
  LossSpec spec;  // cross-entropy
  Tensor g = input_grad(m, batch, labels, spec);
  Tensor out = batch;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = (g[i] > 0.0) ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    out[i] = std::clamp(out[i] + epsilon * s, 0.0, 1.0);
  }
  return out;
}

Tensor pgd(const ModelRef& m, const Tensor& batch,
           const std::vector<std::size_t>& labels, const AttackConfig& cfg) {
  cfg.validate();
  LossSpec spec;
  spec.kind = cfg.loss;
  spec.kappa = cfg.kappa;
  const double dir = objective_sign(cfg.loss);

  Tensor x = batch;
  if (cfg.random_start) {
    Rng rng = Rng(cfg.seed).split(0x70676400);  // "pgd"
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    project(x, batch, cfg.epsilon);
  }
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tensor g = input_grad(m, x, labels, spec);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = dir * g[i];
      const double s = (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      x[i] += cfg.step_size * s;
    }
    project(x, batch, cfg.epsilon);
  }
  return x;
}

Tensor square_attack(const ModelRef& m, const Tensor& batch,
                     const std::vector<std::size_t>& labels,
                     const AttackConfig& cfg) {
  cfg.validate();
  const std::size_t B = batch.extent(0), C = batch.extent(1);
  const std::size_t R = batch.extent(2);
  Rng root = Rng(cfg.seed).split(0x73717200);  // "sqr"

  // Vertical +-eps stripe init, kept per sample only when it helps.
  Tensor x = batch;
  {
    Tensor striped = batch;
    for (std::size_t b = 0; b < B; ++b) {
      Rng rng = root.split(b);
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t col = 0; col < R; ++col) {
          const double d = (rng.uniform() < 0.5 ? -1.0 : 1.0) * cfg.epsilon;
          for (std::size_t row = 0; row < R; ++row) {
            double& px = striped(b, c, row, col);
            px = std::clamp(px + d, 0.0, 1.0);
          }
        }
      }
    }
    std::vector<double> base_m = margins(m, batch, labels);
    std::vector<double> stripe_m = margins(m, striped, labels);
    for (std::size_t b = 0; b < B; ++b) {
      if (stripe_m[b] < base_m[b]) {
        for (std::size_t i = 0; i < C * R * R; ++i) {
          x[b * C * R * R + i] = striped[b * C * R * R + i];
        }
      }
    }
  }

  std::vector<double> best = margins(m, x, labels);
  const std::size_t shrink_every = std::max<std::size_t>(1, cfg.queries / 5);
  std::size_t side = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(std::sqrt(0.4) * R)));

  for (std::size_t q = 0; q < cfg.queries; ++q) {
    if (q > 0 && q % shrink_every == 0 && side > 1) side /= 2;
    bool any_alive = false;
    Tensor proposal = x;
    for (std::size_t b = 0; b < B; ++b) {
      if (best[b] < 0.0) continue;  // already misclassified
      any_alive = true;
      Rng rng = root.split((q + 1) * 0x100000 + b);
      const std::size_t r0 = rng.uniform_int(R - side + 1);
      const std::size_t c0 = rng.uniform_int(R - side + 1);
      for (std::size_t c = 0; c < C; ++c) {
        const double d = (rng.uniform() < 0.5 ? -1.0 : 1.0) * cfg.epsilon;
        for (std::size_t rr = 0; rr < side; ++rr) {
          for (std::size_t cc = 0; cc < side; ++cc) {
            proposal(b, c, r0 + rr, c0 + cc) =
                std::clamp(batch(b, c, r0 + rr, c0 + cc) + d, 0.0, 1.0);
          }
        }
      }
    }
    if (!any_alive) break;
    std::vector<double> trial = margins(m, proposal, labels);
    for (std::size_t b = 0; b < B; ++b) {
      if (best[b] >= 0.0 && trial[b] < best[b]) {
        best[b] = trial[b];
        for (std::size_t i = 0; i < C * R * R; ++i) {
          x[b * C * R * R + i] = proposal[b * C * R * R + i];
        }
      }
    }
  }
  return x;
}

Tensor run_attack(const ModelRef& m, const Tensor& batch,
                  const std::vector<std::size_t>& labels,
                  const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackConfig::Kind::kFgsm: return fgsm(m, batch, labels, cfg.epsilon);
    case AttackConfig::Kind::kPgd: return pgd(m, batch, labels, cfg);
    case AttackConfig::Kind::kSquare: return square_attack(m, batch, labels, cfg);
  }
  throw std::logic_error("attack: bad kind");
}

void RobustnessReport::write_csv(const std::string& path,
                                 const std::string& provenance) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "#" << provenance << "\n";
  f << "sample_id,label,clean_pred,adv_pred,success,linf\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    f << i << "," << labels[i] << "," << clean_preds[i] << "," << adv_preds[i]
      << "," << (success[i] ? 1 : 0) << "," << linf[i] << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

RobustnessReport evaluate(const ModelRef& m, const Dataset& d,
                          const AttackConfig& cfg) {
  cfg.validate();
  if (d.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const std::size_t kBatch = 32;
  Rng root(cfg.seed);

  RobustnessReport rep;
  rep.config = cfg;
  double linf_total = 0.0;
  std::size_t clean_ok = 0, robust_ok = 0;

  for (std::size_t start = 0; start < d.size(); start += kBatch) {
    const std::size_t bs = std::min(kBatch, d.size() - start);
    std::vector<Tensor> imgs(bs);
    std::vector<std::size_t> labels(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      imgs[i] = d.images[start + i].pixels;
      labels[i] = d.images[start + i].label;
    }
    Tensor batch = pack_batch(imgs);
    std::vector<std::size_t> clean = predict(m, batch);

    AttackConfig bc = cfg;
    bc.seed = root.split(start / kBatch).next_u64();
    Tensor adv = run_attack(m, batch, labels, bc);
    std::vector<std::size_t> robust = predict(m, adv);

    const std::size_t per = adv.size() / bs;
    for (std::size_t i = 0; i < bs; ++i) {
      double linf = 0.0;
      for (std::size_t j = 0; j < per; ++j) {
        linf = std::max(linf, std::abs(adv[i * per + j] - batch[i * per + j]));
      }
      linf_total += linf;
      rep.linf.push_back(linf);
      rep.labels.push_back(labels[i]);
      rep.clean_preds.push_back(clean[i]);
      rep.adv_preds.push_back(robust[i]);
      const bool was_ok = clean[i] == labels[i];
      const bool still_ok = robust[i] == labels[i];
      rep.success.push_back(was_ok && !still_ok);
      clean_ok += was_ok;
      robust_ok += still_ok;
    }
  }

  const double n = static_cast<double>(d.size());
  rep.clean_accuracy = clean_ok / n;
  rep.robust_accuracy = robust_ok / n;
  rep.mean_linf = linf_total / n;
  return rep;
}

}  // namespace radapt
