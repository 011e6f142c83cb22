#include "radapt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "radapt/fourier.hpp"
#include "radapt/grad.hpp"
#include "radapt/rng.hpp"

namespace radapt {
namespace {

void write_matrix_csv(const std::string& path, const std::string& provenance,
                      const std::vector<std::string>& col_labels,
                      const std::vector<std::string>& row_labels,
                      const Tensor& values) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "#" << provenance << "\n";
  f << "row";
  for (const auto& c : col_labels) f << "," << c;
  f << "\n";
  f.precision(17);
  for (std::size_t r = 0; r < values.extent(0); ++r) {
    f << (row_labels.empty() ? std::to_string(r) : row_labels[r]);
    for (std::size_t c = 0; c < values.extent(1); ++c) f << "," << values(r, c);
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

// Center a Gram matrix in place: K <- HKH.
void center_gram(Tensor& k) {
  const std::size_t n = k.extent(0);
  std::vector<double> row_mean(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row_mean[i] += k(i, j);
    row_mean[i] /= static_cast<double>(n);
    total += row_mean[i];
  }
  total /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      k(i, j) += total - row_mean[i] - row_mean[j];
    }
  }
}

Tensor gram(const Tensor& x) {
  const std::size_t n = x.extent(0), d = x.extent(1);
  Tensor k({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += x(i, c) * x(j, c);
      k(i, j) = s;
      k(j, i) = s;
    }
  }
  return k;
}

double frobenius_inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Flattened block-1 attention outputs per probe image, given any ModelRef.
std::vector<std::vector<double>> block1_outputs(const ModelRef& m,
                                                const std::vector<Tensor>& imgs) {
  TraceOptions opts;
  opts.block1_attn_out = true;
  std::vector<std::vector<double>> out;
  const std::size_t kBatch = 32;
  for (std::size_t start = 0; start < imgs.size(); start += kBatch) {
    const std::size_t bs = std::min(kBatch, imgs.size() - start);
    std::vector<Tensor> chunk(imgs.begin() + start, imgs.begin() + start + bs);
    ForwardTrace t = forward(m, pack_batch(chunk), opts);
    const std::size_t per = t.block1_attn_out.size() / bs;
    for (std::size_t i = 0; i < bs; ++i) {
      out.emplace_back(t.block1_attn_out.data() + i * per,
                       t.block1_attn_out.data() + (i + 1) * per);
    }
  }
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw std::domain_error("insensitivity: zero-norm attention output");
  }
  return dot / std::sqrt(na * nb);
}

double batch_accuracy(const ModelRef& m, const Tensor& batch,
                      const std::vector<std::size_t>& labels) {
  std::vector<std::size_t> preds = predict(m, batch);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

}  // namespace

double linear_cka(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2 || x.extent(0) != y.extent(0)) {
    throw std::invalid_argument("cka: expected [n, d] features with equal n");
  }
  if (x.extent(0) < 2) throw std::invalid_argument("cka: need n >= 2");
  if (!x.all_finite() || !y.all_finite()) {
    throw std::invalid_argument("cka: non-finite features");
  }
  Tensor k = gram(x);
  Tensor l = gram(y);
  center_gram(k);
  center_gram(l);
  const double kk = frobenius_inner(k, k);
  const double ll = frobenius_inner(l, l);
  if (kk <= 0.0 || ll <= 0.0) {
    throw std::domain_error("cka: degenerate (constant) features");
  }
  return frobenius_inner(k, l) / std::sqrt(kk * ll);
}

void CkaMap::write_csv(const std::string& path, const std::string& provenance) const {
  write_matrix_csv(path, provenance, col_labels, row_labels, values);
}

CkaMap cka_map(const ModelRef& a, const ModelRef& b, const Dataset& probe) {
  if (probe.size() < 64) throw std::invalid_argument("cka_map: need >= 64 probe samples");
  const std::size_t blocks_a = a.model->cfg.blocks;
  const std::size_t blocks_b = b.model->cfg.blocks;

  auto collect = [&](const ModelRef& m, std::size_t blocks) {
    TraceOptions opts;
    opts.block_cls = true;
    const std::size_t n = probe.size();
    std::vector<Tensor> feats(blocks + 1);
    feats[0] = Tensor({n, m.model->cfg.embed_dim});
    for (std::size_t bi = 0; bi < blocks; ++bi) {
      feats[bi + 1] = Tensor({n, m.model->cfg.embed_dim});
    }
    const std::size_t kBatch = 32;
    for (std::size_t start = 0; start < n; start += kBatch) {
      const std::size_t bs = std::min(kBatch, n - start);
      std::vector<Tensor> imgs(bs);
      for (std::size_t i = 0; i < bs; ++i) imgs[i] = probe.images[start + i].pixels;
      ForwardTrace t = forward(m, pack_batch(imgs), opts);
      const std::size_t d = m.model->cfg.embed_dim;
      for (std::size_t i = 0; i < bs; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          feats[0]((start + i), j) = t.emb_feature(i, j);
          for (std::size_t bi = 0; bi < blocks; ++bi) {
            feats[bi + 1]((start + i), j) = t.block_cls[bi](i, j);
          }
        }
      }
    }
    return feats;
  };

  auto labels_for = [](std::size_t blocks) {
    std::vector<std::string> labels{"emb"};
    for (std::size_t i = 0; i < blocks; ++i) labels.push_back("b" + std::to_string(i + 1));
    return labels;
  };

  std::vector<Tensor> fa = collect(a, blocks_a);
  std::vector<Tensor> fb = collect(b, blocks_b);

  CkaMap map;
  map.row_labels = labels_for(blocks_a);
  map.col_labels = labels_for(blocks_b);
  map.values = Tensor({fa.size(), fb.size()});
  for (std::size_t r = 0; r < fa.size(); ++r) {
    for (std::size_t c = 0; c < fb.size(); ++c) {
      map.values(r, c) = linear_cka(fa[r], fb[c]);
    }
  }
  map.probe_description =
      std::to_string(probe.size()) + " images @ " +
      std::to_string(probe.resolution()) + "px";
  return map;
}

void SpectralShiftMap::write_csv(const std::string& path,
                                 const std::string& provenance) const {
  write_matrix_csv(path, provenance, {}, {}, values);
}

Tensor patch_kernels(const VitModel& m) {
  const Tensor& w = m.p("emb.w");
  const std::size_t d = m.cfg.embed_dim, p = m.cfg.patch_size;
  return Tensor({d, 3, p, p}, w.raw());
}

SpectralShiftMap spectral_shift(const Tensor& w_a, const Tensor& w_b) {
  if (!w_a.same_shape(w_b) || w_a.rank() != 4) {
    throw std::invalid_argument("spectral_shift: kernels must share a [O,I,K,K] shape");
  }
  const std::size_t o = w_a.extent(0), in = w_a.extent(1);
  const std::size_t kh = w_a.extent(2), kw = w_a.extent(3);

  SpectralShiftMap map;
  map.values = Tensor({kh, kw});
  auto magnitude = [&](const Tensor& w, std::size_t oc, std::size_t ic) {
    ComplexGrid g(kh, kw);
    for (std::size_t i = 0; i < kh * kw; ++i) {
      g.re[i] = w.data()[(oc * in + ic) * kh * kw + i];
    }
    ComplexGrid f = dft2(g);
    Tensor mag({kh, kw});
    for (std::size_t i = 0; i < kh * kw; ++i) {
      mag[i] = std::hypot(f.re[i], f.im[i]);
    }
    return fftshift(mag);
  };

  const double inv = 1.0 / static_cast<double>(o * in);
  for (std::size_t oc = 0; oc < o; ++oc) {
    for (std::size_t ic = 0; ic < in; ++ic) {
      Tensor ma = magnitude(w_a, oc, ic);
      Tensor mb = magnitude(w_b, oc, ic);
      for (std::size_t i = 0; i < kh * kw; ++i) {
        map.values[i] += (ma[i] - mb[i]) * inv;
      }
    }
  }
  return map;
}

double low_frequency_mass(const SpectralShiftMap& map, double radius) {
  const std::size_t h = map.values.extent(0), w = map.values.extent(1);
  Tensor dist = centered_distance_matrix(h, w);
  double max_d = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) max_d = std::max(max_d, dist[i]);
  if (!(radius > 0.0) || radius >= max_d) {
    throw std::invalid_argument("low_frequency_mass: radius out of range");
  }
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= radius) {
      in_sum += map.values[i];
      ++in_n;
    } else {
      out_sum += map.values[i];
      ++out_n;
    }
  }
  if (in_n == 0 || out_n == 0) throw std::invalid_argument("low_frequency_mass: empty region");
  return in_sum / in_n - out_sum / out_n;
}

void ReplacementCurve::write_csv(const std::string& path,
                                 const std::string& provenance) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "#" << provenance << "\n";
  f << "prefix,last_unit,clean_accuracy,robust_accuracy\n";
  f.precision(17);
  for (std::size_t i = 0; i < clean_accuracy.size(); ++i) {
    f << i << "," << (i == 0 ? "-" : unit_order[i - 1]) << ","
      << clean_accuracy[i] << "," << robust_accuracy[i] << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

ReplacementCurve progressive_replacement(const VitModel& target,
                                         const VitModel& source,
                                         const Dataset& d,
                                         const AttackConfig& cfg) {
  if (!(target.cfg == source.cfg)) {
    throw std::invalid_argument("progressive_replacement: config mismatch");
  }
  ReplacementCurve curve;
  curve.unit_order = unit_ids(target.cfg);
  VitModel hybrid = target;
  for (std::size_t prefix = 0; prefix <= curve.unit_order.size(); ++prefix) {
    if (prefix > 0) hybrid = swap_unit(hybrid, source, curve.unit_order[prefix - 1]);
    RobustnessReport rep = evaluate(hybrid, d, cfg);
    curve.clean_accuracy.push_back(rep.clean_accuracy);
    curve.robust_accuracy.push_back(rep.robust_accuracy);
  }
  return curve;
}

InsensitivityScore insensitivity_score(const ModelRef& m, const Dataset& probe,
                                       const Tensor& reference) {
  if (probe.size() < 2) throw std::invalid_argument("insensitivity: need >= 2 probe images");
  std::vector<Tensor> imgs(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) imgs[i] = probe.images[i].pixels;
  std::vector<std::vector<double>> outs = block1_outputs(m, imgs);
  std::vector<std::vector<double>> ref_out =
      block1_outputs(m, {reference.rank() == 4
                             ? Tensor({reference.extent(1), reference.extent(2),
                                       reference.extent(3)},
                                      reference.raw())
                             : reference});

  InsensitivityScore score;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (std::size_t j = i + 1; j < outs.size(); ++j) {
      score.pairwise += cosine(outs[i], outs[j]);
      ++pairs;
    }
    score.vs_reference += cosine(outs[i], ref_out[0]);
  }
  score.pairwise /= static_cast<double>(pairs);
  score.vs_reference /= static_cast<double>(outs.size());
  return score;
}

void ShapleyVector::write_csv(const std::string& path,
                              const std::string& provenance) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "#" << provenance << "\n";
  f << "head,phi,variance\n";
  f.precision(17);
  for (std::size_t h = 0; h < phi.size(); ++h) {
    f << h << "," << phi[h] << ","
      << (variance.empty() ? 0.0 : variance[h]) << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

ShapleyVector shapley_heads(const VitModel& m, const Tensor& adv_batch,
                            const std::vector<std::size_t>& labels, bool exact,
                            std::size_t block,
                            ShapleyCharacteristic characteristic,
                            std::size_t sample_budget, std::uint64_t seed) {
  const std::size_t h_n = m.cfg.heads;
  if (exact && h_n > 8) {
    throw std::invalid_argument("shapley: exact mode requires <= 8 heads");
  }
  if (block >= m.cfg.blocks) throw std::invalid_argument("shapley: block out of range");

  auto value_of = [&](std::size_t mask) {
    std::set<std::size_t> keep;
    for (std::size_t h = 0; h < h_n; ++h) {
      if (mask & (std::size_t{1} << h)) keep.insert(h);
    }
    VitModel ablated = ablate_heads(m, block, keep);
    if (characteristic == ShapleyCharacteristic::kRobustAccuracy) {
      return batch_accuracy(ablated, adv_batch, labels);
    }
    return -loss_value(ablated, adv_batch, labels, LossSpec{});
  };

  ShapleyVector out;
  out.block = block;
  out.exact = exact;
  out.phi.assign(h_n, 0.0);

  if (exact) {
    const std::size_t total = std::size_t{1} << h_n;
    out.coalition_value.resize(total);
    for (std::size_t mask = 0; mask < total; ++mask) {
      out.coalition_value[mask] = value_of(mask);
    }
    // Precompute |S|! (H - |S| - 1)! / H!.
    std::vector<double> fact(h_n + 1, 1.0);
    for (std::size_t i = 1; i <= h_n; ++i) fact[i] = fact[i - 1] * i;
    for (std::size_t h = 0; h < h_n; ++h) {
      const std::size_t bit = std::size_t{1} << h;
      for (std::size_t mask = 0; mask < total; ++mask) {
        if (mask & bit) continue;
        const std::size_t s = static_cast<std::size_t>(__builtin_popcountll(mask));
        const double weight = fact[s] * fact[h_n - s - 1] / fact[h_n];
        out.phi[h] += weight * (out.coalition_value[mask | bit] - out.coalition_value[mask]);
      }
    }
  } else {
    out.variance.assign(h_n, 0.0);
    std::vector<double> sum(h_n, 0.0), sumsq(h_n, 0.0);
    std::vector<std::size_t> counts(h_n, 0);
    Rng rng(seed);
    std::vector<std::size_t> perm(h_n);
    for (std::size_t p = 0; p < sample_budget; ++p) {
      for (std::size_t i = 0; i < h_n; ++i) perm[i] = i;
      for (std::size_t i = h_n; i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
      }
      std::size_t mask = 0;
      double prev = value_of(0);
      for (std::size_t i = 0; i < h_n; ++i) {
        mask |= std::size_t{1} << perm[i];
        const double cur = value_of(mask);
        const double marginal = cur - prev;
        sum[perm[i]] += marginal;
        sumsq[perm[i]] += marginal * marginal;
        ++counts[perm[i]];
        prev = cur;
      }
    }
    for (std::size_t h = 0; h < h_n; ++h) {
      const double n = static_cast<double>(counts[h]);
      out.phi[h] = sum[h] / n;
      if (counts[h] > 1) {
        out.variance[h] = (sumsq[h] - sum[h] * sum[h] / n) / (n - 1.0);
      }
    }
  }
  return out;
}

}  // namespace radapt
