#include "radapt/grad.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <set>
#include <stdexcept>

#include "radapt/defense.hpp"
#include "radapt/kernels.hpp"

namespace radapt {
namespace {

using detail::Activations;
using detail::BlockActs;

std::string blk(std::size_t i, const char* suffix) {
  return "blk" + std::to_string(i) + "." + suffix;
}

struct Wants {
  bool input = false;
  bool anchor = false;
  std::set<std::string> params;

  bool param(const std::string& name) const { return params.count(name) > 0; }
  bool any_params() const { return !params.empty(); }
};

struct BackwardOut {
  Tensor d_input;
  Tensor d_anchor;
  std::map<std::string, Tensor> d_params;
  double loss = 0.0;
};

double gelu_deriv(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * std::exp(-0.5 * x * x) * 0.3989422804014327;  // 1/sqrt(2 pi)
}

// Mean-batch loss and its gradient w.r.t. logits (or directly w.r.t. z_v for
// the embedding objective).
double loss_and_dlogits(const Activations& acts,
                        const std::vector<std::size_t>& labels,
                        const LossSpec& spec, Tensor* dlogits, Tensor* dz_direct) {
  const std::size_t B = acts.logits.extent(0);
  const std::size_t K = acts.logits.extent(1);
  if (labels.size() != B) throw std::invalid_argument("loss: label count mismatch");

  LossKind kind = spec.kind;
  if (kind == LossKind::kDlr && K < 3) {
    static bool warned = false;
    if (!warned) {
      std::fprintf(stderr, "warning: dlr loss requires K >= 3; falling back to cw-margin\n");
      warned = true;
    }
    kind = LossKind::kCwMargin;
  }

  if (dlogits) *dlogits = Tensor({B, K});
  const double inv_b = 1.0 / static_cast<double>(B);
  double total = 0.0;

  switch (kind) {
    case LossKind::kCrossEntropy: {
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t y = labels[b];
        if (y >= K) throw std::invalid_argument("loss: label out of range");
        total += -std::log(std::max(acts.probs(b, y), 1e-300));
        if (dlogits) {
          for (std::size_t i = 0; i < K; ++i) {
            (*dlogits)(b, i) = (acts.probs(b, i) - (i == y ? 1.0 : 0.0)) * inv_b;
          }
        }
      }
      break;
    }
    case LossKind::kCwMargin: {
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t y = labels[b];
        std::size_t rival = (y == 0) ? 1 : 0;
        for (std::size_t i = 0; i < K; ++i) {
          if (i != y && acts.logits(b, i) > acts.logits(b, rival)) rival = i;
        }
        const double raw = acts.logits(b, y) - acts.logits(b, rival);
        if (raw > -spec.kappa) {
          total += raw;
          if (dlogits) {
            (*dlogits)(b, y) += inv_b;
            (*dlogits)(b, rival) -= inv_b;
          }
        } else {
          total += -spec.kappa;  // saturated: zero gradient
        }
      }
      break;
    }
    case LossKind::kDlr: {
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t y = labels[b];
        std::vector<std::size_t> order(K);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
          return acts.logits(b, a) > acts.logits(b, c);
        });
        std::size_t rival = (y == 0) ? 1 : 0;
        for (std::size_t i = 0; i < K; ++i) {
          if (i != y && acts.logits(b, i) > acts.logits(b, rival)) rival = i;
        }
        const double num = -(acts.logits(b, y) - acts.logits(b, rival));
        const double den = acts.logits(b, order[0]) - acts.logits(b, order[2]) + 1e-12;
        total += num / den;
        if (dlogits) {
          (*dlogits)(b, y) += -inv_b / den;
          (*dlogits)(b, rival) += inv_b / den;
          const double dden = -num / (den * den) * inv_b;
          (*dlogits)(b, order[0]) += dden;
          (*dlogits)(b, order[2]) -= dden;
        }
      }
      break;
    }
    case LossKind::kEmbeddingDistance: {
      if (!spec.ref_embeddings) {
        throw std::invalid_argument("loss: embedding-distance requires reference embeddings");
      }
      const Tensor& ref = *spec.ref_embeddings;
      if (!ref.same_shape(acts.z_v)) {
        throw std::invalid_argument("loss: reference embedding shape mismatch");
      }
      if (dz_direct) *dz_direct = Tensor(acts.z_v.shape());
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < acts.z_v.extent(1); ++j) {
          const double diff = acts.z_v(b, j) - ref(b, j);
          total += diff * diff;
          if (dz_direct) (*dz_direct)(b, j) = 2.0 * diff * inv_b;
        }
      }
      break;
    }
  }
  return total * inv_b;
}

void colsum_into(const Tensor& x, std::size_t rows, std::size_t cols, Tensor& out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xr[j];
  }
}

// dx for y = LN(x) * w + b given cached mean/rstd; accumulates dw/db when
// requested.
void layernorm_backward(const Tensor& x, const Tensor& mean, const Tensor& rstd,
                        const Tensor& w, const Tensor& dy, Tensor& dx,
                        Tensor* dw, Tensor* db, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    const double* dyr = dy.data() + r * d;
    double* dxr = dx.data() + r * d;
    const double mu = mean[r];
    const double rs = rstd[r];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (xr[j] - mu) * rs;
      const double dxhat = dyr[j] * w[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      if (dw) (*dw)[j] += dyr[j] * xhat;
      if (db) (*db)[j] += dyr[j];
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (xr[j] - mu) * rs;
      const double dxhat = dyr[j] * w[j];
      dxr[j] += rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

BackwardOut backward(const ModelRef& mref, const Tensor& batch,
                     const std::vector<std::size_t>& labels, const LossSpec& spec,
                     const Wants& wants) {
  const VitModel& m = *mref.model;
  const ModelConfig& cfg = m.cfg;

  Activations acts;
  detail::run_forward(mref, batch, acts);

  BackwardOut out;
  Tensor dlogits, dz_direct;
  out.loss = loss_and_dlogits(acts, labels, spec, &dlogits, &dz_direct);
  if (!std::isfinite(out.loss)) throw std::runtime_error("grad: non-finite loss");

  const std::size_t B = batch.extent(0);
  const std::size_t N = cfg.tokens();
  const std::size_t Np = cfg.patch_tokens();
  const std::size_t D = cfg.embed_dim;
  const std::size_t H = cfg.heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t M = cfg.mlp_dim();
  const std::size_t K = cfg.num_classes;
  const std::size_t dout = cfg.out_dim();
  const std::size_t P = cfg.patch_size;
  const std::size_t G = cfg.grid();
  const std::size_t R = cfg.resolution;
  const std::size_t cpp = 3 * P * P;

  auto grad_for = [&](const std::string& name) -> Tensor& {
    auto it = out.d_params.find(name);
    if (it == out.d_params.end()) {
      it = out.d_params.emplace(name, Tensor(m.p(name).shape())).first;
    }
    return it->second;
  };

  // Cosine head: logits_i = tau * <z, p_i> / (|z| |p_i|).
  Tensor dz({B, dout});
  const Tensor& proto = m.p("head.proto");
  const bool spec_is_embedding = (spec.kind == LossKind::kEmbeddingDistance);
  if (!spec_is_embedding) {
    double dlog_tau = 0.0;
    Tensor dproto({K, dout});
    for (std::size_t b = 0; b < B; ++b) {
      double zn2 = 0.0;
      for (std::size_t j = 0; j < dout; ++j) zn2 += acts.z_v(b, j) * acts.z_v(b, j);
      const double zn = std::sqrt(zn2);
      for (std::size_t i = 0; i < K; ++i) {
        const double dl = dlogits(b, i);
        if (dl == 0.0) continue;
        double pn2 = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < dout; ++j) {
          pn2 += proto(i, j) * proto(i, j);
          dot += acts.z_v(b, j) * proto(i, j);
        }
        const double pn = std::sqrt(pn2);
        const double denom = zn * pn + 1e-300;
        const double cosv = dot / denom;
        dlog_tau += dl * acts.tau * cosv;  // d tau / d log_tau = tau
        const double dcos = dl * acts.tau;
        for (std::size_t j = 0; j < dout; ++j) {
          dz(b, j) += dcos * (proto(i, j) / denom - cosv * acts.z_v(b, j) / zn2);
          dproto(i, j) += dcos * (acts.z_v(b, j) / denom - cosv * proto(i, j) / pn2);
        }
      }
    }
    if (wants.param("head.proto")) grad_for("head.proto") = dproto;
    if (wants.param("head.log_tau")) grad_for("head.log_tau")[0] = dlog_tau;
  } else {
    dz = dz_direct;
    if (wants.param("head.proto")) grad_for("head.proto");   // zeros
    if (wants.param("head.log_tau")) grad_for("head.log_tau");
  }

  // head.out: z = lnf_out W^T + b
  Tensor dlnf_out({B, D});
  kernels::matmul(dz.data(), m.p("head.out.w").data(), dlnf_out.data(), B, dout,
                  D, false, false, false);
  if (wants.param("head.out.w")) {
    kernels::matmul(dz.data(), acts.lnf_out.data(), grad_for("head.out.w").data(),
                    dout, B, D, true, false, false);
  }
  if (wants.param("head.out.b")) colsum_into(dz, B, dout, grad_for("head.out.b"));

  // Final layer norm over the CLS token.
  Tensor d_final_cls({B, D});
  {
    Tensor* dw = wants.param("head.ln.w") ? &grad_for("head.ln.w") : nullptr;
    Tensor* db = wants.param("head.ln.b") ? &grad_for("head.ln.b") : nullptr;
    layernorm_backward(acts.final_cls, acts.lnf_mean, acts.lnf_rstd,
                       m.p("head.ln.w"), dlnf_out, d_final_cls, dw, db, B, D);
  }

  Tensor dstream({B, N, D});
  for (std::size_t b = 0; b < B; ++b) {
    std::memcpy(&dstream(b, 0, 0), d_final_cls.data() + b * D, D * sizeof(double));
  }

  for (std::size_t bi = cfg.blocks; bi-- > 0;) {
    const BlockActs& ba = acts.blocks[bi];
    // MLP branch. Residual: dstream feeds both stream_mid and the MLP path.
    const Tensor& dmlp_out = dstream;
    if (wants.param(blk(bi, "proj.b"))) {
      colsum_into(dmlp_out, B * N, D, grad_for(blk(bi, "proj.b")));
    }
    Tensor dfc_act({B, N, M});
    kernels::matmul(dmlp_out.data(), m.p(blk(bi, "proj.w")).data(), dfc_act.data(),
                    B * N, D, M, false, false, false);
    if (wants.param(blk(bi, "proj.w"))) {
      kernels::matmul(dmlp_out.data(), ba.fc_act.data(),
                      grad_for(blk(bi, "proj.w")).data(), D, B * N, M, true,
                      false, false);
    }
    Tensor dfc_pre({B, N, M});
    for (std::size_t i = 0; i < dfc_pre.size(); ++i) {
      dfc_pre[i] = dfc_act[i] * gelu_deriv(ba.fc_pre[i]);
    }
    if (wants.param(blk(bi, "fc.b"))) {
      colsum_into(dfc_pre, B * N, M, grad_for(blk(bi, "fc.b")));
    }
    Tensor dln2_out({B, N, D});
    kernels::matmul(dfc_pre.data(), m.p(blk(bi, "fc.w")).data(), dln2_out.data(),
                    B * N, M, D, false, false, false);
    if (wants.param(blk(bi, "fc.w"))) {
      kernels::matmul(dfc_pre.data(), ba.ln2_out.data(),
                      grad_for(blk(bi, "fc.w")).data(), M, B * N, D, true, false,
                      false);
    }
    Tensor dstream_mid = dstream;  // residual pass-through
    {
      Tensor* dw = wants.param(blk(bi, "ln2.w")) ? &grad_for(blk(bi, "ln2.w")) : nullptr;
      Tensor* db = wants.param(blk(bi, "ln2.b")) ? &grad_for(blk(bi, "ln2.b")) : nullptr;
      layernorm_backward(ba.stream_mid, ba.ln2_mean, ba.ln2_rstd,
                         m.p(blk(bi, "ln2.w")), dln2_out, dstream_mid, dw, db,
                         B * N, D);
    }

    // Attention branch.
    Tensor dattn_proj({B, N, D});
    const bool fra_here = (bi == 0 && mref.adapter.fra_enabled);
    if (fra_here) {
      const double a = mref.adapter.alpha, be = mref.adapter.beta;
      for (std::size_t i = 0; i < dattn_proj.size(); ++i) {
        dattn_proj[i] = be * dstream_mid[i];
      }
      if (wants.anchor) {
        out.d_anchor = Tensor({N, D});
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t j = 0; j < D; ++j) {
              out.d_anchor(n, j) += a * dstream_mid(b, n, j);
            }
          }
        }
      }
    } else {
      dattn_proj = dstream_mid;
    }

    if (wants.param(blk(bi, "attn.b"))) {
      colsum_into(dattn_proj, B * N, D, grad_for(blk(bi, "attn.b")));
    }
    Tensor dhead_cat({B, N, D});
    kernels::matmul(dattn_proj.data(), m.p(blk(bi, "attn.w")).data(),
                    dhead_cat.data(), B * N, D, D, false, false, false);
    if (wants.param(blk(bi, "attn.w"))) {
      kernels::matmul(dattn_proj.data(), ba.head_cat.data(),
                      grad_for(blk(bi, "attn.w")).data(), D, B * N, D, true,
                      false, false);
    }

    // Ablation mask gates the per-head context gradient.
    Tensor dctx({B, H, N, hd});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        if (m.head_mask[bi][h] == 0) continue;
        for (std::size_t n = 0; n < N; ++n) {
          std::memcpy(&dctx(b, h, n, 0), &dhead_cat(b, n, h * hd),
                      hd * sizeof(double));
        }
      }
    }

    Tensor dattw({B, H, N, N});
    kernels::batched_matmul(dctx.data(), ba.v.data(), dattw.data(), B * H, N, hd,
                            N, N * hd, N * hd, N * N, /*trans_b=*/true);
    Tensor dv({B, H, N, hd});
    for (std::size_t g = 0; g < B * H; ++g) {
      kernels::matmul(ba.attw.data() + g * N * N, dctx.data() + g * N * hd,
                      dv.data() + g * N * hd, N, N, hd, /*trans_a=*/true, false,
                      false);
    }

    // Softmax rows, then the pre-softmax 1/sqrt(hd) scale.
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor dscores({B, H, N, N});
    for (std::size_t row = 0; row < B * H * N; ++row) {
      const double* aw = ba.attw.data() + row * N;
      const double* da = dattw.data() + row * N;
      double dotp = 0.0;
      for (std::size_t j = 0; j < N; ++j) dotp += aw[j] * da[j];
      double* ds = dscores.data() + row * N;
      for (std::size_t j = 0; j < N; ++j) ds[j] = aw[j] * (da[j] - dotp) * scale;
    }

    Tensor dq({B, H, N, hd});
    kernels::batched_matmul(dscores.data(), ba.k.data(), dq.data(), B * H, N, N,
                            hd, N * N, N * hd, N * hd, /*trans_b=*/false);
    Tensor dk({B, H, N, hd});
    for (std::size_t g = 0; g < B * H; ++g) {
      kernels::matmul(dscores.data() + g * N * N, ba.q.data() + g * N * hd,
                      dk.data() + g * N * hd, N, N, hd, /*trans_a=*/true, false,
                      false);
    }

    Tensor dqkv({B * N, 3 * D});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t n = 0; n < N; ++n) {
        double* dst = dqkv.data() + (b * N + n) * 3 * D;
        for (std::size_t h = 0; h < H; ++h) {
          std::memcpy(dst + h * hd, &dq(b, h, n, 0), hd * sizeof(double));
          std::memcpy(dst + D + h * hd, &dk(b, h, n, 0), hd * sizeof(double));
          std::memcpy(dst + 2 * D + h * hd, &dv(b, h, n, 0), hd * sizeof(double));
        }
      }
    }

    if (wants.param(blk(bi, "qkv.b"))) {
      colsum_into(dqkv, B * N, 3 * D, grad_for(blk(bi, "qkv.b")));
    }
    Tensor dln1_out({B, N, D});
    kernels::matmul(dqkv.data(), m.p(blk(bi, "qkv.w")).data(), dln1_out.data(),
                    B * N, 3 * D, D, false, false, false);
    if (wants.param(blk(bi, "qkv.w"))) {
      kernels::matmul(dqkv.data(), ba.ln1_out.data(),
                      grad_for(blk(bi, "qkv.w")).data(), 3 * D, B * N, D, true,
                      false, false);
    }

    Tensor dstream_in = dstream_mid;  // residual pass-through
    {
      Tensor* dw = wants.param(blk(bi, "ln1.w")) ? &grad_for(blk(bi, "ln1.w")) : nullptr;
      Tensor* db = wants.param(blk(bi, "ln1.b")) ? &grad_for(blk(bi, "ln1.b")) : nullptr;
      layernorm_backward(ba.stream_in, ba.ln1_mean, ba.ln1_rstd,
                         m.p(blk(bi, "ln1.w")), dln1_out, dstream_in, dw, db,
                         B * N, D);
    }
    dstream = std::move(dstream_in);
  }

  // Embedding stage.
  if (wants.param("emb.pos")) {
    Tensor& dpos = grad_for("emb.pos");
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t j = 0; j < D; ++j) dpos(n, j) += dstream(b, n, j);
      }
    }
  }
  if (wants.param("emb.cls")) {
    Tensor& dcls = grad_for("emb.cls");
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < D; ++j) dcls[j] += dstream(b, 0, j);
    }
  }

  const bool need_input = wants.input;
  if (need_input || wants.param("emb.w") || wants.param("emb.b")) {
    Tensor demb({B * Np, D});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t p = 0; p < Np; ++p) {
        std::memcpy(demb.data() + (b * Np + p) * D, &dstream(b, p + 1, 0),
                    D * sizeof(double));
      }
    }
    if (wants.param("emb.b")) colsum_into(demb, B * Np, D, grad_for("emb.b"));
    if (wants.param("emb.w")) {
      kernels::matmul(demb.data(), acts.patches.data(), grad_for("emb.w").data(),
                      D, B * Np, cpp, true, false, false);
    }
    if (need_input) {
      Tensor dpatches({B * Np, cpp});
      kernels::matmul(demb.data(), m.p("emb.w").data(), dpatches.data(), B * Np,
                      D, cpp, false, false, false);
      Tensor dx_net({B, 3, R, R});
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t gy = 0; gy < G; ++gy) {
          for (std::size_t gx = 0; gx < G; ++gx) {
            const double* row = dpatches.data() + (b * Np + gy * G + gx) * cpp;
            std::size_t idx = 0;
            for (std::size_t c = 0; c < 3; ++c) {
              for (std::size_t py = 0; py < P; ++py) {
                double* dst = dx_net.data() + ((b * 3 + c) * R + gy * P + py) * R + gx * P;
                for (std::size_t px = 0; px < P; ++px) dst[px] += row[idx++];
              }
            }
          }
        }
      }
      if (mref.adapter.gif_enabled) {
        out.d_input = Tensor({B, 3, R, R});
        for (std::size_t b = 0; b < B; ++b) {
          Tensor g({3, R, R}), mask({3, R, R});
          std::memcpy(g.data(), dx_net.data() + b * 3 * R * R, 3 * R * R * sizeof(double));
          std::memcpy(mask.data(), acts.gif_mask.data() + b * 3 * R * R,
                      3 * R * R * sizeof(double));
          Tensor dxi = gif_filter_backward(g, mask, mref.adapter.d0);
          std::memcpy(out.d_input.data() + b * 3 * R * R, dxi.data(),
                      3 * R * R * sizeof(double));
        }
      } else {
        out.d_input = std::move(dx_net);
      }
    }
  }

  return out;
}

}  // namespace

double loss_value(const ModelRef& m, const Tensor& batch,
                  const std::vector<std::size_t>& labels, const LossSpec& spec) {
  Activations acts;
  detail::run_forward(m, batch, acts);
  return loss_and_dlogits(acts, labels, spec, nullptr, nullptr);
}

Tensor input_grad(const ModelRef& m, const Tensor& batch,
                  const std::vector<std::size_t>& labels, const LossSpec& spec,
                  double* loss_out) {
  Wants w;
  w.input = true;
  BackwardOut out = backward(m, batch, labels, spec, w);
  if (loss_out) *loss_out = out.loss;
  return std::move(out.d_input);
}

GradReport param_grads(const ModelRef& m, const Tensor& batch,
                       const std::vector<std::size_t>& labels,
                       const LossSpec& spec,
                       const std::vector<std::string>& units) {
  Wants w;
  for (const auto& unit : units) {
    for (const auto& name : unit_param_names(m.model->cfg, unit)) {
      w.params.insert(name);
    }
  }
  GradReport report;
  if (w.params.empty()) {
    report.loss = loss_value(m, batch, labels, spec);
    return report;
  }
  BackwardOut out = backward(m, batch, labels, spec, w);
  report.grads = std::move(out.d_params);
  report.loss = out.loss;
  return report;
}

Tensor anchor_grad(const ModelRef& adapted, const Tensor& batch,
                   const std::vector<std::size_t>& labels, double* loss_out) {
  if (!adapted.adapter.fra_enabled) {
    throw std::invalid_argument("anchor_grad: FRA is not active on this model");
  }
  Wants w;
  w.anchor = true;
  LossSpec spec;  // cross-entropy per the anchor objective
  BackwardOut out = backward(adapted, batch, labels, spec, w);
  if (loss_out) *loss_out = out.loss;
  if (out.d_anchor.size() == 0) {
    // alpha == 0 still yields a well-defined (zero) gradient.
    const ModelConfig& cfg = adapted.model->cfg;
    out.d_anchor = Tensor({cfg.tokens(), cfg.embed_dim});
  }
  return std::move(out.d_anchor);
}

}  // namespace radapt
