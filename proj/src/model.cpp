#include "radapt/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "radapt/container.hpp"
#include "radapt/defense.hpp"
#include "radapt/digest.hpp"
#include "radapt/kernels.hpp"
#include "radapt/rng.hpp"

namespace radapt {

void ModelConfig::validate() const {
  if (resolution == 0 || patch_size == 0 || resolution % patch_size != 0) {
    throw std::invalid_argument("config: resolution must be divisible by patch size");
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw std::invalid_argument("config: embed_dim must be divisible by heads");
  }
  if (blocks < 2) throw std::invalid_argument("config: at least 2 blocks required");
  if (num_classes < 2) throw std::invalid_argument("config: at least 2 classes required");
  if (mlp_ratio == 0) throw std::invalid_argument("config: mlp_ratio must be positive");
  if (temperature_init <= 0) throw std::invalid_argument("config: temperature must be positive");
}

namespace {

void fill_normal(Tensor& t, Rng& rng, double scale) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
}

std::string blk(std::size_t i, const char* suffix) {
  return "blk" + std::to_string(i) + "." + suffix;
}

}  // namespace

VitModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  VitModel m;
  m.cfg = cfg;
  m.head_mask.assign(cfg.blocks, std::vector<std::uint8_t>(cfg.heads, 1));

  const std::size_t d = cfg.embed_dim;
  const std::size_t cpp = 3 * cfg.patch_size * cfg.patch_size;
  const std::size_t mdim = cfg.mlp_dim();

  Rng rng(seed);
  auto add = [&](const std::string& name, std::vector<std::size_t> shape, double scale) {
    Tensor t(std::move(shape));
    if (scale > 0.0) fill_normal(t, rng, scale);
    m.params.emplace(name, std::move(t));
  };

  add("emb.w", {d, cpp}, std::sqrt(2.0 / static_cast<double>(cpp)));
  add("emb.b", {d}, 0.0);
  add("emb.cls", {d}, 0.02);
  add("emb.pos", {cfg.tokens(), d}, 0.02);
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    add(blk(i, "ln1.w"), {d}, 0.0);
    m.p(blk(i, "ln1.w")).fill(1.0);
    add(blk(i, "ln1.b"), {d}, 0.0);
    add(blk(i, "qkv.w"), {3 * d, d}, std::sqrt(1.0 / static_cast<double>(d)));
    add(blk(i, "qkv.b"), {3 * d}, 0.0);
    add(blk(i, "attn.w"), {d, d}, std::sqrt(1.0 / static_cast<double>(d)));
    add(blk(i, "attn.b"), {d}, 0.0);
    add(blk(i, "ln2.w"), {d}, 0.0);
    m.p(blk(i, "ln2.w")).fill(1.0);
    add(blk(i, "ln2.b"), {d}, 0.0);
    add(blk(i, "fc.w"), {mdim, d}, std::sqrt(2.0 / static_cast<double>(d)));
    add(blk(i, "fc.b"), {mdim}, 0.0);
    add(blk(i, "proj.w"), {d, mdim}, std::sqrt(1.0 / static_cast<double>(mdim)));
    add(blk(i, "proj.b"), {d}, 0.0);
  }
  add("head.ln.w", {d}, 0.0);
  m.p("head.ln.w").fill(1.0);
  add("head.ln.b", {d}, 0.0);
  add("head.out.w", {cfg.out_dim(), d}, std::sqrt(1.0 / static_cast<double>(d)));
  add("head.out.b", {cfg.out_dim()}, 0.0);
  add("head.proto", {cfg.num_classes, cfg.out_dim()}, 1.0);
  add("head.log_tau", {1}, 0.0);
  m.p("head.log_tau")[0] = std::log(cfg.temperature_init);
  return m;
}

std::vector<std::string> unit_ids(const ModelConfig& cfg) {
  std::vector<std::string> ids{"emb"};
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    ids.push_back("b" + std::to_string(i + 1) + "-attn");
    ids.push_back("b" + std::to_string(i + 1) + "-mlp");
  }
  ids.push_back("head");
  return ids;
}

std::vector<std::string> unit_param_names(const ModelConfig& cfg,
                                          const std::string& unit) {
  if (unit == "emb") return {"emb.w", "emb.b", "emb.cls", "emb.pos"};
  if (unit == "head") {
    return {"head.ln.w", "head.ln.b", "head.out.w", "head.out.b", "head.proto",
            "head.log_tau"};
  }
  // b<i>-attn / b<i>-mlp, 1-based block index.
  if (unit.size() > 1 && unit[0] == 'b') {
    const auto dash = unit.find('-');
    if (dash != std::string::npos) {
      const std::size_t i = std::stoul(unit.substr(1, dash - 1));
      if (i >= 1 && i <= cfg.blocks) {
        const std::size_t b = i - 1;
        const std::string kind = unit.substr(dash + 1);
        if (kind == "attn") {
          return {blk(b, "ln1.w"), blk(b, "ln1.b"), blk(b, "qkv.w"),
                  blk(b, "qkv.b"), blk(b, "attn.w"), blk(b, "attn.b")};
        }
        if (kind == "mlp") {
          return {blk(b, "ln2.w"), blk(b, "ln2.b"), blk(b, "fc.w"),
                  blk(b, "fc.b"), blk(b, "proj.w"), blk(b, "proj.b")};
        }
      }
    }
  }
  throw std::invalid_argument("unknown unit id: " + unit);
}

VitModel swap_unit(const VitModel& target, const VitModel& source,
                   const std::string& unit) {
  if (!(target.cfg == source.cfg)) {
    throw std::invalid_argument("swap_unit: model configs differ");
  }
  VitModel out = target;
  for (const auto& name : unit_param_names(target.cfg, unit)) {
    out.p(name) = source.p(name);
  }
  return out;
}

VitModel ablate_heads(const VitModel& m, std::size_t block,
                      const std::set<std::size_t>& keep) {
  if (block >= m.cfg.blocks) throw std::invalid_argument("ablate_heads: block out of range");
  for (std::size_t h : keep) {
    if (h >= m.cfg.heads) throw std::invalid_argument("ablate_heads: head out of range");
  }
  VitModel out = m;
  for (std::size_t h = 0; h < m.cfg.heads; ++h) {
    out.head_mask[block][h] = keep.count(h) ? 1 : 0;
  }
  return out;
}

std::string params_digest(const VitModel& m) {
  Digest d;
  for (const auto& [name, t] : m.params) {
    d.update(name);
    d.update(t.data(), t.size() * sizeof(double));
  }
  return d.hex();
}

void save_checkpoint(const VitModel& m, const std::string& path) {
  Container c;
  c.config = {{"resolution", m.cfg.resolution},
              {"patch_size", m.cfg.patch_size},
              {"embed_dim", m.cfg.embed_dim},
              {"heads", m.cfg.heads},
              {"blocks", m.cfg.blocks},
              {"mlp_ratio", m.cfg.mlp_ratio},
              {"num_classes", m.cfg.num_classes},
              {"temperature_init", m.cfg.temperature_init}};
  c.meta = {{"kind", "model"}};
  c.tensors = m.params;
  write_container(path, c);
}

VitModel load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  ModelConfig cfg;
  cfg.resolution = c.config.at("resolution").get<std::size_t>();
  cfg.patch_size = c.config.at("patch_size").get<std::size_t>();
  cfg.embed_dim = c.config.at("embed_dim").get<std::size_t>();
  cfg.heads = c.config.at("heads").get<std::size_t>();
  cfg.blocks = c.config.at("blocks").get<std::size_t>();
  cfg.mlp_ratio = c.config.at("mlp_ratio").get<std::size_t>();
  cfg.num_classes = c.config.at("num_classes").get<std::size_t>();
  cfg.temperature_init = c.config.at("temperature_init").get<double>();
  cfg.validate();

  VitModel ref = init_model(cfg, 0);
  VitModel m;
  m.cfg = cfg;
  m.head_mask.assign(cfg.blocks, std::vector<std::uint8_t>(cfg.heads, 1));
  for (const auto& [name, t] : ref.params) {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) {
      throw std::runtime_error("checkpoint: missing tensor " + name);
    }
    if (it->second.shape() != t.shape()) {
      throw std::runtime_error("checkpoint: shape disagreement for tensor " + name);
    }
    m.params.emplace(name, it->second);
  }
  return m;
}

namespace detail {
namespace {

constexpr double kLnEps = 1e-5;

// Row-wise layer norm over the last axis; caches mean and 1/std.
void layernorm(const double* x, const double* w, const double* b, double* y,
               double* mean, double* rstd, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[r] = mu;
    rstd[r] = rs;
    double* yr = y + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rs * w[j] + b[j];
  }
}

void add_bias(double* y, const double* b, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] += b[j];
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

}  // namespace

void run_forward(const ModelRef& mref, const Tensor& batch, Activations& acts) {
  const VitModel& m = *mref.model;
  const ModelConfig& cfg = m.cfg;
  if (batch.rank() != 4 || batch.extent(1) != 3 ||
      batch.extent(2) != cfg.resolution || batch.extent(3) != cfg.resolution) {
    throw std::invalid_argument("forward: batch resolution does not match config");
  }
  const std::size_t B = batch.extent(0);
  const std::size_t P = cfg.patch_size;
  const std::size_t G = cfg.grid();
  const std::size_t Np = cfg.patch_tokens();
  const std::size_t N = cfg.tokens();
  const std::size_t D = cfg.embed_dim;
  const std::size_t H = cfg.heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t M = cfg.mlp_dim();
  const std::size_t cpp = 3 * P * P;
  const std::size_t R = cfg.resolution;

  acts.x_in = batch;
  if (mref.adapter.gif_enabled) {
    acts.gif_mask = Tensor({B, 3, R, R});
    acts.x_net = Tensor({B, 3, R, R});
    for (std::size_t b = 0; b < B; ++b) {
      Tensor img({3, R, R});
      std::memcpy(img.data(), batch.data() + b * 3 * R * R, 3 * R * R * sizeof(double));
      Tensor mask;
      Tensor filtered = gif_filter_image(img, mref.adapter.d0, &mask);
      std::memcpy(acts.x_net.data() + b * 3 * R * R, filtered.data(),
                  3 * R * R * sizeof(double));
      std::memcpy(acts.gif_mask.data() + b * 3 * R * R, mask.data(),
                  3 * R * R * sizeof(double));
    }
  } else {
    acts.x_net = batch;
  }

  // Non-overlapping patch extraction (im2col for a stride-P, PxP conv).
  acts.patches = Tensor({B * Np, cpp});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t gy = 0; gy < G; ++gy) {
      for (std::size_t gx = 0; gx < G; ++gx) {
        double* row = acts.patches.data() + (b * Np + gy * G + gx) * cpp;
        std::size_t idx = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t py = 0; py < P; ++py) {
            const double* src = acts.x_net.data() +
                                ((b * 3 + c) * R + gy * P + py) * R + gx * P;
            for (std::size_t px = 0; px < P; ++px) row[idx++] = src[px];
          }
        }
      }
    }
  }

  // Patch embedding + CLS + position embeddings.
  Tensor emb({B * Np, D});
  kernels::matmul(acts.patches.data(), m.p("emb.w").data(), emb.data(), B * Np,
                  cpp, D, false, true, false);
  add_bias(emb.data(), m.p("emb.b").data(), B * Np, D);

  acts.tokens0 = Tensor({B, N, D});
  const Tensor& pos = m.p("emb.pos");
  const Tensor& cls = m.p("emb.cls");
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < D; ++j) {
      acts.tokens0(b, 0, j) = cls[j] + pos(0, j);
    }
    for (std::size_t p = 0; p < Np; ++p) {
      for (std::size_t j = 0; j < D; ++j) {
        acts.tokens0(b, p + 1, j) = emb(b * Np + p, j) + pos(p + 1, j);
      }
    }
  }

  Tensor stream = acts.tokens0;
  acts.blocks.assign(cfg.blocks, BlockActs{});
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  for (std::size_t bi = 0; bi < cfg.blocks; ++bi) {
    BlockActs& ba = acts.blocks[bi];
    ba.stream_in = stream;

    ba.ln1_mean = Tensor({B, N});
    ba.ln1_rstd = Tensor({B, N});
    ba.ln1_out = Tensor({B, N, D});
    layernorm(stream.data(), m.p(blk(bi, "ln1.w")).data(),
              m.p(blk(bi, "ln1.b")).data(), ba.ln1_out.data(),
              ba.ln1_mean.data(), ba.ln1_rstd.data(), B * N, D);

    Tensor qkv({B * N, 3 * D});
    kernels::matmul(ba.ln1_out.data(), m.p(blk(bi, "qkv.w")).data(), qkv.data(),
                    B * N, D, 3 * D, false, true, false);
    add_bias(qkv.data(), m.p(blk(bi, "qkv.b")).data(), B * N, 3 * D);

    ba.q = Tensor({B, H, N, hd});
    ba.k = Tensor({B, H, N, hd});
    ba.v = Tensor({B, H, N, hd});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t n = 0; n < N; ++n) {
        const double* src = qkv.data() + (b * N + n) * 3 * D;
        for (std::size_t h = 0; h < H; ++h) {
          std::memcpy(&ba.q(b, h, n, 0), src + h * hd, hd * sizeof(double));
          std::memcpy(&ba.k(b, h, n, 0), src + D + h * hd, hd * sizeof(double));
          std::memcpy(&ba.v(b, h, n, 0), src + 2 * D + h * hd, hd * sizeof(double));
        }
      }
    }

    ba.attw = Tensor({B, H, N, N});
    kernels::batched_matmul(ba.q.data(), ba.k.data(), ba.attw.data(), B * H, N,
                            hd, N, N * hd, N * hd, N * N, /*trans_b=*/true);
    ba.attw *= scale;
    kernels::softmax_rows(ba.attw.data(), B * H * N, N);

    Tensor ctx({B, H, N, hd});
    kernels::batched_matmul(ba.attw.data(), ba.v.data(), ctx.data(), B * H, N,
                            N, hd, N * N, N * hd, N * hd, /*trans_b=*/false);

    ba.head_cat = Tensor({B, N, D});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const bool keep = m.head_mask[bi][h] != 0;
        for (std::size_t n = 0; n < N; ++n) {
          double* dst = &ba.head_cat(b, n, h * hd);
          if (keep) {
            std::memcpy(dst, &ctx(b, h, n, 0), hd * sizeof(double));
          }  // else leave zero
        }
      }
    }

    ba.attn_proj = Tensor({B, N, D});
    kernels::matmul(ba.head_cat.data(), m.p(blk(bi, "attn.w")).data(),
                    ba.attn_proj.data(), B * N, D, D, false, true, false);
    add_bias(ba.attn_proj.data(), m.p(blk(bi, "attn.b")).data(), B * N, D);

    // FRA mix: only block 1's attention output path is altered.
    if (bi == 0 && mref.adapter.fra_enabled) {
      const Tensor& anchor = *mref.adapter.anchor;
      if (anchor.rank() != 2 || anchor.extent(0) != N || anchor.extent(1) != D) {
        throw std::invalid_argument("forward: anchor shape does not match N x D");
      }
      const double a = mref.adapter.alpha, be = mref.adapter.beta;
      ba.h1hat = Tensor({B, N, D});
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t j = 0; j < D; ++j) {
            ba.h1hat(b, n, j) = a * anchor(n, j) + be * ba.attn_proj(b, n, j);
          }
        }
      }
    } else {
      ba.h1hat = ba.attn_proj;
    }

    ba.stream_mid = ba.stream_in;
    ba.stream_mid += ba.h1hat;

    ba.ln2_mean = Tensor({B, N});
    ba.ln2_rstd = Tensor({B, N});
    ba.ln2_out = Tensor({B, N, D});
    layernorm(ba.stream_mid.data(), m.p(blk(bi, "ln2.w")).data(),
              m.p(blk(bi, "ln2.b")).data(), ba.ln2_out.data(),
              ba.ln2_mean.data(), ba.ln2_rstd.data(), B * N, D);

    ba.fc_pre = Tensor({B, N, M});
    kernels::matmul(ba.ln2_out.data(), m.p(blk(bi, "fc.w")).data(),
                    ba.fc_pre.data(), B * N, D, M, false, true, false);
    add_bias(ba.fc_pre.data(), m.p(blk(bi, "fc.b")).data(), B * N, M);

    ba.fc_act = Tensor({B, N, M});
    for (std::size_t i = 0; i < ba.fc_pre.size(); ++i) {
      ba.fc_act[i] = gelu(ba.fc_pre[i]);
    }

    ba.mlp_out = Tensor({B, N, D});
    kernels::matmul(ba.fc_act.data(), m.p(blk(bi, "proj.w")).data(),
                    ba.mlp_out.data(), B * N, M, D, false, true, false);
    add_bias(ba.mlp_out.data(), m.p(blk(bi, "proj.b")).data(), B * N, D);

    stream = ba.stream_mid;
    stream += ba.mlp_out;
  }

  acts.final_cls = Tensor({B, D});
  for (std::size_t b = 0; b < B; ++b) {
    std::memcpy(acts.final_cls.data() + b * D, stream.data() + b * N * D,
                D * sizeof(double));
  }

  acts.lnf_mean = Tensor({B});
  acts.lnf_rstd = Tensor({B});
  acts.lnf_out = Tensor({B, D});
  layernorm(acts.final_cls.data(), m.p("head.ln.w").data(),
            m.p("head.ln.b").data(), acts.lnf_out.data(), acts.lnf_mean.data(),
            acts.lnf_rstd.data(), B, D);

  const std::size_t dout = cfg.out_dim();
  acts.z_v = Tensor({B, dout});
  kernels::matmul(acts.lnf_out.data(), m.p("head.out.w").data(), acts.z_v.data(),
                  B, D, dout, false, true, false);
  add_bias(acts.z_v.data(), m.p("head.out.b").data(), B, dout);

  acts.tau = std::exp(m.p("head.log_tau")[0]);
  const std::size_t K = cfg.num_classes;
  const Tensor& proto = m.p("head.proto");
  acts.logits = Tensor({B, K});
  for (std::size_t b = 0; b < B; ++b) {
    double zn = 0.0;
    for (std::size_t j = 0; j < dout; ++j) zn += acts.z_v(b, j) * acts.z_v(b, j);
    zn = std::sqrt(zn);
    for (std::size_t i = 0; i < K; ++i) {
      double pn = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < dout; ++j) {
        pn += proto(i, j) * proto(i, j);
        dot += acts.z_v(b, j) * proto(i, j);
      }
      pn = std::sqrt(pn);
      acts.logits(b, i) = acts.tau * dot / (zn * pn + 1e-300);
    }
  }

  acts.probs = acts.logits;
  kernels::softmax_rows(acts.probs.data(), B, K);
}

}  // namespace detail

ForwardTrace forward(const ModelRef& m, const Tensor& batch,
                     const TraceOptions& opts) {
  detail::Activations acts;
  detail::run_forward(m, batch, acts);

  const ModelConfig& cfg = m.model->cfg;
  const std::size_t B = batch.extent(0);
  const std::size_t N = cfg.tokens();
  const std::size_t D = cfg.embed_dim;
  const std::size_t H = cfg.heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t K = cfg.num_classes;

  ForwardTrace t;
  t.logits = acts.logits;
  t.probs = acts.probs;
  t.z_v = acts.z_v;
  t.preds.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < K; ++i) {
      if (acts.logits(b, i) > acts.logits(b, best)) best = i;  // lowest-index tie-break
    }
    t.preds[b] = best;
  }

  if (opts.block_cls) {
    t.emb_feature = Tensor({B, D});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < D; ++j) {
        double s = 0.0;
        for (std::size_t n = 1; n < N; ++n) s += acts.tokens0(b, n, j);
        t.emb_feature(b, j) = s / static_cast<double>(N - 1);
      }
    }
    t.block_cls.reserve(cfg.blocks);
    for (std::size_t bi = 0; bi < cfg.blocks; ++bi) {
      Tensor cls_out({B, D});
      const Tensor& stream_out = (bi + 1 < cfg.blocks)
                                     ? acts.blocks[bi + 1].stream_in
                                     : acts.final_cls;
      if (bi + 1 < cfg.blocks) {
        for (std::size_t b = 0; b < B; ++b) {
          std::memcpy(cls_out.data() + b * D, stream_out.data() + b * N * D,
                      D * sizeof(double));
        }
      } else {
        cls_out = acts.final_cls;
      }
      t.block_cls.push_back(std::move(cls_out));
    }
  }

  if (opts.block1_heads) {
    // Raw per-head outputs, pre concatenation mask.
    t.block1_head_outputs = Tensor({B, H, N, hd});
    const detail::BlockActs& b0 = acts.blocks[0];
    kernels::batched_matmul(b0.attw.data(), b0.v.data(),
                            t.block1_head_outputs.data(), B * H, N, N, hd,
                            N * N, N * hd, N * hd, false);
  }

  if (opts.cls_attention) {
    t.cls_attention.reserve(cfg.blocks);
    for (std::size_t bi = 0; bi < cfg.blocks; ++bi) {
      Tensor w({B, H, N});
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          std::memcpy(&w(b, h, 0), &acts.blocks[bi].attw(b, h, 0, 0),
                      N * sizeof(double));
        }
      }
      t.cls_attention.push_back(std::move(w));
    }
  }

  if (opts.block1_attn_out) {
    t.block1_attn_out = acts.blocks[0].h1hat;
  }
  return t;
}

std::vector<std::size_t> predict(const ModelRef& m, const Tensor& batch) {
  return forward(m, batch).preds;
}

Tensor pack_batch(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("pack_batch: empty batch");
  const auto& s = images[0].shape();
  Tensor out({images.size(), s[0], s[1], s[2]});
  const std::size_t per = images[0].size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw std::invalid_argument("pack_batch: mixed shapes");
    std::memcpy(out.data() + i * per, images[i].data(), per * sizeof(double));
  }
  return out;
}

}  // namespace radapt
