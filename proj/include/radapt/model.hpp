#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "radapt/tensor.hpp"

namespace radapt {

struct ModelConfig {
  std::size_t resolution = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;   // D
  std::size_t heads = 4;        // H_n
  std::size_t blocks = 6;       // B
  std::size_t mlp_ratio = 2;
  std::size_t num_classes = 8;  // K
  double temperature_init = 10.0;

  std::size_t grid() const { return resolution / patch_size; }
  std::size_t patch_tokens() const { return grid() * grid(); }
  std::size_t tokens() const { return patch_tokens() + 1; }  // + CLS
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }
  std::size_t out_dim() const { return embed_dim; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Tiny pre-norm vision transformer with a cosine-similarity classification
/// head over a learned class-prototype table. Parameters live in a named
/// tensor map; named module units ([emb, b1-attn, b1-mlp, ..., head]) group
/// them for swapping and freezing.
struct VitModel {
  ModelConfig cfg;
  std::map<std::string, Tensor> params;
  // Per-block head ablation mask (1 = keep). Analysis-time state, not
  // persisted in checkpoints.
  std::vector<std::vector<std::uint8_t>> head_mask;

  const Tensor& p(const std::string& name) const { return params.at(name); }
  Tensor& p(const std::string& name) { return params.at(name); }
};

VitModel init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Units in forward order: emb, b1-attn, b1-mlp, ..., bB-mlp, head.
std::vector<std::string> unit_ids(const ModelConfig& cfg);
std::vector<std::string> unit_param_names(const ModelConfig& cfg,
                                          const std::string& unit);

VitModel swap_unit(const VitModel& target, const VitModel& source,
                   const std::string& unit);

/// Heads outside `keep` contribute zero to the pre-projection concatenation
/// of the given block's attention.
VitModel ablate_heads(const VitModel& m, std::size_t block,
                      const std::set<std::size_t>& keep);

std::string params_digest(const VitModel& m);

void save_checkpoint(const VitModel& m, const std::string& path);
VitModel load_checkpoint(const std::string& path);

/// Inference-time adaptation applied around a frozen base model: Gaussian
/// input filtering and the fixed-anchor mix in block 1's attention output.
struct Adapter {
  bool gif_enabled = false;
  double d0 = 0.0;
  bool fra_enabled = false;
  const Tensor* anchor = nullptr;  // [N, D]
  double alpha = 0.0;
  double beta = 1.0;
};

/// A model plus optional adaptation; every gradient, attack and analysis
/// routine consumes this so base and adapted models share one code path.
struct ModelRef {
  const VitModel* model = nullptr;
  Adapter adapter;

  ModelRef() = default;
  ModelRef(const VitModel& m) : model(&m) {}  // NOLINT: implicit by design
  ModelRef(const VitModel& m, const Adapter& a) : model(&m), adapter(a) {}
};

struct TraceOptions {
  bool block_cls = false;        // CKA features
  bool block1_heads = false;     // per-head outputs of block 1
  bool cls_attention = false;    // CLS-row attention weights, all blocks
  bool block1_attn_out = false;  // post-projection, pre-residual (after FRA)
};

struct ForwardTrace {
  Tensor logits;  // [B, K]
  Tensor probs;   // [B, K]
  Tensor z_v;     // [B, D_out]
  std::vector<std::size_t> preds;

  Tensor emb_feature;              // [B, D] mean-pooled patch embedding
  std::vector<Tensor> block_cls;   // per block [B, D]
  Tensor block1_head_outputs;      // [B, heads, N, head_dim]
  std::vector<Tensor> cls_attention;  // per block [B, heads, N]
  Tensor block1_attn_out;          // [B, N, D]
};

/// Batched forward pass. batch is [B, 3, R, R]; logits_i = tau * cos(z_v,
/// prototype_i), probabilities via softmax, argmax with lowest-index
/// tie-break.
ForwardTrace forward(const ModelRef& m, const Tensor& batch,
                     const TraceOptions& opts = {});

std::vector<std::size_t> predict(const ModelRef& m, const Tensor& batch);

/// Pack dataset-style images into a [B, 3, R, R] batch tensor.
Tensor pack_batch(const std::vector<Tensor>& images);

namespace detail {

/// Full activation cache for one forward pass; consumed by the backward
/// pass in the grad module.
struct BlockActs {
  Tensor stream_in;   // [B, N, D]
  Tensor ln1_mean, ln1_rstd;  // [B, N]
  Tensor ln1_out;     // [B, N, D]
  Tensor q, k, v;     // [B, H, N, hd]
  Tensor attw;        // [B, H, N, N]
  Tensor head_cat;    // [B, N, D] (post ablation mask)
  Tensor attn_proj;   // [B, N, D] pre-FRA
  Tensor h1hat;       // [B, N, D] post-FRA (== attn_proj unless adapted b0)
  Tensor stream_mid;  // [B, N, D] after attention residual
  Tensor ln2_mean, ln2_rstd;  // [B, N]
  Tensor ln2_out;     // [B, N, D]
  Tensor fc_pre;      // [B, N, M]
  Tensor fc_act;      // [B, N, M]
  Tensor mlp_out;     // [B, N, D]
};

struct Activations {
  Tensor x_in;        // raw input [B, C, R, R]
  Tensor x_net;       // network input (GIF output or raw) [B, C, R, R]
  Tensor gif_mask;    // clamp pass-through mask, only when GIF active
  Tensor patches;     // [B*Np, C*P*P]
  Tensor tokens0;     // [B, N, D] after cls/pos
  std::vector<BlockActs> blocks;
  Tensor final_cls;   // [B, D] stream CLS after last block
  Tensor lnf_mean, lnf_rstd;  // [B]
  Tensor lnf_out;     // [B, D]
  Tensor z_v;         // [B, D_out]
  Tensor logits;      // [B, K]
  Tensor probs;       // [B, K]
  double tau = 0.0;
  bool tau_clamped = false;
};

void run_forward(const ModelRef& m, const Tensor& batch, Activations& acts);

}  // namespace detail

}  // namespace radapt
