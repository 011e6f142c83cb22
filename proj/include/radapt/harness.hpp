#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "radapt/attacks.hpp"
#include "radapt/data.hpp"
#include "radapt/defense.hpp"
#include "radapt/model.hpp"

namespace radapt {

enum class Objective { kStandardCe, kAftCe, kAftEmbedding };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  bool cosine_schedule = true;
  double attn_drop = 0.0;  // anchored-attention loss weight, [0, 1)
  std::uint64_t seed = 0;
  Objective objective = Objective::kStandardCe;
  AttackConfig attack;  // inner adversary, aft modes only
  std::vector<std::string> freeze;  // unit ids excluded from updates

  void validate() const;
};

struct TrainResult {
  VitModel model;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // clean train accuracy
  bool diverged = false;
};

/// Adam training loop over the dataset. Standard mode minimizes CE on clean
/// batches; aft-CE regenerates PGD batches each step and minimizes CE on
/// them; aft-embedding minimizes || f(x_adv) - f_frozen(x) ||^2 against a
/// frozen copy of the initial model. Divergence aborts with the last good
/// parameters retained (result.diverged set). Seed-deterministic. When
/// log_path is nonempty a JSONL line is appended per epoch.
TrainResult train(const TrainConfig& cfg, const Dataset& data,
                  const VitModel* initial = nullptr,
                  const std::string& log_path = "");

struct SweepRow {
  std::string experiment;  // gif-fra | alpha | cutoff | anchor-size
  std::string setting;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
};

struct SweepGrid {
  bool gif_fra = true;                 // 2x2 GIF/FRA ablation
  std::vector<double> alphas;          // beta = max(1 - alpha, 0)
  std::vector<double> cutoffs;         // D0 values
  std::vector<std::size_t> anchor_sizes;  // data-driven anchor budgets
};

struct SweepArtifacts {
  const VitModel* standard = nullptr;
  const VitModel* robust = nullptr;  // anchor source (model-guided)
  const Dataset* eval_data = nullptr;
  const Dataset* anchor_pool = nullptr;  // anchor-size sweep only
  AttackConfig eval_attack;
  AttackConfig anchor_attack;  // inner adversary for anchor optimization
  GifConfig gif;
  AnchorBudget anchor_budget;
  std::uint64_t seed = 0;
};

std::vector<SweepRow> ablation_sweep(const SweepArtifacts& art,
                                     const SweepGrid& grid);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path,
                     const std::string& provenance);

struct ExperimentSpec {
  std::string pipeline;    // train|aft|anchor-opt|attack-eval|cka|spectrum|
                           // replace|insensitivity|shapley|sweep|pipeline
  nlohmann::json config;   // pipeline-specific settings
  std::string out_dir;
  std::uint64_t seed = 0;
};

/// Execute a named pipeline; writes its artifacts plus a manifest with input
/// digests into out_dir. Returns 0 on success; failures write error.json
/// (machine-readable record) and return nonzero.
int run(const ExperimentSpec& spec);

/// Dataset construction from a JSON spec: {"kind":"shapes", "n":..,
/// "resolution":.., "classes":.., "seed":..} or {"kind":"cifar10",
/// "path":..}.
Dataset dataset_from_json(const nlohmann::json& j, std::uint64_t default_seed);

ModelConfig model_config_from_json(const nlohmann::json& j);
AttackConfig attack_config_from_json(const nlohmann::json& j);

}  // namespace radapt
