#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pulse/dataset.hpp"
#include "pulse/model.hpp"

namespace pulse::train {

using ad::Tensor;
using model::NamedTensor;

// ---- optimizer -------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam. Missing gradients count as zero.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // Returns false (and leaves everything untouched) when a gradient is non-finite.
  bool step(double lr);

  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  std::vector<NamedTensor> state() const;  // moments for checkpoints
  void load_state(const std::vector<NamedTensor>& state, std::size_t steps);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig config_;
  std::size_t t_ = 0;
};

double global_grad_norm(const std::vector<Tensor>& params);
// Scale gradients so their global norm is min(norm, max_norm); returns the pre-clip norm.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

/// Linear warm-up from peak/25 to peak over the first 30% of steps, then
/// cosine decay to peak/1e4 at the final step.
double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak_lr);

// ---- training --------------------------------------------------------------

enum class Variant {
  Pulse,
  OraclePositive,
  OracleNegative,
  NoTvParams,
  SharedEncoders,
  FixedT0,
  RandomPairs,
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
bool is_oracle(Variant v);
bool is_ablation(Variant v);
// Model config adjusted for a variant (flags for the structural ablations).
model::PulseConfig variant_model_config(model::PulseConfig cfg, Variant v);

inline constexpr double kGradClip = 5.0;

struct TrainConfig {
  std::size_t epochs = 50;
  double peak_lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  Variant variant = Variant::Pulse;
  double mask_min = 0.25;  // negative oracle mask extent, fraction of W
  double mask_max = 0.50;
  std::size_t max_batches_per_epoch = 0;  // 0 = all
  std::string config_hash;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed after this epoch
  double lr = 0.0;       // rate of the last step
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t skipped_steps = 0;
  bool improved = false;
  nlohmann::json extra = nlohmann::json::object();  // variant diagnostics
  double wall_seconds = 0.0;                         // not part of the deterministic history

  nlohmann::json to_json(bool with_wall_time) const;
  static EpochRecord from_json(const nlohmann::json& j);
};

struct TrainState {
  model::PulseModel model;
  std::size_t step = 0;
  std::size_t epochs_done = 0;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  std::vector<NamedTensor> optimizer_state;

  // Loss history without wall-clock fields, for byte comparisons.
  nlohmann::json history_json() const;
};

struct TrainOptions {
  std::optional<std::filesystem::path> output_dir;  // checkpoints and logs
  bool resume = false;                                // continue from output_dir/last
  bool quiet = true;
  std::size_t stop_after_epochs = 0;                  // return early once this many epochs are done (0 = never)
};

/// Train the configured variant on the train split, validate on the val split
/// each epoch, and return the model restored to its best-validation weights.
TrainState train(const sde::WindowDataset& data, const model::PulseConfig& model_cfg, const TrainConfig& cfg,
                 const TrainOptions& options = {});

// Validation objective with the fixed validation draws used during training.
double validation_loss(const model::PulseModel& model, const sde::WindowDataset& data, const TrainConfig& cfg);

enum class Polarity { Positive, Negative };
TrainState train_oracle(const sde::WindowDataset& data, const model::PulseConfig& model_cfg, TrainConfig cfg,
                        Polarity polarity, const TrainOptions& options = {});
TrainState train_ablation(const sde::WindowDataset& data, const model::PulseConfig& model_cfg, TrainConfig cfg,
                          Variant which, const TrainOptions& options = {});

// ---- helpers exposed for tests ---------------------------------------------

/// t0 draws for one batch: `count` values uniform on [1, W/2], or [1] for FixedT0.
std::vector<std::size_t> draw_t0(Rng& rng, std::size_t window, std::size_t count, bool fixed);

// Same-label partner for every anchor (never the anchor itself).
std::vector<std::size_t> same_label_partners(const std::vector<std::size_t>& anchors, const std::vector<int>& labels,
                                             const std::vector<std::size_t>& pool, Rng& rng);

struct MaskedRun {
  std::size_t start = 0;
  std::size_t length = 0;
};
// Zero a random contiguous run per window, length in [ceil(lo*W), floor(hi*W)].
Tensor temporal_mask(const Tensor& windows, double lo, double hi, Rng& rng, std::vector<MaskedRun>* runs = nullptr);

}  // namespace pulse::train
