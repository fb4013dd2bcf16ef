#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pulse/ops.hpp"
#include "pulse/rng.hpp"
#include "pulse/tensor.hpp"

namespace pulse::model {

using ad::Tensor;

struct PulseConfig {
  std::size_t channels = 3;
  std::size_t window = 100;

  std::size_t enc_depth = 10;
  std::size_t enc_width = 64;  // D
  std::size_t enc_kernel = 3;

  std::size_t init_kernel = 5;
  std::size_t init_dilation = 1;
  std::size_t init_hidden = 64;
  std::size_t init_latent = 64;

  std::size_t dec_layers = 2;
  std::size_t dec_hidden = 64;

  std::size_t tv_dim = 1;  // fixed
  std::size_t tv_hidden = 16;
  std::size_t tv_segments = 4;
  std::size_t pseudo_pairs = 3;  // t0 draws per window

  bool use_tv_params = true;    // false: Theta = theta only
  bool shared_encoders = false;  // true: x0 taken from f_sys features

  void validate() const;
  std::size_t theta_dim() const { return enc_width + (use_tv_params ? tv_dim : 0); }
  std::size_t max_t0() const { return window / 2; }
  std::size_t encoder_receptive_field() const;
  std::size_t init_receptive_field() const;
  std::vector<std::string> warnings() const;

  nlohmann::json to_json() const;
  static PulseConfig from_json(const nlohmann::json& j);
};

struct SystemRepresentation {
  Tensor features;  // [B, D, W]
  Tensor theta;     // [B, D]
  Tensor theta_tv;  // [B, 1, W], undefined without time-varying parameters
  Tensor combined;  // [B, D(+1), W]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// System encoder, initial-condition encoder and recurrent decoder.
/// Inputs are [batch, W, M] windows in data units; the model standardizes
/// them with stored per-channel statistics before every computation, and
/// reconstruction losses are measured in standardized units.
class PulseModel {
 public:
  PulseModel(const PulseConfig& config, std::uint64_t seed);

  const PulseConfig& config() const { return config_; }

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Per-channel standardization statistics (set from the train split).
  void set_normalization(std::vector<double> mean, std::vector<double> stddev);
  void fit_normalization(const Tensor& windows);
  Tensor normalize(const Tensor& windows) const;

  // The following take standardized [B, W, M] input.
  SystemRepresentation f_sys(const Tensor& y) const;
  Tensor f_init_sequence(const Tensor& y) const;  // [B, latent, W]
  Tensor f_init(const Tensor& y, std::size_t t0) const;  // [B, latent], t0 one-based
  // Initial condition for the decoder under the configured encoder sharing.
  Tensor initial_condition(const Tensor& y, const SystemRepresentation& sys, std::size_t t0) const;
  Tensor decode(const Tensor& x0, const Tensor& theta_seq) const;  // -> [B, L, M]

  // Losses on raw (data-unit) windows.
  Tensor loss_cross(const Tensor& y_i, const Tensor& y_j) const;
  // Inputs may be corrupted copies; the target is the clean y_j.
  Tensor loss_cross(const Tensor& input_i, const Tensor& input_j, const Tensor& target_j) const;
  Tensor loss_pulse(const Tensor& y, const std::vector<std::size_t>& t0_draws) const;

  // theta for each window, untracked: [N, D].
  Tensor embed(const Tensor& windows, std::size_t batch = 256) const;

  std::size_t decoder_input_dim() const;

 private:
  void init_parameters(std::uint64_t seed);
  Tensor& add_param(const std::string& name, ad::Shape shape, double bound, const Rng& root);

  PulseConfig config_;
  std::vector<NamedTensor> params_;
  Tensor norm_mean_, norm_std_;

  // Views into params_ for the forward pass.
  Tensor sys_in_w_, sys_in_b_;
  std::vector<Tensor> sys_w_, sys_b_;
  Tensor tv1_w_, tv1_b_, tv2_w_, tv2_b_;
  Tensor init1_w_, init1_b_, init2_w_, init2_b_;
  std::vector<Tensor> bridge_w_, bridge_b_;
  std::vector<ad::GruParams> gru_;
  Tensor out_w_, out_b_;
};

// [B, W, M] -> [B, len, M] copy of time positions [start, start + len).
Tensor time_window(const Tensor& y, std::size_t start, std::size_t len);

// Checkpoint directory: manifest.json plus one little-endian f64 blob per tensor.
void save_tensors(const std::filesystem::path& dir, const nlohmann::json& manifest,
                  const std::vector<NamedTensor>& tensors);
std::pair<nlohmann::json, std::vector<NamedTensor>> load_tensors(const std::filesystem::path& dir);

void save_model(const PulseModel& model, const std::filesystem::path& dir, nlohmann::json extra = {});
PulseModel load_model(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);
// Copy values of matching names into the model; all parameters must be present.
void assign_tensors(PulseModel& model, const std::vector<NamedTensor>& tensors);

}  // namespace pulse::model
