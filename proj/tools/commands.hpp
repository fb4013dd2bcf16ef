#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pulse/dataset.hpp"
#include "pulse/eval.hpp"
#include "pulse/model.hpp"
#include "pulse/train.hpp"

namespace pulse::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheck = 3;

// Output root: $PULSE_RUNS_ROOT, else ./runs.
fs::path runs_root();

// Reserve <root>/<hash>. Without force an existing directory is refused (ConfigError).
fs::path claim_dir(const fs::path& root, const std::string& hash, bool force);

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

struct GenerateResult {
  fs::path dir;
  fs::path dataset;
  std::string hash;
  nlohmann::json summary;
};
GenerateResult generate(const sde::DatasetConfig& cfg, const fs::path& root, bool force);

struct TrainRequest {
  fs::path dataset;
  model::PulseConfig model;
  train::TrainConfig train;
  bool force = false;
  bool resume = false;
  std::size_t stop_after_epochs = 0;
  bool quiet = true;
};

struct TrainResult {
  fs::path dir;
  std::string hash;
  nlohmann::json summary;
};
std::string train_hash(const sde::WindowDataset& data, const model::PulseConfig& m, const train::TrainConfig& t);
TrainResult run_train(const TrainRequest& req, const fs::path& root);

struct EvalRequest {
  fs::path run;                        // training run directory
  std::optional<fs::path> dataset;     // defaults to the one recorded by the run
  std::vector<double> semi;            // label fractions
  std::size_t subsets = 5;
  eval::Coverage coverage = eval::Coverage::Laplace;
  eval::ProbeConfig probe;
  bool random_init = false;            // evaluate the untrained encoder of the run's config
  bool force = false;
};

struct EvalResult {
  fs::path dir;
  std::vector<eval::ResultRow> rows;
  eval::MetricsReport probe;
  std::vector<eval::SemiReport> semi;
};
EvalResult run_eval(const EvalRequest& req);

struct SweepRequest {
  sde::DatasetConfig dataset;
  std::vector<double> sigmas;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants;
  TrainRequest train;
  EvalRequest eval;
  std::size_t jobs = 1;
};
// Generate one dataset per (sigma, seed), then train and evaluate every variant
// on it in child processes. Prints the assembled table.
int run_sweep(const SweepRequest& req, const fs::path& root);

// Every results.csv below `root`, in sorted path order.
std::vector<eval::ResultRow> scan_results(const fs::path& root);

// Entry point of the `pulse` executable; returns the exit code.
int run_cli(int argc, char** argv);

}  // namespace pulse::cli
