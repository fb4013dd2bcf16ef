#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pulse/sde.hpp"
#include "pulse/tensor.hpp"

namespace pulse::sde {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

std::string split_name(Split s);
Split parse_split(const std::string& name);

struct DatasetConfig {
  Family family = Family::Lorenz;
  double sigma = 0.0;
  std::size_t n_classes = 5;
  std::size_t window = 100;
  std::size_t trials_per_class = 5;
  std::size_t steps_per_trial = 20000;
  double dt = kDefaultDt;
  std::uint64_t seed = 0;

  void validate() const;
};

struct WindowProvenance {
  std::uint32_t trial = 0;  // global trial id, ordered by (class, trial)
  std::uint32_t start = 0;  // start index in the post burn-in trajectory
};

struct TrialRecord {
  std::uint32_t label = 0;
  std::uint64_t seed = 0;
  std::uint32_t length = 0;
  std::uint32_t redraws = 0;
};

struct WindowDataset {
  ad::Tensor windows;  // [N, W, M]
  std::vector<int> labels;
  std::vector<Split> splits;
  std::vector<WindowProvenance> provenance;
  std::vector<double> class_params;  // label -> swept parameter value
  std::vector<double> sigma_tilde;   // label -> diffusion scale used
  std::vector<TrialRecord> trials;
  DatasetConfig config;
  std::string config_hash;

  std::size_t size() const { return labels.size(); }
  std::size_t window() const { return windows.dim(1); }
  std::size_t dims() const { return windows.dim(2); }
  std::size_t n_classes() const { return class_params.size(); }

  // Indices of windows in one split, in dataset order.
  std::vector<std::size_t> indices(Split s) const;
  // Gather windows by index into [n, W, M].
  ad::Tensor gather(const std::vector<std::size_t>& idx) const;
  std::vector<int> gather_labels(const std::vector<std::size_t>& idx) const;
};

// Half-open [lo, hi) ranges of a length-T trial for train, val, test (70:15:15).
struct SplitBounds {
  std::size_t lo[3];
  std::size_t hi[3];
};
SplitBounds split_bounds(std::size_t length);

// Start offsets of non-overlapping length-W windows in [lo, hi).
std::vector<std::size_t> window_starts(std::size_t lo, std::size_t hi, std::size_t window);

/// Sample n_classes grid values without replacement, integrate every trial,
/// split each trial along time and window each segment.
WindowDataset build_dataset(const DatasetConfig& config);

// Regenerate the trajectory behind a trial id (used to audit provenance).
Trajectory regenerate_trial(const WindowDataset& ds, std::size_t trial);

// Structural checks: provenance, split containment, label coverage.
void validate_dataset(const WindowDataset& ds);

std::string dataset_config_json(const DatasetConfig& config);
std::string dataset_config_hash(const DatasetConfig& config);

void save_dataset(const WindowDataset& ds, const std::filesystem::path& path);
WindowDataset load_dataset(const std::filesystem::path& path);
// One CSV per split: <stem>_<split>.csv with one row per (window, time step).
std::vector<std::filesystem::path> export_csv(const WindowDataset& ds, const std::filesystem::path& stem);

}  // namespace pulse::sde
