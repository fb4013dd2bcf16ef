#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pulse/dataset.hpp"
#include "pulse/model.hpp"

namespace pulse::eval {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Frozen window embeddings with their labels and split tags.
struct EmbeddingSet {
  Matrix vectors;  // [N, D]
  std::vector<int> labels;
  std::vector<sde::Split> splits;
  Vector mean;  // train-split statistics, filled by standardize()
  Vector std;
  bool standardized = false;

  std::size_t size() const { return labels.size(); }
  std::size_t dims() const { return static_cast<std::size_t>(vectors.cols()); }
  std::size_t n_classes() const;  // max label + 1
  std::vector<std::size_t> indices(sde::Split s) const;
  Matrix rows(const std::vector<std::size_t>& idx) const;
  std::vector<int> labels_of(const std::vector<std::size_t>& idx) const;
};

// Time-invariant representation of every window, in dataset order.
EmbeddingSet embed(const model::PulseModel& model, const sde::WindowDataset& data);

// Z-score every row with the train split's per-dimension mean and std.
// Dimensions with zero train variance are only centered.
void standardize(EmbeddingSet& emb);

struct ProbeConfig {
  double C = 1.0;  // inverse L2 strength, lambda = 1 / C
  double tolerance = 1e-6;
  std::size_t max_iterations = 2000;
};

struct Probe {
  Matrix weights;  // [D, S]
  Vector bias;     // [S]
  std::size_t iterations = 0;
  bool converged = false;
  double objective = 0.0;

  Matrix scores(const Matrix& x) const;  // softmax probabilities [N, S]
};

/// Multinomial logistic regression fit by full-batch gradient descent with
/// Armijo backtracking from zero weights. The objective is
///   (1/N) * (sum_i w_i * CE_i + lambda / 2 * ||W||^2)
/// with an unpenalized bias, N = sum of sample weights.
Probe fit_probe(const Matrix& x, const std::vector<int>& y, std::size_t n_classes, const ProbeConfig& cfg = {},
                const std::vector<double>& sample_weights = {});

struct ClassMetrics {
  int label = 0;
  std::size_t support = 0;
  double auroc = 0.0;
  double auprc = 0.0;
  bool skipped = false;
};

struct MetricsReport {
  double accuracy = 0.0;
  double auroc = 0.0;  // macro one-vs-rest
  double auprc = 0.0;  // macro average precision
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
};

/// Accuracy by argmax (ties go to the lowest class), midrank AUROC and step
/// AUPRC per class, macro-averaged over classes that have positives and negatives.
MetricsReport compute_metrics(const Matrix& scores, const std::vector<int>& labels);

double auroc_binary(const std::vector<double>& scores, const std::vector<bool>& positive);
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive);

// Fit on the train split, report on the test split.
MetricsReport linear_probe(const EmbeddingSet& emb, const ProbeConfig& cfg = {});

enum class Coverage {
  Laplace,   // absent classes get one pseudo-example at their train-split mean embedding
  Resample,  // redraw the subset until every class is present
};

struct SubsetRecord {
  std::size_t subset = 0;
  std::size_t n_labeled = 0;
  std::vector<int> pseudo_classes;  // classes covered by a pseudo-example
  std::size_t draws = 1;
  MetricsReport metrics;

  nlohmann::json to_json() const;
};

struct SemiReport {
  double fraction = 0.0;
  Coverage coverage = Coverage::Laplace;
  std::vector<SubsetRecord> subsets;
  double mean_accuracy = 0.0;
  double mean_auroc = 0.0;
  double mean_auprc = 0.0;

  nlohmann::json to_json() const;
};

/// Probe trained on `n_subsets` uniform label subsets of the train split.
SemiReport semi_supervised(const EmbeddingSet& emb, double fraction, std::size_t n_subsets, std::uint64_t seed,
                           Coverage coverage = Coverage::Laplace, const ProbeConfig& cfg = {});

// ---- flat results and tables ----------------------------------------------

struct ResultRow {
  std::string variant;
  std::string setting;  // e.g. "sigma=3" or "sigma=3 semi=0.01"
  std::uint64_t seed = 0;
  std::size_t subset = 0;
  double accuracy = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  std::string config_hash;
};

std::string csv_header();
std::string csv_row(const ResultRow& r);
std::vector<ResultRow> read_csv(const std::filesystem::path& path);
void append_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

struct TableCell {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single row
};

struct TableRow {
  std::string variant;
  std::string setting;
  TableCell accuracy, auroc, auprc;
};

// One row per (variant, setting), averaging over seeds and subsets, in first-seen order.
std::vector<TableRow> assemble_table(const std::vector<ResultRow>& rows);
// Markdown table with percentages as mean ± std.
std::string format_table(const std::vector<TableRow>& table);

}  // namespace pulse::eval
