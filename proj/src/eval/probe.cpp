#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pulse/errors.hpp"
#include "pulse/eval.hpp"

namespace pulse::eval {

using sde::Split;

std::size_t EmbeddingSet::n_classes() const {
  int hi = -1;
  for (int l : labels) hi = std::max(hi, l);
  return static_cast<std::size_t>(hi + 1);
}

std::vector<std::size_t> EmbeddingSet::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

Matrix EmbeddingSet::rows(const std::vector<std::size_t>& idx) const {
  Matrix out(static_cast<Eigen::Index>(idx.size()), vectors.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = vectors.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

std::vector<int> EmbeddingSet::labels_of(const std::vector<std::size_t>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(i));
  return out;
}

EmbeddingSet embed(const model::PulseModel& model, const sde::WindowDataset& data) {
  const ad::Tensor theta = model.embed(data.windows);
  EmbeddingSet e;
  const auto N = static_cast<Eigen::Index>(theta.dim(0)), D = static_cast<Eigen::Index>(theta.dim(1));
  e.vectors = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      theta.data().data(), N, D);
  e.labels = data.labels;
  e.splits = data.splits;
  return e;
}

void standardize(EmbeddingSet& emb) {
  if (emb.standardized) return;
  const auto train = emb.indices(Split::Train);
  if (train.empty()) throw ProtocolError("standardization needs train rows");
  const Matrix x = emb.rows(train);
  emb.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - emb.mean.transpose();
  emb.std = (centered.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().transpose();
  for (Eigen::Index d = 0; d < emb.std.size(); ++d)
    if (!(emb.std(d) > 0.0)) emb.std(d) = 1.0;
  emb.vectors = (emb.vectors.rowwise() - emb.mean.transpose()).array().rowwise() / emb.std.transpose().array();
  emb.standardized = true;
}

// ---- probe -------------------------------------------------------------------

namespace {

struct ProbeProblem {
  const Matrix& x;
  Matrix onehot;  // [N, S]
  Vector w;       // sample weights
  double total = 0.0;
  double lambda = 1.0;

  Matrix logits(const Matrix& W, const Vector& b) const { return (x * W).rowwise() + b.transpose(); }

  // Objective and (optionally) gradient at (W, b).
  double eval(const Matrix& W, const Vector& b, Matrix* gW, Vector* gb) const {
    const Matrix z = logits(W, b);
    const Vector zmax = z.rowwise().maxCoeff();
    const Matrix e = (z.colwise() - zmax).array().exp();
    const Vector sum = e.rowwise().sum();
    const Vector lse = zmax.array() + sum.array().log();
    const Vector picked = (z.array() * onehot.array()).rowwise().sum();
    double f = w.dot(lse - picked) + 0.5 * lambda * W.squaredNorm();
    f /= total;
    if (gW) {
      Matrix r = e.array().colwise() / sum.array();
      r -= onehot;
      r.array().colwise() *= w.array();
      *gW = (x.transpose() * r + lambda * W) / total;
      *gb = r.colwise().sum().transpose() / total;
    }
    return f;
  }
};

}  // namespace

Matrix Probe::scores(const Matrix& x) const {
  Matrix z = (x * weights).rowwise() + bias.transpose();
  const Vector zmax = z.rowwise().maxCoeff();
  z = (z.colwise() - zmax).array().exp();
  const Vector sum = z.rowwise().sum();
  return z.array().colwise() / sum.array();
}

Probe fit_probe(const Matrix& x, const std::vector<int>& y, std::size_t n_classes, const ProbeConfig& cfg,
                const std::vector<double>& sample_weights) {
  if (!(cfg.C > 0.0)) throw ConfigError("probe C must be positive");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DimensionError("probe rows and labels differ");
  if (!sample_weights.empty() && sample_weights.size() != y.size())
    throw DimensionError("probe sample weights and labels differ");
  const auto N = x.rows(), D = x.cols(), S = static_cast<Eigen::Index>(n_classes);
  ProbeProblem prob{x, Matrix::Zero(N, S), Vector::Ones(N), 0.0, 1.0 / cfg.C};
  for (Eigen::Index i = 0; i < N; ++i) {
    const int label = y[static_cast<std::size_t>(i)];
    if (label < 0 || label >= S) throw IndexError("probe label out of range");
    prob.onehot(i, label) = 1.0;
    if (!sample_weights.empty()) prob.w(i) = sample_weights[static_cast<std::size_t>(i)];
  }
  prob.total = prob.w.sum();

  Probe p{Matrix::Zero(D, S), Vector::Zero(S)};
  Matrix gW;
  Vector gb;
  double f = prob.eval(p.weights, p.bias, &gW, &gb);
  double step = 1.0;
  constexpr double kArmijo = 1e-4;
  for (; p.iterations < cfg.max_iterations; ++p.iterations) {
    const double g2 = gW.squaredNorm() + gb.squaredNorm();
    if (std::sqrt(g2) < cfg.tolerance) {
      p.converged = true;
      break;
    }
    step = std::min(step * 2.0, 1e6);
    Matrix W;
    Vector b;
    double fn;
    for (;;) {
      W = p.weights - step * gW;
      b = p.bias - step * gb;
      fn = prob.eval(W, b, nullptr, nullptr);
      if (fn <= f - kArmijo * step * g2 || step < 1e-20) break;
      step *= 0.5;
    }
    if (!(fn < f)) break;  // no further progress at machine precision
    p.weights = std::move(W);
    p.bias = std::move(b);
    f = prob.eval(p.weights, p.bias, &gW, &gb);
  }
  if (!p.converged && std::sqrt(gW.squaredNorm() + gb.squaredNorm()) < cfg.tolerance) p.converged = true;
  p.objective = f;
  return p;
}

// ---- metrics -----------------------------------------------------------------

double auroc_binary(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  const double total_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  if (total_pos == 0.0) return std::numeric_limits<double>::quiet_NaN();
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    // Tied scores form one threshold.
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (positive[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

MetricsReport compute_metrics(const Matrix& scores, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) throw DimensionError("scores and labels differ");
  if (labels.empty()) throw ProtocolError("no rows to score");
  const auto N = scores.rows(), S = scores.cols();
  MetricsReport r;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < S; ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(N);

  double auroc_sum = 0.0, auprc_sum = 0.0;
  std::size_t used = 0;
  for (Eigen::Index c = 0; c < S; ++c) {
    ClassMetrics m;
    m.label = static_cast<int>(c);
    std::vector<double> col(static_cast<std::size_t>(N));
    std::vector<bool> pos(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) {
      col[static_cast<std::size_t>(i)] = scores(i, c);
      pos[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c;
      m.support += pos[static_cast<std::size_t>(i)];
    }
    if (m.support == 0 || m.support == static_cast<std::size_t>(N)) {
      m.skipped = true;
      m.auroc = m.auprc = std::numeric_limits<double>::quiet_NaN();
      r.warnings.push_back("class " + std::to_string(c) + " skipped: " +
                           (m.support == 0 ? "no positives" : "no negatives"));
    } else {
      m.auroc = auroc_binary(col, pos);
      m.auprc = average_precision(col, pos);
      auroc_sum += m.auroc;
      auprc_sum += m.auprc;
      ++used;
    }
    r.per_class.push_back(m);
  }
  r.auroc = used ? auroc_sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
  r.auprc = used ? auprc_sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

MetricsReport linear_probe(const EmbeddingSet& input, const ProbeConfig& cfg) {
  EmbeddingSet emb = input;
  standardize(emb);
  const auto train = emb.indices(Split::Train), test = emb.indices(Split::Test);
  if (test.empty()) throw ProtocolError("probe needs test rows");
  const std::size_t S = emb.n_classes();
  std::vector<bool> seen(S, false);
  for (auto i : train) seen[static_cast<std::size_t>(emb.labels[i])] = true;
  const auto present = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
  for (std::size_t c = 0; c < S; ++c)
    if (!seen[c]) throw ProtocolError("class " + std::to_string(c) + " is absent from the train split");
  if (present < 2) throw ProtocolError("probe needs at least two classes in the train split");
  const Probe probe = fit_probe(emb.rows(train), emb.labels_of(train), S, cfg);
  MetricsReport r = compute_metrics(probe.scores(emb.rows(test)), emb.labels_of(test));
  if (!probe.converged)
    r.warnings.push_back("probe stopped after " + std::to_string(probe.iterations) + " iterations");
  return r;
}

SemiReport semi_supervised(const EmbeddingSet& input, double fraction, std::size_t n_subsets, std::uint64_t seed,
                           Coverage coverage, const ProbeConfig& cfg) {
  EmbeddingSet emb = input;
  standardize(emb);
  const auto train = emb.indices(Split::Train), test = emb.indices(Split::Test);
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size())));
  if (!(fraction > 0.0 && fraction <= 1.0) || n < 1)
    throw ParameterError("label fraction must leave at least one labeled window");
  if (n_subsets < 1) throw ParameterError("need at least one label subset");
  const std::size_t S = emb.n_classes();
  const Matrix test_x = emb.rows(test);
  const auto test_y = emb.labels_of(test);

  SemiReport report;
  report.fraction = fraction;
  report.coverage = coverage;
  const Rng root = Rng(seed).split("subset");
  for (std::size_t k = 0; k < n_subsets; ++k) {
    Rng rng = root.split(k);
    SubsetRecord rec;
    rec.subset = k;
    rec.n_labeled = n;
    std::vector<std::size_t> chosen;
    std::vector<bool> covered;
    for (rec.draws = 1;; ++rec.draws) {
      std::vector<std::size_t> pool = train;
      shuffle(pool, rng);
      chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
      std::sort(chosen.begin(), chosen.end());
      covered.assign(S, false);
      for (auto i : chosen) covered[static_cast<std::size_t>(emb.labels[i])] = true;
      const bool all = std::all_of(covered.begin(), covered.end(), [](bool b) { return b; });
      if (coverage == Coverage::Laplace || all) break;
      if (rec.draws >= 1000) throw ProtocolError("could not draw a label subset covering every class");
    }
    Matrix x = emb.rows(chosen);
    std::vector<int> y = emb.labels_of(chosen);
    std::vector<double> w(y.size(), 1.0);
    for (std::size_t c = 0; c < S; ++c) {
      if (covered[c]) continue;
      Vector mean = Vector::Zero(static_cast<Eigen::Index>(emb.dims()));
      std::size_t count = 0;
      for (auto i : train)
        if (emb.labels[i] == static_cast<int>(c)) {
          mean += emb.vectors.row(static_cast<Eigen::Index>(i)).transpose();
          ++count;
        }
      if (count == 0) throw ProtocolError("class " + std::to_string(c) + " is absent from the train split");
      x.conservativeResize(x.rows() + 1, Eigen::NoChange);
      x.row(x.rows() - 1) = (mean / static_cast<double>(count)).transpose();
      y.push_back(static_cast<int>(c));
      w.push_back(1.0);
      rec.pseudo_classes.push_back(static_cast<int>(c));
    }
    const Probe probe = fit_probe(x, y, S, cfg, w);
    rec.metrics = compute_metrics(probe.scores(test_x), test_y);
    rec.metrics.seed = seed;
    if (!rec.pseudo_classes.empty())
      rec.metrics.warnings.push_back("pseudo-examples added for " + std::to_string(rec.pseudo_classes.size()) +
                                     " absent classes");
    report.mean_accuracy += rec.metrics.accuracy;
    report.mean_auroc += rec.metrics.auroc;
    report.mean_auprc += rec.metrics.auprc;
    report.subsets.push_back(std::move(rec));
  }
  const auto count = static_cast<double>(n_subsets);
  report.mean_accuracy /= count;
  report.mean_auroc /= count;
  report.mean_auprc /= count;
  return report;
}

}  // namespace pulse::eval
