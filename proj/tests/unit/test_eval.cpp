#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "pulse/errors.hpp"
#include "pulse/eval.hpp"

using namespace pulse;
using namespace pulse::eval;
using sde::Split;

namespace fs = std::filesystem;

namespace {

// Gaussian clusters, class c centered at c * gap along every axis.
EmbeddingSet clusters(std::size_t per_class, std::size_t S, std::size_t D, double gap, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingSet e;
  const std::size_t N = per_class * S;
  e.vectors.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(D));
  for (std::size_t i = 0; i < N; ++i) {
    const int c = static_cast<int>(i % S);
    for (std::size_t d = 0; d < D; ++d)
      e.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = gap * c * (d == 0 ? 1.0 : 0.3) + rng.normal();
    e.labels.push_back(c);
    const double u = rng.uniform();
    e.splits.push_back(u < 0.6 ? Split::Train : (u < 0.7 ? Split::Val : Split::Test));
  }
  return e;
}

std::size_t brute_force_correct(const Matrix& s, const std::vector<int>& y) {
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    int best = 0;
    double bv = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < s.cols(); ++c)
      if (s(i, c) > bv) {
        bv = s(i, c);
        best = static_cast<int>(c);
      }
    correct += best == y[static_cast<std::size_t>(i)];
  }
  return correct;
}

}  // namespace

TEST_CASE("metrics: hand-computed four-point AUROC is exactly 0.75") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<bool> pos{false, false, true, true};
  CHECK(auroc_binary(s, pos) == 0.75);
  Matrix scores(4, 2);
  for (int i = 0; i < 4; ++i) {
    scores(i, 0) = 1.0 - s[static_cast<std::size_t>(i)];
    scores(i, 1) = s[static_cast<std::size_t>(i)];
  }
  const auto r = compute_metrics(scores, {0, 0, 1, 1});
  CHECK(r.per_class[1].auroc == 0.75);
  CHECK(r.auroc == 0.75);
}

TEST_CASE("metrics: perfect and constant scores") {
  Matrix onehot = Matrix::Zero(6, 3);
  const std::vector<int> y{0, 1, 2, 2, 1, 0};
  for (int i = 0; i < 6; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
  const auto p = compute_metrics(onehot, y);
  CHECK(p.accuracy == 1.0);
  CHECK(p.auroc == 1.0);
  CHECK(p.auprc == 1.0);
  const std::vector<bool> balanced{true, false, true, false};
  CHECK(auroc_binary({2.0, 2.0, 2.0, 2.0}, balanced) == 0.5);
  // constant rows: argmax ties resolve to class 0
  const auto c = compute_metrics(Matrix::Constant(6, 3, 0.3), y);
  CHECK(c.accuracy == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("metrics: average precision by step integration") {
  // ranks: +, -, +  -> 1 * 1/2 + 2/3 * 1/2
  CHECK(average_precision({0.9, 0.8, 0.7}, {true, false, true}) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(average_precision({0.5, 0.5}, {true, false}) == 0.5);
}

TEST_CASE("metrics: AUROC invariant under strictly monotone transforms") {
  Rng rng(4);
  std::vector<double> s(200), e(200), a(200);
  std::vector<bool> pos(200);
  for (std::size_t i = 0; i < 200; ++i) {
    pos[i] = rng.uniform() < 0.4;
    s[i] = std::round(4.0 * (rng.normal() + (pos[i] ? 0.7 : 0.0))) / 4.0;  // includes ties
    e[i] = std::exp(s[i]);
    a[i] = 3.0 * s[i] - 7.0;
  }
  const double base = auroc_binary(s, pos);
  CHECK(auroc_binary(e, pos) == base);
  CHECK(auroc_binary(a, pos) == base);
  CHECK(average_precision(e, pos) == average_precision(s, pos));
}

TEST_CASE("metrics: accuracy equals a brute-force argmax count") {
  Rng rng(5);
  Matrix s(1000, 4);
  std::vector<int> y(1000);
  for (int i = 0; i < 1000; ++i) {
    for (int c = 0; c < 4; ++c) s(i, c) = std::round(3.0 * rng.uniform()) / 3.0;
    y[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(4));
  }
  const auto r = compute_metrics(s, y);
  CHECK(r.accuracy == static_cast<double>(brute_force_correct(s, y)) / 1000.0);
}

TEST_CASE("metrics: a class without positives is skipped with a warning") {
  Matrix s(4, 3);
  s << 0.9, 0.1, 0.0, 0.2, 0.8, 0.0, 0.7, 0.3, 0.0, 0.4, 0.6, 0.0;
  const auto r = compute_metrics(s, {0, 1, 0, 1});
  CHECK(r.per_class[2].skipped);
  CHECK(r.warnings.size() == 1);
  CHECK(r.auroc == 1.0);
  CHECK(r.to_json()["per_class"][2]["auroc"].is_null());
}

TEST_CASE("standardize: train rows get zero mean and unit std; test rows do not move the stats") {
  EmbeddingSet e = clusters(50, 3, 4, 2.0, 1);
  e.vectors.col(3).setConstant(5.0);  // zero-variance dimension
  EmbeddingSet s = e;
  standardize(s);
  const Matrix tr = s.rows(s.indices(Split::Train));
  for (Eigen::Index d = 0; d < tr.cols(); ++d) {
    const double m = tr.col(d).mean();
    CHECK(std::abs(m) < 1e-9);
    const double sd = std::sqrt((tr.col(d).array() - m).square().mean());
    if (d < 3) CHECK(sd == doctest::Approx(1.0).epsilon(1e-12));
  }
  // swap two test rows
  EmbeddingSet p = e;
  const auto test = p.indices(Split::Test);
  REQUIRE(test.size() >= 2);
  p.vectors.row(static_cast<Eigen::Index>(test[0])).swap(p.vectors.row(static_cast<Eigen::Index>(test[1])));
  standardize(p);
  CHECK(p.mean == s.mean);
  CHECK(p.std == s.std);
}

TEST_CASE("probe: separable Gaussians reach accuracy 1") {
  EmbeddingSet e = clusters(100, 2, 2, 10.0, 2);  // margin of 5 sigma to the midpoint
  const auto r = linear_probe(e);
  CHECK(r.accuracy == 1.0);
  CHECK(r.auroc == 1.0);
}

TEST_CASE("probe: shuffled labels give chance accuracy within three standard errors") {
  EmbeddingSet e = clusters(400, 4, 6, 3.0, 3);
  Rng rng(8);
  shuffle(e.labels, rng);
  const auto r = linear_probe(e);
  const double n = static_cast<double>(e.indices(Split::Test).size());
  const double p = 0.25, se = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(r.accuracy - p) < 3 * se);
}

TEST_CASE("probe: a feature copying the label gives AUROC 1") {
  EmbeddingSet e = clusters(60, 3, 3, 0.0, 4);
  for (std::size_t i = 0; i < e.size(); ++i) e.vectors(static_cast<Eigen::Index>(i), 0) = e.labels[i];
  const auto r = linear_probe(e);
  CHECK(r.auroc == 1.0);
  CHECK(r.accuracy == 1.0);
}

TEST_CASE("probe: deterministic, converged, and stationary") {
  EmbeddingSet e = clusters(80, 3, 5, 1.5, 6);
  standardize(e);
  const auto tr = e.indices(Split::Train);
  const Matrix x = e.rows(tr);
  const auto y = e.labels_of(tr);
  const Probe a = fit_probe(x, y, 3), b = fit_probe(x, y, 3);
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);
  CHECK(a.converged);
  // Independent objective evaluation: nudging any coordinate cannot lower it.
  auto objective = [&](const Matrix& W, const Vector& bias) {
    double f = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Vector z = (x.row(i) * W).transpose() + bias;
      const double mx = z.maxCoeff();
      double lse = 0.0;
      for (Eigen::Index c = 0; c < z.size(); ++c) lse += std::exp(z(c) - mx);
      f += mx + std::log(lse) - z(y[static_cast<std::size_t>(i)]);
    }
    return (f + 0.5 * W.squaredNorm()) / static_cast<double>(x.rows());
  };
  CHECK(objective(a.weights, a.bias) == doctest::Approx(a.objective).epsilon(1e-12));
  for (Eigen::Index k = 0; k < a.weights.size(); ++k) {
    Matrix up = a.weights, down = a.weights;
    up.data()[k] += 1e-3;
    down.data()[k] -= 1e-3;
    CHECK(objective(up, a.bias) >= a.objective);
    CHECK(objective(down, a.bias) >= a.objective);
  }
}

TEST_CASE("probe: class absent from train is a protocol error") {
  EmbeddingSet e = clusters(30, 3, 2, 2.0, 7);
  for (std::size_t i = 0; i < e.size(); ++i)
    if (e.labels[i] == 2) e.splits[i] = Split::Test;
  CHECK_THROWS_AS(linear_probe(e), ProtocolError);
}

TEST_CASE("semi-supervised: full budget reproduces the probe; mean matches records") {
  EmbeddingSet e = clusters(80, 3, 4, 1.0, 9);
  const auto full = semi_supervised(e, 1.0, 2, 1);
  const auto ref = linear_probe(e);
  CHECK(full.subsets[0].metrics.accuracy == ref.accuracy);
  CHECK(full.subsets[0].metrics.auroc == ref.auroc);
  CHECK(full.subsets[0].metrics.auprc == ref.auprc);

  const auto small = semi_supervised(e, 0.05, 5, 3);
  double sum = 0.0;
  for (const auto& s : small.subsets) sum += s.metrics.accuracy;
  CHECK(small.mean_accuracy == doctest::Approx(sum / 5.0).epsilon(1e-15));
  CHECK_THROWS_AS(semi_supervised(e, 0.001, 1, 1), ParameterError);
}

TEST_CASE("semi-supervised: Laplace pseudo-examples and resampling cover absent classes") {
  EmbeddingSet e = clusters(100, 5, 3, 2.0, 10);
  const std::size_t n_train = e.indices(Split::Train).size();
  const double fraction = 2.5 / static_cast<double>(n_train);  // two labels, five classes
  const auto lap = semi_supervised(e, fraction, 4, 1, Coverage::Laplace);
  for (const auto& s : lap.subsets) {
    CHECK(s.n_labeled == 2);
    CHECK(s.pseudo_classes.size() >= 3);
  }
  const double five = 5.5 / static_cast<double>(n_train);
  const auto res = semi_supervised(e, five, 2, 1, Coverage::Resample);
  for (const auto& s : res.subsets) CHECK(s.pseudo_classes.empty());
}

TEST_CASE("semi-supervised: 5% budget beats 1% on average over ten seeds") {
  double one = 0.0, five = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EmbeddingSet e = clusters(300, 4, 8, 0.6, 100 + seed);
    one += semi_supervised(e, 0.01, 5, seed).mean_accuracy;
    five += semi_supervised(e, 0.05, 5, seed).mean_accuracy;
  }
  CHECK(five > one);
}

TEST_CASE("results CSV round trip and table assembly") {
  const fs::path p = fs::temp_directory_path() / "pulse_eval_rows.csv";
  fs::remove(p);
  std::vector<ResultRow> rows;
  const double acc[3] = {0.9, 0.8, 1.0 / 3.0};
  for (std::uint64_t s = 0; s < 3; ++s) rows.push_back({"pulse", "sigma=3", s, 0, acc[s], 0.95, 0.9, "abc"});
  rows.push_back({"abl-fixed-t0", "sigma=3", 0, 0, 0.5, 0.6, 0.7, "abd"});
  append_csv(p, {rows[0], rows[1]});
  append_csv(p, {rows[2], rows[3]});
  const auto back = read_csv(p);
  REQUIRE(back.size() == 4);
  CHECK(back[2].accuracy == acc[2]);
  const auto t = assemble_table(back);
  REQUIRE(t.size() == 2);
  CHECK(t[0].variant == "pulse");
  CHECK(t[0].accuracy.n == 3);
  const double mean = (0.9 + 0.8 + 1.0 / 3.0) / 3.0;
  CHECK(t[0].accuracy.mean == doctest::Approx(mean).epsilon(1e-15));
  const double var = (std::pow(0.9 - mean, 2) + std::pow(0.8 - mean, 2) + std::pow(1.0 / 3.0 - mean, 2)) / 2.0;
  CHECK(t[0].accuracy.std == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  CHECK(t[1].accuracy.std == 0.0);
  CHECK(format_table(t).find("| pulse | sigma=3 | 3 |") != std::string::npos);
  CHECK_THROWS_AS(csv_row({"a,b", "s", 0, 0, 0, 0, 0, ""}), ParameterError);
  fs::remove(p);
}

TEST_CASE("embed: dimension, identical windows and checkpoint reload") {
  sde::DatasetConfig dc;
  dc.family = sde::Family::Lorenz;
  dc.n_classes = 2;
  dc.window = 20;
  dc.trials_per_class = 2;
  dc.steps_per_trial = 800;
  dc.seed = 3;
  const auto ds = sde::build_dataset(dc);
  model::PulseConfig mc;
  mc.window = 20;
  mc.enc_depth = 2;
  mc.enc_width = 7;
  mc.init_hidden = mc.init_latent = mc.dec_hidden = 4;
  model::PulseModel m(mc, 1);
  m.fit_normalization(ds.windows);
  const auto e = embed(m, ds);
  CHECK(e.dims() == 7);
  CHECK(e.size() == ds.size());
  const auto twice = m.embed(ds.gather({0, 0}));
  CHECK(twice.data()[0] == twice.data()[7]);
  const fs::path dir = fs::temp_directory_path() / "pulse_eval_ckpt";
  fs::remove_all(dir);
  model::save_model(m, dir);
  const auto again = embed(model::load_model(dir), ds);
  CHECK(again.vectors == e.vectors);
  fs::remove_all(dir);
}
