#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pulse/errors.hpp"
#include "pulse/train.hpp"

using namespace pulse;
using namespace pulse::train;
using pulse::ad::Tensor;
using pulse::model::PulseConfig;
using pulse::sde::WindowDataset;

namespace fs = std::filesystem;

namespace {

// Reference AdamW on a scalar, written out from the textbook update.
struct ScalarAdamW {
  double w, m = 0.0, v = 0.0;
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd;
  int t = 0;
  void step(double g) {
    ++t;
    w = w - lr * wd * w;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    w = w - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

void set_grad(Tensor t, std::vector<double> g) {
  auto dst = t.mutable_grad();
  std::copy(g.begin(), g.end(), dst.begin());
}

const WindowDataset& shared_dataset() {
  static const WindowDataset ds = [] {
    sde::DatasetConfig c;
    c.family = sde::Family::Lorenz;
    c.sigma = 0.5;
    c.n_classes = 3;
    c.window = 20;
    c.trials_per_class = 2;
    c.steps_per_trial = 1200;
    c.seed = 11;
    return sde::build_dataset(c);
  }();
  return ds;
}

PulseConfig small_model() {
  PulseConfig c;
  c.window = 20;
  c.enc_depth = 2;
  c.enc_width = 6;
  c.init_kernel = 3;
  c.init_hidden = 6;
  c.init_latent = 6;
  c.dec_layers = 1;
  c.dec_hidden = 6;
  c.tv_hidden = 4;
  c.tv_segments = 2;
  c.pseudo_pairs = 2;
  return c;
}

TrainConfig small_train(Variant v = Variant::Pulse, std::size_t epochs = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.peak_lr = 3e-3;
  t.batch_size = 16;
  t.seed = 5;
  t.variant = v;
  t.max_batches_per_epoch = 6;
  return t;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pulse_train_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<double> flat_params(const model::PulseModel& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("adamw: matches a scalar reference over 100 steps") {
  Tensor w = Tensor::from({2}, {0.7, -1.3}, true);
  AdamW opt({w}, {0.9, 0.999, 1e-8, 0.05});
  ScalarAdamW r0{0.7}, r1{-1.3};
  r0.lr = r1.lr = 0.01;
  r0.wd = r1.wd = 0.05;
  for (int s = 0; s < 100; ++s) {
    // gradient of (w - 2)^2 plus a step-dependent wobble
    const double g0 = 2 * (w.data()[0] - 2.0) + std::sin(s), g1 = 2 * (w.data()[1] - 2.0) - std::cos(s);
    w.zero_grad();
    set_grad(w, {g0, g1});
    REQUIRE(opt.step(0.01));
    r0.step(g0);
    r1.step(g1);
  }
  CHECK(std::abs(w.data()[0] - r0.w) < 1e-12);
  CHECK(std::abs(w.data()[1] - r1.w) < 1e-12);
  CHECK(opt.steps() == 100);
}

TEST_CASE("adamw: one step on half w squared") {
  Tensor w = Tensor::from({1}, {1.0}, true);
  AdamW opt({w}, {0.9, 0.999, 1e-8, 0.0});
  set_grad(w, {1.0});
  opt.step(0.1);
  ScalarAdamW ref{1.0};
  ref.lr = 0.1;
  ref.wd = 0.0;
  ref.step(1.0);
  CHECK(w.data()[0] < 1.0);
  CHECK(w.data()[0] == ref.w);
}

TEST_CASE("adamw: zero gradient without decay leaves parameters unchanged") {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  AdamW opt({w}, {0.9, 0.999, 1e-8, 0.0});
  for (int s = 0; s < 5; ++s) {
    set_grad(w, {0.0, 0.0, 0.0});
    REQUIRE(opt.step(0.1));
  }
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == -2.0);
  CHECK(w.data()[2] == 0.5);
}

TEST_CASE("adamw: non-finite gradient skips the step") {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  AdamW opt({w}, {0.9, 0.999, 1e-8, 0.1});
  set_grad(w, {std::nan(""), 1.0});
  CHECK_FALSE(opt.step(0.1));
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == 2.0);
  CHECK(opt.steps() == 0);
}

TEST_CASE("adamw: state round trip continues identically") {
  Tensor a = Tensor::from({2}, {0.3, 0.4}, true), b = Tensor::from({2}, {0.3, 0.4}, true);
  AdamW oa({a}, {0.9, 0.999, 1e-8, 0.01});
  for (int s = 0; s < 4; ++s) {
    set_grad(a, {0.1 * s, -0.2});
    oa.step(0.05);
  }
  std::copy(a.data().begin(), a.data().end(), b.mutable_data().begin());
  AdamW ob({b}, {0.9, 0.999, 1e-8, 0.01});
  ob.load_state(oa.state(), oa.steps());
  set_grad(a, {0.3, 0.3});
  set_grad(b, {0.3, 0.3});
  oa.step(0.05);
  ob.step(0.05);
  CHECK(a.data()[0] == b.data()[0]);
  CHECK(a.data()[1] == b.data()[1]);
}

TEST_CASE("clip: global norm 50 is scaled to exactly 5") {
  Tensor a = Tensor::from({2}, {0, 0}, true), b = Tensor::from({1}, {0}, true);
  set_grad(a, {30.0, 0.0});
  set_grad(b, {40.0});
  const double pre = clip_grad_norm({a, b}, kGradClip);
  CHECK(pre == 50.0);
  CHECK(global_grad_norm({a, b}) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(a.grad()[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(b.grad()[0] == doctest::Approx(4.0).epsilon(1e-15));
  set_grad(b, {1.0});
  a.zero_grad();
  clip_grad_norm({a, b}, kGradClip);
  CHECK(b.grad()[0] == 1.0);
}

TEST_CASE("one-cycle schedule: endpoints and shape") {
  const double peak = 1e-3;
  const std::size_t total = 1000;
  CHECK(one_cycle_lr(0, total, peak) == doctest::Approx(peak / 25).epsilon(1e-12));
  CHECK(one_cycle_lr(300, total, peak) == doctest::Approx(peak).epsilon(1e-12));
  CHECK(one_cycle_lr(total - 1, total, peak) == doctest::Approx(peak / 1e4).epsilon(1e-9));
  double max = 0.0;
  for (std::size_t s = 0; s < total; ++s) {
    const double lr = one_cycle_lr(s, total, peak);
    max = std::max(max, lr);
    if (s > 0 && s <= 300) CHECK(lr > one_cycle_lr(s - 1, total, peak));
    if (s > 300) CHECK(lr < one_cycle_lr(s - 1, total, peak));
  }
  CHECK(max == doctest::Approx(peak).epsilon(1e-12));
  CHECK_THROWS_AS(one_cycle_lr(total, total, peak), ParameterError);
}

TEST_CASE("variants: names round trip and model flags") {
  for (Variant v : {Variant::Pulse, Variant::OraclePositive, Variant::OracleNegative, Variant::NoTvParams,
                    Variant::SharedEncoders, Variant::FixedT0, Variant::RandomPairs})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("nope"), ParameterError);
  CHECK_FALSE(variant_model_config(small_model(), Variant::NoTvParams).use_tv_params);
  CHECK(variant_model_config(small_model(), Variant::SharedEncoders).shared_encoders);
  const model::PulseModel with(small_model(), 1);
  const model::PulseModel without(variant_model_config(small_model(), Variant::NoTvParams), 1);
  CHECK(without.config().theta_dim() == with.config().theta_dim() - 1);
}

TEST_CASE("t0 draws: range, count and the fixed ablation") {
  Rng rng(3);
  std::set<std::size_t> seen;
  for (int k = 0; k < 200; ++k)
    for (auto t : draw_t0(rng, 20, 3, false)) {
      CHECK(t >= 1);
      CHECK(t <= 10);
      seen.insert(t);
    }
  CHECK(seen.size() == 10);
  CHECK(draw_t0(rng, 20, 3, true) == std::vector<std::size_t>{1});
}

TEST_CASE("positive pairs share labels and never pair a window with itself") {
  const auto& ds = shared_dataset();
  const auto pool = ds.indices(sde::Split::Train);
  Rng rng(9);
  const auto partners = same_label_partners(pool, ds.labels, pool, rng);
  REQUIRE(partners.size() == pool.size());
  for (std::size_t k = 0; k < pool.size(); ++k) {
    CHECK(ds.labels[partners[k]] == ds.labels[pool[k]]);
    CHECK(partners[k] != pool[k]);
  }
  const std::vector<int> labels{0, 1, 1};
  CHECK_THROWS_AS(same_label_partners({0}, labels, {0, 1, 2}, rng), ProtocolError);
}

TEST_CASE("temporal mask: one zeroed run per window within the extent") {
  Rng data_rng(1);
  std::vector<double> v(8 * 20 * 3);
  for (auto& x : v) x = 1.0 + data_rng.uniform();
  const Tensor w = Tensor::from({8, 20, 3}, v);
  Rng rng(2);
  std::vector<MaskedRun> runs;
  const Tensor m = temporal_mask(w, 0.25, 0.5, rng, &runs);
  REQUIRE(runs.size() == 8);
  for (std::size_t b = 0; b < 8; ++b) {
    CHECK(runs[b].length >= 5);
    CHECK(runs[b].length <= 10);
    CHECK(runs[b].start + runs[b].length <= 20);
    for (std::size_t t = 0; t < 20; ++t) {
      const bool masked = t >= runs[b].start && t < runs[b].start + runs[b].length;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t i = (b * 20 + t) * 3 + c;
        if (masked)
          CHECK(m.data()[i] == 0.0);
        else
          CHECK(m.data()[i] == w.data()[i]);
      }
    }
  }
}

TEST_CASE("train: deterministic for a fixed seed and loss decreases") {
  const auto& ds = shared_dataset();
  TrainConfig cfg = small_train(Variant::Pulse, 5);
  const TrainState a = train::train(ds, small_model(), cfg);
  const TrainState b = train::train(ds, small_model(), cfg);
  CHECK(a.history_json() == b.history_json());
  CHECK(flat_params(a.model) == flat_params(b.model));
  REQUIRE(a.history.size() == 5);
  CHECK(a.history.back().train_loss < a.history.front().train_loss);
  CHECK(a.history[a.best_epoch].val_loss == a.best_val);
  cfg.seed = 6;
  const TrainState c = train::train(ds, small_model(), cfg);
  CHECK(flat_params(c.model) != flat_params(a.model));
}

TEST_CASE("train: resume continues the uninterrupted run exactly") {
  const auto& ds = shared_dataset();
  const fs::path full = scratch("full"), part = scratch("part");
  TrainConfig cfg = small_train(Variant::Pulse, 4);
  const TrainState ref = train::train(ds, small_model(), cfg, {full, false, true});

  TrainOptions stop{part, false, true};
  stop.stop_after_epochs = 2;
  const TrainState half = train::train(ds, small_model(), cfg, stop);
  CHECK(half.epochs_done == 2);
  const TrainState resumed = train::train(ds, small_model(), cfg, {part, true, true});
  CHECK(resumed.history_json() == ref.history_json());
  CHECK(flat_params(resumed.model) == flat_params(ref.model));
  CHECK(resumed.step == ref.step);
  CHECK(fs::exists(full / "last" / "manifest.json"));
  CHECK(fs::exists(full / "best" / "manifest.json"));
  CHECK(fs::exists(full / "history.json"));

  // A resume from a completed run is a no-op that returns the same history.
  const TrainState again = train::train(ds, small_model(), cfg, {full, true, true});
  CHECK(again.history_json() == ref.history_json());
  CHECK(flat_params(again.model) == flat_params(ref.model));
  fs::remove_all(full);
  fs::remove_all(part);
}

TEST_CASE("train: best checkpoint reload reproduces the validation loss bit-identically") {
  const auto& ds = shared_dataset();
  const fs::path dir = scratch("reload");
  const TrainConfig cfg = small_train(Variant::Pulse, 3);
  const TrainState s = train::train(ds, small_model(), cfg, {dir, false, true});
  nlohmann::json manifest;
  const model::PulseModel reloaded = model::load_model(dir / "best", &manifest);
  CHECK(validation_loss(reloaded, ds, cfg) == manifest.at("val_loss").get<double>());
  CHECK(validation_loss(s.model, ds, cfg) == s.best_val);
  for (std::size_t e = s.best_epoch + 1; e < s.history.size(); ++e) CHECK(s.best_val <= s.history[e].val_loss);
  fs::remove_all(dir);
}

TEST_CASE("train: resume refuses a different configuration") {
  const auto& ds = shared_dataset();
  const fs::path dir = scratch("mismatch");
  TrainConfig cfg = small_train(Variant::Pulse, 1);
  train::train(ds, small_model(), cfg, {dir, false, true});
  cfg.peak_lr = 1e-2;
  CHECK_THROWS_AS(train::train(ds, small_model(), cfg, {dir, true, true}), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("train: oracle and ablation variants run and log diagnostics") {
  const auto& ds = shared_dataset();
  const auto pos = train_oracle(ds, small_model(), small_train(Variant::Pulse, 1), Polarity::Positive);
  CHECK(pos.history[0].extra.at("cross_label_pairs") == 0);
  const auto neg = train_oracle(ds, small_model(), small_train(Variant::Pulse, 1), Polarity::Negative);
  const auto& fr = neg.history[0].extra.at("mask_fraction_per_batch");
  REQUIRE(fr.size() == 6);
  for (double f : fr) {
    CHECK(f >= 0.25);
    CHECK(f <= 0.5);
  }
  const auto rnd = train_ablation(ds, small_model(), small_train(Variant::Pulse, 1), Variant::RandomPairs);
  const double cross = rnd.history[0].extra.at("cross_label_fraction");
  CHECK(cross > 0.4);  // about 2/3 with three balanced classes
  CHECK(cross < 0.9);
  for (Variant v : {Variant::NoTvParams, Variant::SharedEncoders, Variant::FixedT0}) {
    const auto s = train_ablation(ds, small_model(), small_train(Variant::Pulse, 1), v);
    CHECK(std::isfinite(s.best_val));
  }
  CHECK_THROWS_AS(train_ablation(ds, small_model(), small_train(), Variant::Pulse), ParameterError);
}
