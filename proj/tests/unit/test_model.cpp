#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pulse/errors.hpp"
#include "pulse/grad_check.hpp"
#include "pulse/model.hpp"
#include "test_helpers.hpp"

using namespace pulse;
using namespace pulse::ad;
using namespace pulse::model;
using pulse::testing::random_tensor;

namespace {

// Full-graph checks: loss ~ O(1) while some gradient entries are ~1e-7, so the
// second-order stencil's rounding floor (~1e-10) dominates. The fourth-order
// stencil at 1e-4 cuts rounding to ~1e-11 and stays narrow enough not to
// straddle max-pool switches (at 1e-3 it did).
constexpr double kDeepStep = 1e-4;

PulseConfig tiny_config() {
  PulseConfig c;
  c.channels = 3;
  c.window = 12;
  c.enc_depth = 2;
  c.enc_width = 4;
  c.init_kernel = 3;
  c.init_hidden = 3;
  c.init_latent = 3;
  c.dec_layers = 2;
  c.dec_hidden = 3;
  c.tv_hidden = 2;
  c.tv_segments = 3;
  c.pseudo_pairs = 2;
  return c;
}

std::vector<Tensor> param_tensors(const PulseModel& m) {
  std::vector<Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

Tensor batch_of(std::size_t B, const PulseConfig& c, Rng& rng) {
  return random_tensor({B, c.window, c.channels}, rng, 1.0, false);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

Tensor row(const Tensor& t, std::size_t b) {
  const std::size_t stride = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = 1;
  return Tensor::from(s, std::vector<double>(t.data().begin() + b * stride, t.data().begin() + (b + 1) * stride));
}

}  // namespace

TEST_CASE("config validation") {
  PulseConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.tv_dim = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.pseudo_pairs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.tv_segments = 13;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  CHECK(PulseConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK(c.max_t0() == 6);
  PulseConfig deep = tiny_config();
  deep.enc_depth = 10;
  CHECK_FALSE(deep.warnings().empty());
  CHECK(tiny_config().warnings().empty());
}

TEST_CASE("f_sys: shapes, determinism, piecewise-constant time-varying part") {
  const PulseConfig c = tiny_config();
  const PulseModel m(c, 1);
  Rng rng(5);
  const Tensor y = batch_of(4, c, rng);
  const auto a = m.f_sys(y);
  const auto b = m.f_sys(y);
  CHECK(a.features.shape() == Shape{4, 4, 12});
  CHECK(a.theta.shape() == Shape{4, 4});
  CHECK(a.theta_tv.shape() == Shape{4, 1, 12});
  CHECK(a.combined.shape() == Shape{4, 5, 12});
  CHECK(bit_equal(a.combined, b.combined));
  for (std::size_t s = 0; s < 4; ++s) {
    std::set<double> distinct;
    for (std::size_t t = 0; t < 12; ++t) distinct.insert(a.theta_tv.data()[s * 12 + t]);
    CHECK(distinct.size() <= c.tv_segments);
  }
}

TEST_CASE("f_sys and f_init: batch independence") {
  const PulseConfig c = tiny_config();
  const PulseModel m(c, 2);
  Rng rng(6);
  const Tensor y = batch_of(3, c, rng);
  const auto all = m.f_sys(y);
  const Tensor x0 = m.f_init(y, 4);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(bit_equal(m.f_sys(row(y, b)).theta, row(all.theta, b)));
    CHECK(bit_equal(m.f_init(row(y, b), 4), row(x0, b)));
  }
}

TEST_CASE("f_init: locality around t0 and t0 sensitivity") {
  const PulseConfig c = tiny_config();
  const PulseModel m(c, 3);
  Rng rng(7);
  const Tensor y = batch_of(2, c, rng);
  const std::size_t t0 = 6;
  const Tensor base = m.f_init(y, t0);
  const std::size_t reach = c.init_dilation * (c.init_kernel - 1);  // half of the receptive field
  for (std::size_t t = 0; t < c.window; ++t) {
    Tensor z = Tensor::from(y.shape(), y.values());
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t k = 0; k < 3; ++k) z.mutable_data()[(b * c.window + t) * 3 + k] += 10.0;
    const bool inside = t + reach >= t0 - 1 && t <= t0 - 1 + reach;
    CHECK(bit_equal(m.f_init(z, t0), base) == !inside);
  }
  CHECK_FALSE(bit_equal(m.f_init(y, 1), m.f_init(y, 2)));
  CHECK_THROWS_AS(m.f_init(y, 0), IndexError);
  CHECK_THROWS_AS(m.f_init(y, 13), IndexError);
}

TEST_CASE("decode: zero weights give zero output; empty horizon") {
  const PulseConfig c = tiny_config();
  PulseModel m(c, 4);
  for (auto& p : m.parameters()) {
    Tensor t = p.tensor;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  Rng rng(8);
  const Tensor x0 = random_tensor({2, 3}, rng, 1.0, false);
  const Tensor theta = random_tensor({2, 5, 7}, rng, 1.0, false);
  const Tensor out = m.decode(x0, theta);
  CHECK(out.shape() == Shape{2, 7, 3});
  for (double v : out.data()) CHECK(v == 0.0);
  CHECK(m.decode(x0, Tensor::zeros({2, 5, 0})).shape() == Shape{2, 0, 3});
  CHECK_THROWS_AS(m.decode(x0, Tensor::zeros({2, 4, 3})), DimensionError);
}

TEST_CASE("decode: overflow reports the step") {
  const PulseConfig c = tiny_config();
  PulseModel m(c, 4);
  const Tensor x0 = Tensor::full({1, 3}, std::nan(""));
  try {
    m.decode(x0, Tensor::zeros({1, 5, 4}));
    FAIL("expected overflow");
  } catch (const NumericOverflow& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("loss_cross: perfect reconstruction stub gives zero; positivity; batch order") {
  const PulseConfig c = tiny_config();
  PulseModel zero(c, 5);
  for (auto& p : zero.parameters()) {
    Tensor t = p.tensor;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  // Constant windows standardize to zero, which the all-zero decoder reproduces.
  const Tensor constant = Tensor::full({2, c.window, c.channels}, 3.0);
  zero.set_normalization({3.0, 3.0, 3.0}, {1.0, 1.0, 1.0});
  CHECK(zero.loss_cross(constant, constant).item() == 0.0);

  const PulseModel m(c, 6);
  Rng rng(9);
  const Tensor yi = batch_of(3, c, rng), yj = batch_of(3, c, rng);
  const double l = m.loss_cross(yi, yj).item();
  CHECK(l > 0.0);
  auto swap01 = [&](const Tensor& t) {
    std::vector<double> v(t.values());
    const std::size_t s = c.window * c.channels;
    std::swap_ranges(v.begin(), v.begin() + s, v.begin() + s);
    return Tensor::from(t.shape(), v);
  };
  CHECK(m.loss_cross(swap01(yi), swap01(yj)).item() == doctest::Approx(l).epsilon(1e-13));
  CHECK_THROWS_AS(m.loss_cross(yi, batch_of(2, c, rng)), DimensionError);
}

TEST_CASE("loss_pulse: draw averaging and range checks") {
  const PulseConfig c = tiny_config();
  const PulseModel m(c, 7);
  Rng rng(10);
  const Tensor y = batch_of(3, c, rng);
  CHECK(m.loss_pulse(y, {4, 4}).item() == doctest::Approx(m.loss_pulse(y, {4}).item()).epsilon(1e-14));
  const std::vector<std::size_t> draws{1, 3, 5, 6};
  double mean = 0.0;
  for (auto t0 : draws) mean += m.loss_pulse(y, {t0}).item() / 4.0;
  CHECK(std::abs(m.loss_pulse(y, draws).item() - mean) < 1e-12);
  CHECK_THROWS_AS(m.loss_pulse(y, {}), ContractError);
  CHECK_THROWS_AS(m.loss_pulse(y, {0}), IndexError);
  CHECK_THROWS_AS(m.loss_pulse(y, {7}), IndexError);
}

TEST_CASE("full PULSE graph passes finite-difference checks on 20 seeds") {
  const PulseConfig c = tiny_config();
  double worst_pulse = 0.0, worst_cross = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PulseModel m(c, 100 + seed);
    Rng rng(200 + seed);
    const Tensor y = batch_of(2, c, rng), y2 = batch_of(2, c, rng);
    const std::size_t t0 = 1 + seed % c.max_t0();
    worst_pulse = std::max(worst_pulse, grad_check([&] { return m.loss_pulse(y, {t0, 2}); }, param_tensors(m),
                                                   kDeepStep, Stencil::Central4));
    worst_cross = std::max(worst_cross, grad_check([&] { return m.loss_cross(y, y2); }, param_tensors(m), kDeepStep,
                                                   Stencil::Central4));
  }
  MESSAGE("max relative error: pulse " << worst_pulse << ", cross " << worst_cross);
  CHECK(worst_pulse < 1e-4);
  CHECK(worst_cross < 1e-4);
}

TEST_CASE("ablation variants: graph shape and gradients") {
  PulseConfig no_tv = tiny_config();
  no_tv.use_tv_params = false;
  const PulseModel a(no_tv, 1);
  CHECK(a.decoder_input_dim() == no_tv.enc_width);
  CHECK(PulseModel(tiny_config(), 1).decoder_input_dim() == tiny_config().enc_width + 1);

  PulseConfig shared = tiny_config();
  shared.shared_encoders = true;
  const PulseModel s(shared, 2);
  for (const auto& p : s.parameters()) CHECK(p.name.rfind("init.", 0) != 0);
  Rng rng(11);
  const Tensor y = batch_of(2, shared, rng);
  CHECK(grad_check([&] { return s.loss_pulse(y, {3}); }, param_tensors(s), kDeepStep, Stencil::Central4) < 1e-4);
  CHECK(grad_check([&] { return a.loss_pulse(y, {3}); }, param_tensors(a), kDeepStep, Stencil::Central4) < 1e-4);
}

TEST_CASE("every parameter receives a finite gradient") {
  const PulseConfig c = tiny_config();
  PulseModel m(c, 12);
  Rng rng(13);
  const Tensor y = batch_of(4, c, rng);
  Tape tape;
  {
    TapeScope scope(tape);
    backward(m.loss_pulse(y, {2, 5}));
  }
  for (const auto& p : m.parameters()) {
    REQUIRE(p.tensor.has_grad());
    for (double g : p.tensor.grad()) CHECK(std::isfinite(g));
  }
}

TEST_CASE("normalization statistics and embeddings") {
  const PulseConfig c = tiny_config();
  PulseModel m(c, 14);
  Rng rng(15);
  Tensor y = random_tensor({5, c.window, c.channels}, rng, 4.0, false);
  for (std::size_t k = 0; k < y.numel(); ++k) y.mutable_data()[k] += 10.0 * static_cast<double>(k % 3);
  m.fit_normalization(y);
  const Tensor n = m.normalize(y);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double s = 0.0, s2 = 0.0;
    const std::size_t rows = n.numel() / 3;
    for (std::size_t r = 0; r < rows; ++r) {
      s += n.data()[r * 3 + ch];
      s2 += n.data()[r * 3 + ch] * n.data()[r * 3 + ch];
    }
    CHECK(std::abs(s / rows) < 1e-12);
    CHECK(s2 / rows == doctest::Approx(1.0));
  }
  const Tensor e = m.embed(y, 2);
  CHECK(e.shape() == Shape{5, c.enc_width});
  CHECK(bit_equal(row(e, 3), m.embed(row(y, 3))));
}

TEST_CASE("checkpoint round trip is bit-identical") {
  const PulseConfig c = tiny_config();
  PulseModel m(c, 16);
  Rng rng(17);
  const Tensor y = batch_of(3, c, rng);
  m.fit_normalization(y);
  const auto dir = std::filesystem::temp_directory_path() / "pulse_test_model_ckpt";
  std::filesystem::remove_all(dir);
  save_model(m, dir, {{"step", 42}});
  nlohmann::json manifest;
  const PulseModel back = load_model(dir, &manifest);
  CHECK(manifest.at("step") == 42);
  CHECK(back.loss_pulse(y, {3}).item() == m.loss_pulse(y, {3}).item());
  CHECK(bit_equal(back.embed(y), m.embed(y)));

  std::filesystem::remove(dir / "dec.out.w.f64");
  CHECK_THROWS_AS(load_model(dir), ProtocolError);
}
