#include <cmath>
#include <set>

#include "doctest.h"
#include "pulse/errors.hpp"
#include "pulse/grad_check.hpp"
#include "pulse/ops.hpp"
#include "test_helpers.hpp"

using namespace pulse;
using namespace pulse::ad;
using pulse::testing::random_tensor;
using pulse::testing::to_vec;

namespace {

// Direct quadruple-loop convolution used as an independent forward oracle.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, std::size_t dilation, Padding pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = w.dim(0), K = w.dim(2);
  const long span = static_cast<long>(dilation * (K - 1));
  const long left = pad == Padding::SameCausal ? span : span / 2;
  std::vector<double> out(B * O * T, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t k = 0; k < K; ++k) {
            const long s = static_cast<long>(t) + static_cast<long>(k * dilation) - left;
            if (s < 0 || s >= static_cast<long>(T)) continue;
            out[(b * O + o) * T + t] += w.data()[(o * C + c) * K + k] * x.data()[(b * C + c) * T + s];
          }
  return out;
}

}  // namespace

TEST_CASE("conv1d identity kernel reproduces the input") {
  Rng rng(1);
  Tensor x = random_tensor({2, 3, 7}, rng, 1.0, false);
  Tensor w = Tensor::zeros({3, 3, 1});
  for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[c * 3 + c] = 1.0;
  Tensor y = conv1d(x, w, Tensor{}, 1);
  CHECK(to_vec(y.data()) == to_vec(x.data()));
}

TEST_CASE("conv1d centered all-ones example") {
  Tensor x = Tensor::full({1, 1, 4}, 1.0);
  Tensor w = Tensor::from({1, 1, 3}, {1, 1, 1});
  Tensor y = conv1d(x, w, Tensor{}, 1, Padding::SameCentered);
  CHECK(to_vec(y.data()) == std::vector<double>{2, 3, 3, 2});
}

TEST_CASE("conv1d matches a direct loop and keeps the time length") {
  Rng rng(2);
  for (std::size_t d : {1u, 2u, 4u, 8u}) {
    for (auto pad : {Padding::SameCentered, Padding::SameCausal}) {
      Tensor x = random_tensor({2, 3, 19}, rng, 1.0, false);
      Tensor w = random_tensor({4, 3, 3}, rng, 1.0, false);
      Tensor y = conv1d(x, w, Tensor{}, d, pad);
      CHECK(y.dim(2) == 19);
      const auto ref = naive_conv(x, w, d, pad);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv1d causal output does not see the future") {
  Rng rng(3);
  Tensor x = random_tensor({1, 2, 12}, rng, 1.0, false);
  Tensor w = random_tensor({2, 2, 3}, rng, 1.0, false);
  Tensor y0 = conv1d(x, w, Tensor{}, 2, Padding::SameCausal);
  x.mutable_data()[11] += 5.0;
  Tensor y1 = conv1d(x, w, Tensor{}, 2, Padding::SameCausal);
  for (std::size_t t = 0; t < 11; ++t) CHECK(y0.data()[t] == y1.data()[t]);
}

TEST_CASE("conv1d rejects mismatched channels") {
  Tensor x = Tensor::zeros({1, 3, 5});
  Tensor w = Tensor::zeros({2, 2, 3});
  CHECK_THROWS_AS(conv1d(x, w, Tensor{}, 1), DimensionError);
  CHECK_THROWS_AS(conv1d(Tensor::zeros({3, 5}), w, Tensor{}, 1), DimensionError);
  CHECK_THROWS_AS(conv1d(Tensor::zeros({1, 2, 5}), w, Tensor{}, 0), ParameterError);
}

TEST_CASE("conv1d gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    Tensor x = random_tensor({2, 3, 9}, rng);
    Tensor w = random_tensor({2, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    const double err = grad_check([&] { return sum(conv1d(x, w, b, 2)); }, {x, w, b});
    CHECK(err < 1e-6);
    const double err2 = grad_check(
        [&] {
          Tensor y = conv1d(x, w, b, 1);
          return sum(mul(y, y));
        },
        {x, w, b});
    CHECK(err2 < 1e-6);
  }
}

TEST_CASE("linear examples") {
  Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor x = Tensor::from({1, 2}, {1, 1});
  Tensor y = linear(x, w, Tensor::zeros({2}));
  CHECK(to_vec(y.data()) == std::vector<double>{3, 7});

  Rng rng(4);
  Tensor x3 = random_tensor({2, 5, 3}, rng, 1.0, false);
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor y3 = linear(x3, eye, Tensor::zeros({3}));
  CHECK(y3.shape() == Shape{2, 5, 3});
  CHECK(to_vec(y3.data()) == to_vec(x3.data()));
  CHECK_THROWS_AS(linear(x3, Tensor::zeros({2, 4}), Tensor{}), DimensionError);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(5);
  Tensor x = random_tensor({3, 4, 5}, rng);
  Tensor w = random_tensor({2, 5}, rng);
  Tensor b = random_tensor({2}, rng);
  const double err = grad_check(
      [&] {
        Tensor y = linear(x, w, b);
        return sum(mul(y, y));
      },
      {x, w, b});
  CHECK(err < 1e-6);
}

TEST_CASE("gru_cell gating identities") {
  const std::size_t B = 2, in = 3, H = 4;
  GruParams p{Tensor::zeros({3 * H, in}), Tensor::zeros({3 * H, H}), Tensor::zeros({3 * H}), Tensor::zeros({3 * H})};
  Tensor h = gru_cell(Tensor::zeros({B, in}), Tensor::zeros({B, H}), p);
  for (double v : h.data()) CHECK(v == 0.0);

  Rng rng(6);
  GruParams q{random_tensor({3 * H, in}, rng, 1.0, false), random_tensor({3 * H, H}, rng, 1.0, false),
              Tensor::zeros({3 * H}), Tensor::zeros({3 * H})};
  for (std::size_t j = 0; j < H; ++j) q.b_ih.mutable_data()[H + j] = 1e3;  // update gate saturates at 1
  Tensor x = random_tensor({B, in}, rng, 1.0, false);
  Tensor h0 = random_tensor({B, H}, rng, 1.0, false);
  Tensor h1 = gru_cell(x, h0, q);
  for (std::size_t i = 0; i < h1.numel(); ++i) CHECK(h1.data()[i] == doctest::Approx(h0.data()[i]).epsilon(1e-12));
}

TEST_CASE("gru_cell reports non-finite state") {
  const std::size_t H = 2;
  GruParams p{Tensor::zeros({3 * H, 1}), Tensor::zeros({3 * H, H}), Tensor::zeros({3 * H}), Tensor::zeros({3 * H})};
  Tensor h = Tensor::from({1, H}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(gru_cell(Tensor::zeros({1, 1}), h, p), NumericOverflow);
  CHECK_THROWS_AS(gru_cell(Tensor::zeros({1, 2}), Tensor::zeros({1, H}), p), DimensionError);
}

TEST_CASE("gru_cell gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const std::size_t B = 3, in = 4, H = 5;
    GruParams p{random_tensor({3 * H, in}, rng, 0.5), random_tensor({3 * H, H}, rng, 0.5), random_tensor({3 * H}, rng, 0.5),
                random_tensor({3 * H}, rng, 0.5)};
    Tensor x = random_tensor({B, in}, rng);
    Tensor h = random_tensor({B, H}, rng);
    const double err = grad_check(
        [&] {
          Tensor h1 = gru_cell(x, h, p);
          Tensor h2 = gru_cell(x, h1, p);
          return sum(mul(h2, h2));
        },
        {x, h, p.w_ih, p.w_hh, p.b_ih, p.b_hh});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("max_pool_time values and tie routing") {
  Tensor x = Tensor::from({1, 1, 3}, {1, 3, 2});
  CHECK(max_pool_time(x).item() == 3.0);

  Tensor c = Tensor::full({1, 1, 4}, 2.5, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = max_pool_time(c);
    CHECK(y.item() == 2.5);
    backward(sum(y));
  }
  CHECK(to_vec(c.grad()) == std::vector<double>{1, 0, 0, 0});
  CHECK_THROWS_AS(max_pool_time(Tensor::zeros({1, 1, 0})), DimensionError);
}

TEST_CASE("max_pool_time gradients match finite differences") {
  Rng rng(7);
  Tensor x = random_tensor({2, 3, 6}, rng);
  const double err = grad_check(
      [&] {
        Tensor y = max_pool_time(x);
        return sum(mul(y, y));
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("adaptive_max_pool_assign examples") {
  Tensor x = Tensor::from({1, 1, 4}, {1, 5, 2, 4});
  CHECK(to_vec(adaptive_max_pool_assign(x, 2).data()) == std::vector<double>{5, 5, 4, 4});
  CHECK(to_vec(adaptive_max_pool_assign(x, 4).data()) == to_vec(x.data()));
  CHECK(to_vec(adaptive_max_pool_assign(x, 1).data()) == std::vector<double>{5, 5, 5, 5});
  CHECK_THROWS_AS(adaptive_max_pool_assign(x, 0), ParameterError);
  CHECK_THROWS_AS(adaptive_max_pool_assign(x, 5), ParameterError);
}

TEST_CASE("adaptive_max_pool_assign output is piecewise constant") {
  Rng rng(8);
  for (std::size_t segments : {1u, 2u, 3u, 4u, 7u}) {
    Tensor x = random_tensor({3, 2, 23}, rng, 1.0, false);
    Tensor y = adaptive_max_pool_assign(x, segments);
    for (std::size_t r = 0; r < 6; ++r) {
      std::set<double> plateaus(y.data().begin() + r * 23, y.data().begin() + (r + 1) * 23);
      CHECK(plateaus.size() <= segments);
      std::size_t changes = 0;
      for (std::size_t t = 1; t < 23; ++t) changes += y.data()[r * 23 + t] != y.data()[r * 23 + t - 1];
      CHECK(changes + 1 <= segments);
    }
  }
  Tensor x = random_tensor({2, 2, 10}, rng);
  const double err = grad_check(
      [&] {
        Tensor y = adaptive_max_pool_assign(x, 3);
        return sum(mul(y, y));
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor unrelated = Tensor::from({2}, {3, 4}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = sum(mul(x, x));
  Tensor other = sum(unrelated);
  (void)other;
  backward(loss);
  CHECK(to_vec(x.grad()) == std::vector<double>{2, 4});
  CHECK_FALSE(unrelated.has_grad());

  backward(loss);  // accumulates into leaves
  CHECK(to_vec(x.grad()) == std::vector<double>{4, 8});

  Tensor vec = mul(x, x);
  CHECK_THROWS_AS(backward(vec), ContractError);
}

TEST_CASE("backward is deterministic") {
  Rng rng(9);
  Tensor x = random_tensor({2, 3, 11}, rng);
  Tensor w = random_tensor({3, 3, 3}, rng);
  auto run = [&] {
    x.zero_grad();
    w.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor y = gelu(conv1d(x, w, Tensor{}, 2));
    backward(sum(mul(y, y)));
    return std::make_pair(to_vec(x.grad()), to_vec(w.grad()));
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check sanity") {
  Rng rng(10);
  Tensor x = random_tensor({6}, rng);
  Tensor A = random_tensor({6, 6}, rng, 1.0, false);
  // x^T A x written with library ops: sum(x * (A x)).
  auto quadratic = [&] { return sum(mul(x, linear(x, A, Tensor{}))); };
  CHECK(grad_check(quadratic, {x}, 1e-5) < 1e-9);

  Tensor y = random_tensor({3}, rng);
  auto constant = [&] { return Tensor::scalar(4.0); };
  const auto res = grad_check_detailed(constant, {y});
  CHECK(res.max_abs_autodiff == 0.0);
  CHECK(res.max_abs_numeric == 0.0);
  CHECK(res.max_rel_error == 0.0);
}

TEST_CASE("elementwise and shape ops gradients") {
  Rng rng(11);
  Tensor a = random_tensor({2, 3, 5}, rng);
  Tensor b = random_tensor({2, 3, 5}, rng);
  Tensor c = random_tensor({2, 4}, rng);
  const double err = grad_check(
      [&] {
        Tensor t = add(tanh(a), sigmoid(sub(a, b)));
        Tensor u = concat_channels(t, repeat_time(c, 5));
        Tensor v = swap_last_axes(slice_time(u, 1, 3));
        Tensor w = stack_steps({select_time(u, 0), select_time(u, 4)});
        return add(sum(mul(v, v)), add(mean(gelu(w)), scale(sum(relu(b)), 0.5)));
      },
      {a, b, c});
  CHECK(err < 1e-6);
}

TEST_CASE("sequence_mse averages over batch and time") {
  Tensor p = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  Tensor y = Tensor::from({1, 2, 2}, {0, 0, 0, 0});
  CHECK(sequence_mse(p, y).item() == doctest::Approx((1 + 4 + 9 + 16) / 2.0));
  CHECK_THROWS_AS(sequence_mse(p, Tensor::zeros({1, 1, 2})), DimensionError);
}
