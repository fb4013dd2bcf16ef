#include "pulse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "pulse/errors.hpp"

namespace pulse::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Decides whether an op on these inputs must be recorded.
bool should_track(std::initializer_list<const Tensor*> ts) { return active_tape() && any_requires_grad(ts); }

void record(std::vector<std::shared_ptr<TensorImpl>> inputs, const Tensor& out, Tape::Adjoint fn) {
  active_tape()->record(std::move(inputs), out.impl_ptr(), std::move(fn));
}

bool wants_grad(const TensorImpl* t) { return t && t->requires_grad; }

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": " + name + " is undefined");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  const bool tracked = should_track({&a});
  Tensor result = make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* O = result.impl();
    record({a.impl_ptr()}, result, [A, O, deriv]() {
      auto& ga = grad_buffer(*A);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += O->grad[i] * deriv(A->data[i], O->data[i]);
    });
  }
  return result;
}

}  // namespace

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t dilation, Padding padding) {
  require_rank(input, 3, "conv1d", "input");
  require_rank(kernel, 3, "conv1d", "kernel");
  if (dilation < 1) throw ParameterError("conv1d: dilation must be >= 1");
  const std::size_t B = input.dim(0), C = input.dim(1), T = input.dim(2);
  const std::size_t O = kernel.dim(0), K = kernel.dim(2);
  if (kernel.dim(1) != C) {
    throw DimensionError("conv1d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                         std::to_string(C));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) {
    throw DimensionError("conv1d: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(O) +
                         " output channels");
  }
  const long span = static_cast<long>(dilation * (K - 1));
  const long pad_left = padding == Padding::SameCausal ? span : span / 2;

  // Pack each tap into a contiguous O x C matrix.
  std::vector<RowMat> taps(K, RowMat(O, C));
  {
    const auto w = kernel.data();
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < K; ++k) taps[k](o, c) = w[(o * C + c) * K + k];
  }
  struct Window {
    long shift;
    long lo;
    long n;
  };
  std::vector<Window> windows(K);
  for (std::size_t k = 0; k < K; ++k) {
    const long s = static_cast<long>(k * dilation) - pad_left;
    const long lo = std::max(0L, -s);
    const long hi = std::min(static_cast<long>(T), static_cast<long>(T) - s);
    windows[k] = {s, lo, std::max(0L, hi - lo)};
  }

  std::vector<double> out(B * O * T, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    CMapMat X(input.data().data() + b * C * T, C, T);
    MapMat Y(out.data() + b * O * T, O, T);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& w = windows[k];
      if (w.n <= 0) continue;
      Y.middleCols(w.lo, w.n).noalias() += taps[k] * X.middleCols(w.lo + w.shift, w.n);
    }
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t o = 0; o < O; ++o) Y.row(o).array() += bv[o];
    }
  }

  const bool tracked = should_track({&input, &kernel, &bias});
  Tensor result = make_result({B, O, T}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* I = input.impl();
    TensorImpl* W = kernel.impl();
    TensorImpl* Bi = bias.defined() ? bias.impl() : nullptr;
    TensorImpl* R = result.impl();
    std::vector<std::shared_ptr<TensorImpl>> ins{input.impl_ptr(), kernel.impl_ptr()};
    if (Bi) ins.push_back(bias.impl_ptr());
    record(std::move(ins), result, [I, W, Bi, R, taps = std::move(taps), windows, B, C, T, O, K]() {
      std::vector<RowMat> dtaps;
      if (wants_grad(W)) dtaps.assign(K, RowMat::Zero(O, C));
      double* gi = wants_grad(I) ? grad_buffer(*I).data() : nullptr;
      for (std::size_t b = 0; b < B; ++b) {
        CMapMat dY(R->grad.data() + b * O * T, O, T);
        CMapMat X(I->data.data() + b * C * T, C, T);
        for (std::size_t k = 0; k < K; ++k) {
          const auto& w = windows[k];
          if (w.n <= 0) continue;
          if (gi) {
            MapMat dX(gi + b * C * T, C, T);
            dX.middleCols(w.lo + w.shift, w.n).noalias() += taps[k].transpose() * dY.middleCols(w.lo, w.n);
          }
          if (!dtaps.empty()) {
            dtaps[k].noalias() += dY.middleCols(w.lo, w.n) * X.middleCols(w.lo + w.shift, w.n).transpose();
          }
        }
        if (wants_grad(Bi)) {
          auto& gb = grad_buffer(*Bi);
          for (std::size_t o = 0; o < O; ++o) gb[o] += dY.row(o).sum();
        }
      }
      if (!dtaps.empty()) {
        auto& gw = grad_buffer(*W);
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < K; ++k) gw[(o * C + c) * K + k] += dtaps[k](o, c);
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear", "weight");
  if (!input.defined() || input.rank() < 1) throw DimensionError("linear: input must have rank >= 1");
  const std::size_t in = weight.dim(1), outd = weight.dim(0);
  if (input.shape().back() != in) {
    throw DimensionError("linear: input feature size " + std::to_string(input.shape().back()) +
                         " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd)) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t N = input.numel() / in;
  Shape out_shape = input.shape();
  out_shape.back() = outd;
  std::vector<double> out(N * outd);
  CMapMat X(input.data().data(), N, in);
  CMapMat Wm(weight.data().data(), outd, in);
  MapMat Y(out.data(), N, outd);
  Y.noalias() = X * Wm.transpose();
  if (bias.defined()) Y.rowwise() += CMapVec(bias.data().data(), outd).transpose();

  const bool tracked = should_track({&input, &weight, &bias});
  Tensor result = make_result(std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    TensorImpl* I = input.impl();
    TensorImpl* W = weight.impl();
    TensorImpl* Bi = bias.defined() ? bias.impl() : nullptr;
    TensorImpl* R = result.impl();
    std::vector<std::shared_ptr<TensorImpl>> ins{input.impl_ptr(), weight.impl_ptr()};
    if (Bi) ins.push_back(bias.impl_ptr());
    record(std::move(ins), result, [I, W, Bi, R, N, in, outd]() {
      CMapMat dY(R->grad.data(), N, outd);
      if (wants_grad(I)) {
        MapMat dX(grad_buffer(*I).data(), N, in);
        dX.noalias() += dY * CMapMat(W->data.data(), outd, in);
      }
      if (wants_grad(W)) {
        MapMat dW(grad_buffer(*W).data(), outd, in);
        dW.noalias() += dY.transpose() * CMapMat(I->data.data(), N, in);
      }
      if (wants_grad(Bi)) {
        MapVec db(grad_buffer(*Bi).data(), outd);
        db += dY.colwise().sum().transpose();
      }
    });
  }
  return result;
}

Tensor gru_cell(const Tensor& input, const Tensor& hidden, const GruParams& p) {
  require_rank(input, 2, "gru_cell", "input");
  require_rank(hidden, 2, "gru_cell", "hidden");
  require_rank(p.w_ih, 2, "gru_cell", "w_ih");
  require_rank(p.w_hh, 2, "gru_cell", "w_hh");
  const std::size_t B = input.dim(0), in = input.dim(1), H = hidden.dim(1);
  if (hidden.dim(0) != B) throw DimensionError("gru_cell: batch mismatch between input and hidden");
  if (p.w_ih.dim(0) != 3 * H || p.w_ih.dim(1) != in) {
    throw DimensionError("gru_cell: w_ih shape " + shape_str(p.w_ih.shape()) + " inconsistent with in=" +
                         std::to_string(in) + ", hidden=" + std::to_string(H));
  }
  if (p.w_hh.dim(0) != 3 * H || p.w_hh.dim(1) != H) {
    throw DimensionError("gru_cell: w_hh shape " + shape_str(p.w_hh.shape()) + " inconsistent with hidden=" +
                         std::to_string(H));
  }
  if (p.b_ih.numel() != 3 * H || p.b_hh.numel() != 3 * H) throw DimensionError("gru_cell: bias must have 3*hidden entries");

  CMapMat X(input.data().data(), B, in);
  CMapMat Hm(hidden.data().data(), B, H);
  RowMat gi = X * CMapMat(p.w_ih.data().data(), 3 * H, in).transpose();
  gi.rowwise() += CMapVec(p.b_ih.data().data(), 3 * H).transpose();
  RowMat gh = Hm * CMapMat(p.w_hh.data().data(), 3 * H, H).transpose();
  gh.rowwise() += CMapVec(p.b_hh.data().data(), 3 * H).transpose();

  // Saved activations: r, z, n and the hidden-side candidate pre-activation.
  auto saved = std::make_shared<RowMat>(B, 4 * H);
  std::vector<double> out(B * H);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) {
      const double r = 1.0 / (1.0 + std::exp(-(gi(b, j) + gh(b, j))));
      const double z = 1.0 / (1.0 + std::exp(-(gi(b, H + j) + gh(b, H + j))));
      const double hn = gh(b, 2 * H + j);
      const double n = std::tanh(gi(b, 2 * H + j) + r * hn);
      const double h_new = (1.0 - z) * n + z * Hm(b, j);
      if (!std::isfinite(h_new)) throw NumericOverflow("gru_cell produced a non-finite hidden state");
      out[b * H + j] = h_new;
      (*saved)(b, j) = r;
      (*saved)(b, H + j) = z;
      (*saved)(b, 2 * H + j) = n;
      (*saved)(b, 3 * H + j) = hn;
    }
  }

  const bool tracked = should_track({&input, &hidden, &p.w_ih, &p.w_hh, &p.b_ih, &p.b_hh});
  Tensor result = make_result({B, H}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* Xi = input.impl();
    TensorImpl* Hi = hidden.impl();
    TensorImpl* Wih = p.w_ih.impl();
    TensorImpl* Whh = p.w_hh.impl();
    TensorImpl* Bih = p.b_ih.impl();
    TensorImpl* Bhh = p.b_hh.impl();
    TensorImpl* R = result.impl();
    record({input.impl_ptr(), hidden.impl_ptr(), p.w_ih.impl_ptr(), p.w_hh.impl_ptr(), p.b_ih.impl_ptr(),
            p.b_hh.impl_ptr()},
           result, [=]() {
             const RowMat& s = *saved;
             RowMat dgi(B, 3 * H), dgh(B, 3 * H);
             std::vector<double> dh_direct(B * H);
             for (std::size_t b = 0; b < B; ++b) {
               for (std::size_t j = 0; j < H; ++j) {
                 const double g = R->grad[b * H + j];
                 const double r = s(b, j), z = s(b, H + j), n = s(b, 2 * H + j), hn = s(b, 3 * H + j);
                 const double h_prev = Hi->data[b * H + j];
                 const double dn = g * (1.0 - z);
                 const double dz = g * (h_prev - n);
                 dh_direct[b * H + j] = g * z;
                 const double dpre_n = dn * (1.0 - n * n);
                 const double dr = dpre_n * hn;
                 const double dpre_r = dr * r * (1.0 - r);
                 const double dpre_z = dz * z * (1.0 - z);
                 dgi(b, j) = dpre_r;
                 dgi(b, H + j) = dpre_z;
                 dgi(b, 2 * H + j) = dpre_n;
                 dgh(b, j) = dpre_r;
                 dgh(b, H + j) = dpre_z;
                 dgh(b, 2 * H + j) = dpre_n * r;
               }
             }
             if (wants_grad(Xi)) {
               MapMat dX(grad_buffer(*Xi).data(), B, in);
               dX.noalias() += dgi * CMapMat(Wih->data.data(), 3 * H, in);
             }
             if (wants_grad(Hi)) {
               MapMat dH(grad_buffer(*Hi).data(), B, H);
               dH.noalias() += dgh * CMapMat(Whh->data.data(), 3 * H, H);
               for (std::size_t i = 0; i < B * H; ++i) dH.data()[i] += dh_direct[i];
             }
             if (wants_grad(Wih)) {
               MapMat dW(grad_buffer(*Wih).data(), 3 * H, in);
               dW.noalias() += dgi.transpose() * CMapMat(Xi->data.data(), B, in);
             }
             if (wants_grad(Whh)) {
               MapMat dW(grad_buffer(*Whh).data(), 3 * H, H);
               dW.noalias() += dgh.transpose() * CMapMat(Hi->data.data(), B, H);
             }
             if (wants_grad(Bih)) MapVec(grad_buffer(*Bih).data(), 3 * H) += dgi.colwise().sum().transpose();
             if (wants_grad(Bhh)) MapVec(grad_buffer(*Bhh).data(), 3 * H) += dgh.colwise().sum().transpose();
           });
  }
  return result;
}

Tensor max_pool_time(const Tensor& input) {
  require_rank(input, 3, "max_pool_time", "input");
  const std::size_t B = input.dim(0), F = input.dim(1), T = input.dim(2);
  if (T == 0) throw DimensionError("max_pool_time: empty time axis");
  std::vector<double> out(B * F);
  std::vector<std::size_t> argmax(B * F);
  const auto x = input.data();
  for (std::size_t r = 0; r < B * F; ++r) {
    const double* row = x.data() + r * T;
    std::size_t best = 0;
    for (std::size_t t = 1; t < T; ++t)
      if (row[t] > row[best]) best = t;
    out[r] = row[best];
    argmax[r] = best;
  }
  const bool tracked = should_track({&input});
  Tensor result = make_result({B, F}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* I = input.impl();
    TensorImpl* R = result.impl();
    record({input.impl_ptr()}, result, [I, R, argmax = std::move(argmax), T]() {
      auto& g = grad_buffer(*I);
      for (std::size_t r = 0; r < argmax.size(); ++r) g[r * T + argmax[r]] += R->grad[r];
    });
  }
  return result;
}

Tensor adaptive_max_pool_assign(const Tensor& input, std::size_t segments) {
  require_rank(input, 3, "adaptive_max_pool_assign", "input");
  if (segments < 1) throw ParameterError("adaptive_max_pool_assign: segments must be >= 1");
  const std::size_t B = input.dim(0), F = input.dim(1), T = input.dim(2);
  if (segments > T) {
    throw ParameterError("adaptive_max_pool_assign: segments (" + std::to_string(segments) + ") exceed time length (" +
                         std::to_string(T) + ")");
  }
  std::vector<std::size_t> bounds(segments + 1);
  for (std::size_t s = 0; s <= segments; ++s) bounds[s] = s * T / segments;

  std::vector<double> out(B * F * T);
  std::vector<std::size_t> argmax(B * F * segments);
  const auto x = input.data();
  for (std::size_t r = 0; r < B * F; ++r) {
    const double* row = x.data() + r * T;
    for (std::size_t s = 0; s < segments; ++s) {
      std::size_t best = bounds[s];
      for (std::size_t t = bounds[s] + 1; t < bounds[s + 1]; ++t)
        if (row[t] > row[best]) best = t;
      argmax[r * segments + s] = best;
      for (std::size_t t = bounds[s]; t < bounds[s + 1]; ++t) out[r * T + t] = row[best];
    }
  }
  const bool tracked = should_track({&input});
  Tensor result = make_result({B, F, T}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* I = input.impl();
    TensorImpl* R = result.impl();
    record({input.impl_ptr()}, result, [I, R, argmax = std::move(argmax), bounds, segments, T]() {
      auto& g = grad_buffer(*I);
      const std::size_t rows = argmax.size() / segments;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t s = 0; s < segments; ++s) {
          double acc = 0.0;
          for (std::size_t t = bounds[s]; t < bounds[s + 1]; ++t) acc += R->grad[r * T + t];
          g[r * T + argmax[r * segments + s]] += acc;
        }
      }
    });
  }
  return result;
}

namespace {

template <typename Fwd, typename Back>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Back back) {
  require_same_shape(a, b, name);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
  const bool tracked = should_track({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* Bt = b.impl();
    TensorImpl* R = result.impl();
    record({a.impl_ptr(), b.impl_ptr()}, result, [A, Bt, R, back]() {
      double* ga = wants_grad(A) ? grad_buffer(*A).data() : nullptr;
      double* gb = wants_grad(Bt) ? grad_buffer(*Bt).data() : nullptr;
      for (std::size_t i = 0; i < R->grad.size(); ++i) {
        double da = 0.0, db = 0.0;
        back(A->data[i], Bt->data[i], R->grad[i], da, db);
        if (ga) ga[i] += da;
        if (gb) gb[i] += db;
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const bool tracked = should_track({&a});
  Tensor result = make_result({}, {s}, tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* R = result.impl();
    record({a.impl_ptr()}, result, [A, R]() {
      auto& g = grad_buffer(*A);
      for (double& v : g) v += R->grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Tensor swap_last_axes(const Tensor& a) {
  require_rank(a, 3, "swap_last_axes", "input");
  const std::size_t B = a.dim(0), P = a.dim(1), Q = a.dim(2);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t q = 0; q < Q; ++q) out[(b * Q + q) * P + p] = x[(b * P + p) * Q + q];
  const bool tracked = should_track({&a});
  Tensor result = make_result({B, Q, P}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* R = result.impl();
    record({a.impl_ptr()}, result, [A, R, B, P, Q]() {
      auto& g = grad_buffer(*A);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t q = 0; q < Q; ++q) g[(b * P + p) * Q + q] += R->grad[(b * Q + q) * P + p];
    });
  }
  return result;
}

Tensor slice_time(const Tensor& a, std::size_t start, std::size_t len) {
  require_rank(a, 3, "slice_time", "input");
  const std::size_t B = a.dim(0), C = a.dim(1), T = a.dim(2);
  if (start + len > T) {
    throw IndexError("slice_time: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") exceeds time length " + std::to_string(T));
  }
  std::vector<double> out(B * C * len);
  const auto x = a.data();
  for (std::size_t r = 0; r < B * C; ++r)
    std::copy_n(x.data() + r * T + start, len, out.data() + r * len);
  const bool tracked = should_track({&a});
  Tensor result = make_result({B, C, len}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* R = result.impl();
    record({a.impl_ptr()}, result, [A, R, B, C, T, start, len]() {
      auto& g = grad_buffer(*A);
      for (std::size_t r = 0; r < B * C; ++r)
        for (std::size_t t = 0; t < len; ++t) g[r * T + start + t] += R->grad[r * len + t];
    });
  }
  return result;
}

Tensor select_time(const Tensor& a, std::size_t t) {
  require_rank(a, 3, "select_time", "input");
  const std::size_t B = a.dim(0), C = a.dim(1), T = a.dim(2);
  if (t >= T) throw IndexError("select_time: index " + std::to_string(t) + " out of range " + std::to_string(T));
  std::vector<double> out(B * C);
  const auto x = a.data();
  for (std::size_t r = 0; r < B * C; ++r) out[r] = x[r * T + t];
  const bool tracked = should_track({&a});
  Tensor result = make_result({B, C}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* R = result.impl();
    record({a.impl_ptr()}, result, [A, R, B, C, T, t]() {
      auto& g = grad_buffer(*A);
      for (std::size_t r = 0; r < B * C; ++r) g[r * T + t] += R->grad[r];
    });
  }
  return result;
}

Tensor repeat_time(const Tensor& a, std::size_t steps) {
  require_rank(a, 2, "repeat_time", "input");
  const std::size_t B = a.dim(0), D = a.dim(1);
  std::vector<double> out(B * D * steps);
  const auto x = a.data();
  for (std::size_t r = 0; r < B * D; ++r) std::fill_n(out.data() + r * steps, steps, x[r]);
  const bool tracked = should_track({&a});
  Tensor result = make_result({B, D, steps}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* R = result.impl();
    record({a.impl_ptr()}, result, [A, R, B, D, steps]() {
      auto& g = grad_buffer(*A);
      for (std::size_t r = 0; r < B * D; ++r) {
        double acc = 0.0;
        for (std::size_t t = 0; t < steps; ++t) acc += R->grad[r * steps + t];
        g[r] += acc;
      }
    });
  }
  return result;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels", "a");
  require_rank(b, 3, "concat_channels", "b");
  const std::size_t B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1), T = a.dim(2);
  if (b.dim(0) != B || b.dim(2) != T) {
    throw DimensionError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t C = C1 + C2;
  std::vector<double> out(B * C * T);
  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(a.data().data() + n * C1 * T, C1 * T, out.data() + n * C * T);
    std::copy_n(b.data().data() + n * C2 * T, C2 * T, out.data() + n * C * T + C1 * T);
  }
  const bool tracked = should_track({&a, &b});
  Tensor result = make_result({B, C, T}, std::move(out), tracked);
  if (tracked) {
    TensorImpl* A = a.impl();
    TensorImpl* Bt = b.impl();
    TensorImpl* R = result.impl();
    record({a.impl_ptr(), b.impl_ptr()}, result, [A, Bt, R, B, C1, C2, C, T]() {
      if (wants_grad(A)) {
        auto& g = grad_buffer(*A);
        for (std::size_t n = 0; n < B; ++n)
          for (std::size_t i = 0; i < C1 * T; ++i) g[n * C1 * T + i] += R->grad[n * C * T + i];
      }
      if (wants_grad(Bt)) {
        auto& g = grad_buffer(*Bt);
        for (std::size_t n = 0; n < B; ++n)
          for (std::size_t i = 0; i < C2 * T; ++i) g[n * C2 * T + i] += R->grad[n * C * T + C1 * T + i];
      }
    });
  }
  return result;
}

Tensor stack_steps(const std::vector<Tensor>& steps) {
  if (steps.empty()) throw DimensionError("stack_steps: no steps");
  const std::size_t B = steps[0].dim(0), M = steps[0].dim(1), L = steps.size();
  for (const auto& s : steps) {
    if (s.rank() != 2 || s.dim(0) != B || s.dim(1) != M) throw DimensionError("stack_steps: inconsistent step shapes");
  }
  std::vector<double> out(B * L * M);
  bool any = false;
  for (std::size_t k = 0; k < L; ++k) {
    const auto x = steps[k].data();
    for (std::size_t b = 0; b < B; ++b) std::copy_n(x.data() + b * M, M, out.data() + (b * L + k) * M);
    any = any || steps[k].requires_grad();
  }
  const bool tracked = active_tape() && any;
  Tensor result = make_result({B, L, M}, std::move(out), tracked);
  if (tracked) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    std::vector<TensorImpl*> raw;
    for (const auto& s : steps) {
      ins.push_back(s.impl_ptr());
      raw.push_back(s.impl());
    }
    TensorImpl* R = result.impl();
    record(std::move(ins), result, [raw = std::move(raw), R, B, L, M]() {
      for (std::size_t k = 0; k < L; ++k) {
        if (!wants_grad(raw[k])) continue;
        auto& g = grad_buffer(*raw[k]);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t m = 0; m < M; ++m) g[b * M + m] += R->grad[(b * L + k) * M + m];
      }
    });
  }
  return result;
}

Tensor sequence_mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "sequence_mse");
  if (pred.rank() < 1 || pred.numel() == 0) throw DimensionError("sequence_mse: empty input");
  const std::size_t M = pred.shape().back();
  const double positions = static_cast<double>(pred.numel() / M);
  double s = 0.0;
  const auto p = pred.data();
  const auto y = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    s += d * d;
  }
  const bool tracked = should_track({&pred, &target});
  Tensor result = make_result({}, {s / positions}, tracked);
  if (tracked) {
    TensorImpl* P = pred.impl();
    TensorImpl* Y = target.impl();
    TensorImpl* R = result.impl();
    record({pred.impl_ptr(), target.impl_ptr()}, result, [P, Y, R, positions]() {
      const double g = R->grad[0] * 2.0 / positions;
      double* gp = wants_grad(P) ? grad_buffer(*P).data() : nullptr;
      double* gy = wants_grad(Y) ? grad_buffer(*Y).data() : nullptr;
      for (std::size_t i = 0; i < P->data.size(); ++i) {
        const double d = P->data[i] - Y->data[i];
        if (gp) gp[i] += g * d;
        if (gy) gy[i] -= g * d;
      }
    });
  }
  return result;
}

}  // namespace pulse::ad
