#pragma once

#include <cstddef>
#include <vector>

#include "pulse/tensor.hpp"

namespace pulse::ad {

enum class Padding { SameCausal, SameCentered };

// Default for every convolution in the lab.
inline constexpr Padding kDefaultPadding = Padding::SameCentered;

/// 1-D convolution over [batch, channels, time] with "same" output length.
/// `bias` may be undefined. Receptive field is 1 + dilation * (k - 1).
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t dilation,
              Padding padding = kDefaultPadding);

/// Affine map over the last axis: input[..., in] -> [..., out]. `bias` may be undefined.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct GruParams {
  Tensor w_ih;  // [3H, in]  gate order: reset, update, candidate
  Tensor w_hh;  // [3H, H]
  Tensor b_ih;  // [3H]
  Tensor b_hh;  // [3H]
};

/// r = s(Wir x + bir + Whr h + bhr), z = s(Wiz x + biz + Whz h + bhz),
/// n = tanh(Win x + bin + r * (Whn h + bhn)), h' = (1 - z) * n + z * h.
Tensor gru_cell(const Tensor& input, const Tensor& hidden, const GruParams& params);

// [batch, feat, time] -> [batch, feat]; ties route gradient to the first maximum.
Tensor max_pool_time(const Tensor& input);

// Partition time into `segments` contiguous bins [floor(s*T/S), floor((s+1)*T/S))
// and write each bin's maximum back to every position in the bin.
Tensor adaptive_max_pool_assign(const Tensor& input, std::size_t segments);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// [batch, time, ch] <-> [batch, ch, time]
Tensor swap_last_axes(const Tensor& a);

// [batch, C, T] -> [batch, C, len] starting at `start`.
Tensor slice_time(const Tensor& a, std::size_t start, std::size_t len);

// [batch, C, T] -> [batch, C] at time index t.
Tensor select_time(const Tensor& a, std::size_t t);

// [batch, D] -> [batch, D, T] by repetition.
Tensor repeat_time(const Tensor& a, std::size_t steps);

// Concatenate [batch, C1, T] and [batch, C2, T] along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// List of [batch, M] -> [batch, L, M].
Tensor stack_steps(const std::vector<Tensor>& steps);

/// Sum of squared errors over the last axis, averaged over the leading
/// (batch, time) positions: pred/target [batch, L, M] -> scalar.
Tensor sequence_mse(const Tensor& pred, const Tensor& target);

}  // namespace pulse::ad
