#include <cmath>
#include <numbers>

#include "pulse/errors.hpp"
#include "pulse/train.hpp"

namespace pulse::train {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

bool AdamW::step(double lr) {
  for (const auto& p : params_)
    if (p.has_grad())
      for (double g : p.grad())
        if (!std::isfinite(g)) return false;
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor p = params_[k];
    auto w = p.mutable_data();
    const bool has = p.has_grad();
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] *= decay;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
  return true;
}

std::vector<NamedTensor> AdamW::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({"adam.m." + std::to_string(k), Tensor::from(params_[k].shape(), m_[k])});
    out.push_back({"adam.v." + std::to_string(k), Tensor::from(params_[k].shape(), v_[k])});
  }
  return out;
}

void AdamW::load_state(const std::vector<NamedTensor>& state, std::size_t steps) {
  std::size_t found = 0;
  for (const auto& s : state) {
    const bool is_m = s.name.rfind("adam.m.", 0) == 0, is_v = s.name.rfind("adam.v.", 0) == 0;
    if (!is_m && !is_v) continue;
    const std::size_t k = std::stoul(s.name.substr(7));
    if (k >= params_.size() || s.tensor.numel() != params_[k].numel())
      throw ProtocolError("optimizer state '" + s.name + "' does not match the model");
    (is_m ? m_ : v_)[k].assign(s.tensor.data().begin(), s.tensor.data().end());
    ++found;
  }
  if (found != 2 * params_.size()) throw ProtocolError("optimizer state is incomplete");
  t_ = steps;
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double acc = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) acc += g * g;
  return std::sqrt(acc);
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto p : params)
      if (p.has_grad())
        for (auto& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak_lr) {
  if (total_steps == 0 || step >= total_steps) throw ParameterError("step outside [0, total_steps)");
  const double start = peak_lr / 25.0, floor = peak_lr / 1e4;
  const double warm = 0.3 * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= warm) return warm > 0.0 ? start + (peak_lr - start) * (s / warm) : peak_lr;
  const double span = static_cast<double>(total_steps - 1) - warm;
  const double progress = span > 0.0 ? (s - warm) / span : 1.0;
  return floor + (peak_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace pulse::train
