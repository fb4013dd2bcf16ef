#include <cmath>
#include <vector>

#include "pulse/errors.hpp"
#include "pulse/rng.hpp"
#include "pulse/sde.hpp"

namespace pulse::sde {

void heun_step(const DriftFn& f, std::span<double> y, double dt, double diffusion, std::span<const double> dB) {
  const std::size_t m = y.size();
  if (dB.size() != m) throw DimensionError("heun_step: increment size does not match state size");
  std::vector<double> f0(m), pred(m), f1(m);
  f(y, f0);
  for (std::size_t k = 0; k < m; ++k) pred[k] = y[k] + f0[k] * dt + diffusion * dB[k];
  f(pred, f1);
  for (std::size_t k = 0; k < m; ++k) y[k] += 0.5 * (f0[k] + f1[k]) * dt + diffusion * dB[k];
}

namespace {

bool out_of_bounds(const State& y) {
  for (double v : y)
    if (!std::isfinite(v) || std::abs(v) > kDivergenceBound) return true;
  return false;
}

// Integrates with a fixed noise stream; states after each step are written to
// out (row-major [steps - burn_in, 3]).
void run(const SystemSpec& spec, State y, std::size_t steps, std::size_t burn_in, double diffusion, Rng& rng,
         std::vector<double>& out) {
  const double dt = spec.dt;
  const double sqrt_dt = std::sqrt(dt);
  out.assign((steps - burn_in) * 3, 0.0);
  for (std::size_t step = 0; step < steps; ++step) {
    State dB{0.0, 0.0, 0.0};
    if (diffusion != 0.0)
      for (auto& b : dB) b = rng.normal() * sqrt_dt;
    const State f0 = drift(spec, y);
    State pred;
    for (int k = 0; k < 3; ++k) pred[k] = y[k] + f0[k] * dt + diffusion * dB[k];
    const State f1 = drift(spec, pred);
    for (int k = 0; k < 3; ++k) y[k] += 0.5 * (f0[k] + f1[k]) * dt + diffusion * dB[k];
    if (out_of_bounds(y)) throw IntegrationDiverged(step + 1);
    if (step >= burn_in) {
      double* row = out.data() + (step - burn_in) * 3;
      row[0] = y[0];
      row[1] = y[1];
      row[2] = y[2];
    }
  }
}

State to_state(std::span<const double> y0) {
  if (y0.size() != 3) throw DimensionError("initial condition must have 3 components");
  State y{y0[0], y0[1], y0[2]};
  for (double v : y)
    if (!std::isfinite(v)) throw ParameterError("initial condition is not finite");
  return y;
}

}  // namespace

Trajectory integrate(const SystemSpec& spec, std::span<const double> y0, std::size_t steps, std::uint64_t rng_seed,
                     std::optional<double> sigma_tilde_override) {
  spec.validate();
  if (steps <= kBurnIn) throw ParameterError("steps must exceed the burn-in of " + std::to_string(kBurnIn));
  const State y = to_state(y0);
  const double diffusion = sigma_tilde_override ? *sigma_tilde_override : sigma_tilde(spec);
  Rng rng = Rng(rng_seed).split("noise");
  std::vector<double> out;
  run(spec, y, steps, kBurnIn, diffusion, rng, out);
  Trajectory traj;
  traj.values = ad::Tensor::from({steps - kBurnIn, 3}, std::move(out));
  traj.spec = spec;
  traj.seed = rng_seed;
  traj.burn_in_dropped = kBurnIn;
  traj.sigma_tilde = diffusion;
  return traj;
}

Trajectory integrate_from_random_start(const SystemSpec& spec, std::size_t steps, std::uint64_t rng_seed,
                                       std::optional<double> sigma_tilde_override) {
  spec.validate();
  const double diffusion = sigma_tilde_override ? *sigma_tilde_override : sigma_tilde(spec);
  Rng init = Rng(rng_seed).split("initial");
  for (std::size_t attempt = 0;; ++attempt) {
    const double y0[3] = {init.normal(), init.normal(), init.normal()};
    try {
      // Each attempt gets its own noise stream so a redraw is a fresh sample path.
      Trajectory t = integrate(spec, y0, steps, Rng(rng_seed).split(attempt).key(), diffusion);
      t.seed = rng_seed;
      t.redraws = attempt;
      return t;
    } catch (const IntegrationDiverged&) {
      if (attempt + 1 >= 1 + kMaxRedraws) throw;
    }
  }
}

double rms(std::span<const double> values) {
  if (values.empty()) throw DimensionError("rms of an empty sequence");
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc / static_cast<double>(values.size()));
}

double estimate_rms(const SystemSpec& spec, std::uint64_t rng_seed, std::size_t steps, std::size_t trajectories) {
  SystemSpec quiet = spec;
  quiet.sigma = 0.0;
  if (trajectories == 0) throw ParameterError("estimate_rms needs at least one trajectory");
  const Rng root(rng_seed);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < trajectories; ++i) {
    Trajectory t = integrate_from_random_start(quiet, steps, root.split(i).key(), 0.0);
    for (double v : t.values.data()) acc += v * v;
    count += t.values.numel();
  }
  return std::sqrt(acc / static_cast<double>(count));
}

double sigma_tilde(const SystemSpec& spec) {
  if (spec.sigma == 0.0) return 0.0;
  return spec.sigma * estimate_rms(spec, kRmsSeed);
}

}  // namespace pulse::sde
