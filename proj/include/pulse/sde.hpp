#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pulse/tensor.hpp"

namespace pulse::sde {

enum class Family { Lorenz, Thomas, HindmarshRose };

std::string family_name(Family f);
Family parse_family(const std::string& name);

// Name of the parameter each family sweeps ("rho", "b", "I").
std::string swept_parameter(Family f);

// The bifurcation grid swept for each family.
const std::vector<double>& parameter_grid(Family f);

inline constexpr std::size_t kBurnIn = 200;
inline constexpr double kDefaultDt = 1e-3;
inline constexpr double kDivergenceBound = 1e6;
inline constexpr std::size_t kMaxRedraws = 5;
inline constexpr std::size_t kRmsTrajectories = 3;
inline constexpr std::size_t kRmsSteps = 20000;
// Seed of the reference runs behind sigma_tilde, so the diffusion scale is a
// property of the system and not of any one trajectory seed.
inline constexpr std::uint64_t kRmsSeed = 0x52A5EEDULL;

/// A parameterized SDE dY = f(Y) dt + sigma_tilde dB with sigma_tilde = sigma * RMS(Y).
struct SystemSpec {
  Family family = Family::Lorenz;
  std::map<std::string, double> params;
  double sigma = 0.0;  // dimensionless noise level
  double dt = kDefaultDt;
  std::size_t dims = 3;

  void validate() const;
  double param(const std::string& name) const;
};

// Full parameter set for a family with the swept parameter set to `value`.
SystemSpec make_spec(Family family, double swept_value, double sigma = 0.0, double dt = kDefaultDt);

using State = std::array<double, 3>;

State drift(const SystemSpec& spec, const State& y);
ad::Tensor drift(const SystemSpec& spec, const ad::Tensor& y);

// Generic drift for the stepping kernel: writes f(y) into out.
using DriftFn = std::function<void(std::span<const double> y, std::span<double> out)>;

/// Stratonovich-Heun step with additive noise. `dB` holds the Brownian increments
/// (already scaled by sqrt(dt)); the same increments enter predictor and corrector.
void heun_step(const DriftFn& f, std::span<double> y, double dt, double diffusion, std::span<const double> dB);

struct Trajectory {
  ad::Tensor values;  // [T, M]
  SystemSpec spec;
  std::uint64_t seed = 0;
  std::size_t burn_in_dropped = 0;
  double sigma_tilde = 0.0;
  std::size_t redraws = 0;

  std::size_t length() const { return values.dim(0); }
};

/// Integrate `steps` Heun steps from y0 and drop the first kBurnIn states.
/// If `sigma_tilde` is not given it is derived from estimate_rms(spec).
/// Throws IntegrationDiverged when a state leaves the finite/bounded region.
Trajectory integrate(const SystemSpec& spec, std::span<const double> y0, std::size_t steps, std::uint64_t rng_seed,
                     std::optional<double> sigma_tilde = std::nullopt);

/// As integrate(), but draws y0 ~ N(0, I) from the seed's stream and redraws up
/// to kMaxRedraws times when the integration diverges.
Trajectory integrate_from_random_start(const SystemSpec& spec, std::size_t steps, std::uint64_t rng_seed,
                                       std::optional<double> sigma_tilde = std::nullopt);

// Root-mean-square over every value.
double rms(std::span<const double> values);

/// Empirical RMS amplitude of the noiseless system: kRmsTrajectories
/// trajectories of kRmsSteps steps (post burn-in), pooled.
double estimate_rms(const SystemSpec& spec, std::uint64_t rng_seed, std::size_t steps = kRmsSteps,
                    std::size_t trajectories = kRmsTrajectories);

// sigma * estimate_rms(spec, kRmsSeed); zero when sigma is zero.
double sigma_tilde(const SystemSpec& spec);

}  // namespace pulse::sde
