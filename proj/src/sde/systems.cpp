#include <cmath>
#include <sstream>

#include "pulse/errors.hpp"
#include "pulse/rng.hpp"
#include "pulse/sde.hpp"

namespace pulse::sde {

namespace {

const std::vector<std::string>& required_params(Family f) {
  static const std::vector<std::string> lorenz{"s", "rho", "beta"};
  static const std::vector<std::string> thomas{"b"};
  static const std::vector<std::string> hr{"a", "b", "c", "d", "r", "s", "x_R", "I"};
  switch (f) {
    case Family::Lorenz:
      return lorenz;
    case Family::Thomas:
      return thomas;
    case Family::HindmarshRose:
      return hr;
  }
  throw ParameterError("unknown system family");
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::Lorenz:
      return "lorenz";
    case Family::Thomas:
      return "thomas";
    case Family::HindmarshRose:
      return "hindmarsh_rose";
  }
  throw ParameterError("unknown system family");
}

Family parse_family(const std::string& name) {
  if (name == "lorenz") return Family::Lorenz;
  if (name == "thomas") return Family::Thomas;
  if (name == "hindmarsh_rose" || name == "hindmarsh-rose" || name == "hr") return Family::HindmarshRose;
  throw ParameterError("unknown system family '" + name + "' (expected lorenz, thomas, hindmarsh_rose)");
}

std::string swept_parameter(Family f) {
  switch (f) {
    case Family::Lorenz:
      return "rho";
    case Family::Thomas:
      return "b";
    case Family::HindmarshRose:
      return "I";
  }
  throw ParameterError("unknown system family");
}

const std::vector<double>& parameter_grid(Family f) {
  static const std::vector<double> lorenz{28, 41, 55, 69, 83, 96, 110, 124, 138, 152};
  static const std::vector<double> thomas{0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2, 0.225, 0.25};
  static const std::vector<double> hr{1.0, 1.33, 1.66, 2.0, 2.33, 2.66, 3.0, 3.33, 3.66, 4.0};
  switch (f) {
    case Family::Lorenz:
      return lorenz;
    case Family::Thomas:
      return thomas;
    case Family::HindmarshRose:
      return hr;
  }
  throw ParameterError("unknown system family");
}

void SystemSpec::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ParameterError("dt must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("noise level must be nonnegative");
  if (dims != 3) throw ParameterError("all supported systems are three-dimensional");
  for (const auto& name : required_params(family)) {
    auto it = params.find(name);
    if (it == params.end()) throw ParameterError("missing parameter '" + name + "' for " + family_name(family));
    if (!std::isfinite(it->second)) throw ParameterError("parameter '" + name + "' is not finite");
  }
}

double SystemSpec::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ParameterError("missing parameter '" + name + "'");
  return it->second;
}

SystemSpec make_spec(Family family, double swept_value, double sigma, double dt) {
  SystemSpec spec;
  spec.family = family;
  spec.sigma = sigma;
  spec.dt = dt;
  switch (family) {
    case Family::Lorenz:
      spec.params = {{"s", 28.0}, {"rho", swept_value}, {"beta", 8.0 / 3.0}};
      break;
    case Family::Thomas:
      spec.params = {{"b", swept_value}};
      break;
    case Family::HindmarshRose:
      spec.params = {{"a", 1.0}, {"b", 3.0}, {"c", 1.0},    {"d", 5.0},
                     {"r", 0.006}, {"s", 4.0}, {"x_R", -1.6}, {"I", swept_value}};
      break;
  }
  spec.validate();
  return spec;
}

State drift(const SystemSpec& spec, const State& y) {
  switch (spec.family) {
    case Family::Lorenz: {
      const double s = spec.param("s"), rho = spec.param("rho"), beta = spec.param("beta");
      return {s * (y[1] - y[0]), y[0] * (rho - y[2]) - y[1], y[0] * y[1] - beta * y[2]};
    }
    case Family::Thomas: {
      const double b = spec.param("b");
      return {std::sin(y[1]) - b * y[0], std::sin(y[2]) - b * y[1], std::sin(y[0]) - b * y[2]};
    }
    case Family::HindmarshRose: {
      const double a = spec.param("a"), b = spec.param("b"), c = spec.param("c"), d = spec.param("d");
      const double r = spec.param("r"), s = spec.param("s"), xr = spec.param("x_R"), I = spec.param("I");
      const double x = y[0];
      return {y[1] - a * x * x * x + b * x * x - y[2] + I, c - d * x * x - y[1], r * (s * (x - xr) - y[2])};
    }
  }
  throw ParameterError("unknown system family");
}

ad::Tensor drift(const SystemSpec& spec, const ad::Tensor& y) {
  if (y.rank() != 1 || y.numel() != 3) throw DimensionError("drift expects a state of shape [3], got " + ad::shape_str(y.shape()));
  auto v = y.data();
  const State out = drift(spec, State{v[0], v[1], v[2]});
  return ad::Tensor::from({3}, {out[0], out[1], out[2]});
}

}  // namespace pulse::sde
