#include "segdiff/schedule.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "segdiff/errors.hpp"

namespace segdiff {

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("diffusion time outside [0, 1]");
}

void check_scale(double b) {
  if (!(b > 0.0 && b <= 1.0)) throw std::domain_error("input scale must be in (0, 1]");
}

double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

double gamma_cosine(double t) {
  check_time(t);
  if (t == 1.0) return 0.0;
  const double c = std::cos(t * std::numbers::pi / 2.0);
  return c * c;
}

double one_minus_gamma_cosine(double t) {
  check_time(t);
  if (t == 1.0) return 1.0;
  const double s = std::sin(t * std::numbers::pi / 2.0);
  return s * s;
}

double gamma_scaled(double t, double b) {
  check_scale(b);
  // Denominator written as b^2 g + (1 - g) so both endpoints come out exact.
  const double bg = b * b * gamma_cosine(t);
  return bg / (bg + one_minus_gamma_cosine(t));
}

NoiseSchedule::NoiseSchedule(double input_scale) : b_(input_scale) { check_scale(b_); }

double NoiseSchedule::gamma(double t) const { return gamma_scaled(t, b_); }

double NoiseSchedule::one_minus_gamma(double t) const {
  const double bg = b_ * b_ * gamma_cosine(t);
  const double s = one_minus_gamma_cosine(t);
  return s / (bg + s);
}

Coefficients NoiseSchedule::coefficients(double t) const {
  return {std::sqrt(gamma(t)), std::sqrt(one_minus_gamma(t))};
}

double NoiseSchedule::snr(double t) const {
  const Coefficients c = coefficients(t);
  if (c.sigma == 0.0) return std::numeric_limits<double>::infinity();
  return c.alpha / c.sigma;
}

double NoiseSchedule::log_snr2(double t) const {
  const double g = gamma(t);
  const double s = one_minus_gamma(t);
  if (s == 0.0) return std::numeric_limits<double>::infinity();
  if (g == 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(g) - std::log(s);
}

std::string to_string(WeightingKind kind) {
  switch (kind) {
    case WeightingKind::SigmoidBias: return "sigmoid";
    case WeightingKind::Constant: return "constant";
    case WeightingKind::SnrEps: return "snr_eps";
  }
  return "?";
}

WeightingKind parse_weighting_kind(const std::string& name) {
  if (name == "sigmoid") return WeightingKind::SigmoidBias;
  if (name == "constant") return WeightingKind::Constant;
  if (name == "snr_eps" || name == "snr") return WeightingKind::SnrEps;
  throw ValidationError("unknown loss weighting '" + name + "' (expected sigmoid, constant, snr_eps)");
}

double loss_weight(double t, const NoiseSchedule& sched, const LossWeighting& weighting) {
  switch (weighting.kind) {
    case WeightingKind::Constant: return 1.0;
    case WeightingKind::SigmoidBias: return logistic(weighting.bias - sched.log_snr2(t));
    case WeightingKind::SnrEps: return sched.gamma(t) / sched.one_minus_gamma(t);
  }
  return 1.0;
}

}  // namespace segdiff
