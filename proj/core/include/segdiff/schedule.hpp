#pragma once

#include <string>

namespace segdiff {

/// Lower bound of training time draws; keeps log-SNR finite.
inline constexpr double kMinTrainTime = 1e-5;

/// cos(t*pi/2)^2, with exact endpoints.
double gamma_cosine(double t);
/// 1 - gamma_cosine(t), evaluated as sin^2 to avoid cancellation near t = 0.
double one_minus_gamma_cosine(double t);
/// Input-scaled schedule: b^2 g / ((b^2 - 1) g + 1). Its SNR is b times the base SNR.
double gamma_scaled(double t, double b);

struct Coefficients {
  double alpha = 1.0;
  double sigma = 0.0;
};

/// Variance-preserving cosine schedule with input scale b in (0, 1].
class NoiseSchedule {
 public:
  explicit NoiseSchedule(double input_scale = 1.0);

  double input_scale() const { return b_; }
  double gamma(double t) const;
  double one_minus_gamma(double t) const;
  Coefficients coefficients(double t) const;
  /// alpha / sigma; +infinity at t = 0.
  double snr(double t) const;
  /// ln(gamma / (1 - gamma)); +infinity at t = 0, -infinity at t = 1.
  double log_snr2(double t) const;

 private:
  double b_;
};

enum class WeightingKind { SigmoidBias, Constant, SnrEps };

std::string to_string(WeightingKind kind);
WeightingKind parse_weighting_kind(const std::string& name);

struct LossWeighting {
  WeightingKind kind = WeightingKind::SigmoidBias;
  double bias = -4.0;
  bool operator==(const LossWeighting&) const = default;
};

/// Weight applied to the x-space squared error at time t.
/// SigmoidBias: logistic(bias - lambda); Constant: 1; SnrEps: exp(lambda),
/// where lambda = ln(gamma_b / (1 - gamma_b)).
double loss_weight(double t, const NoiseSchedule& sched, const LossWeighting& weighting);

}  // namespace segdiff
