#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "segdiff/schedule.hpp"

namespace segdiff {
namespace {

TEST(GammaCosine, Endpoints) {
  EXPECT_EQ(gamma_cosine(0.0), 1.0);
  EXPECT_NEAR(gamma_cosine(0.5), 0.5, 1e-15);
  EXPECT_EQ(gamma_cosine(1.0), 0.0);
  EXPECT_THROW(gamma_cosine(1.01), std::domain_error);
  EXPECT_THROW(gamma_cosine(-0.01), std::domain_error);
}

TEST(GammaScaled, UnitScaleIsIdentity) {
  for (int i = 0; i <= 100; ++i) {
    const double t = i / 100.0;
    EXPECT_NEAR(gamma_scaled(t, 1.0), gamma_cosine(t), 1e-15);
  }
}

TEST(GammaScaled, EndpointsPreserved) {
  for (double b : {0.02, 0.1, 0.5, 1.0}) {
    EXPECT_EQ(gamma_scaled(0.0, b), 1.0);
    EXPECT_EQ(gamma_scaled(1.0, b), 0.0);
  }
  EXPECT_THROW(gamma_scaled(0.5, 0.0), std::domain_error);
  EXPECT_THROW(NoiseSchedule(1.5), std::domain_error);
}

TEST(GammaScaled, ScalesSnrByB) {
  // SNR computed from the raw gamma values, independent of the schedule class.
  auto snr_of = [](double g) { return std::sqrt(g) / std::sqrt(1.0 - g); };
  EXPECT_NEAR(snr_of(gamma_scaled(0.3, 0.1)) / snr_of(gamma_cosine(0.3)), 0.1, 1e-9);
  for (double b : {0.02, 0.1, 0.37, 1.0}) {
    const NoiseSchedule sb(b), s1(1.0);
    for (int i = 1; i < 100; ++i) {
      const double t = i / 100.0;
      EXPECT_NEAR(sb.snr(t) / (b * s1.snr(t)), 1.0, 1e-9) << b << " " << t;
    }
  }
}

TEST(NoiseSchedule, CoefficientExamples) {
  const NoiseSchedule s(1.0);
  EXPECT_EQ(s.coefficients(0.0).alpha, 1.0);
  EXPECT_EQ(s.coefficients(0.0).sigma, 0.0);
  EXPECT_EQ(s.coefficients(1.0).alpha, 0.0);
  EXPECT_EQ(s.coefficients(1.0).sigma, 1.0);
  EXPECT_NEAR(s.coefficients(0.5).alpha, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(s.coefficients(0.5).sigma, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(s.snr(0.5), 1.0, 1e-14);
  EXPECT_TRUE(std::isinf(s.snr(0.0)));
}

TEST(NoiseSchedule, VariancePreserving) {
  for (double b : {0.02, 0.1, 0.5, 1.0}) {
    const NoiseSchedule s(b);
    for (int i = 0; i <= 1000; ++i) {
      const auto c = s.coefficients(i / 1000.0);
      EXPECT_NEAR(c.alpha * c.alpha + c.sigma * c.sigma, 1.0, 1e-12);
    }
  }
}

TEST(NoiseSchedule, MonotoneDecreasing) {
  for (double b : {0.05, 0.1, 1.0}) {
    const NoiseSchedule s(b);
    double prev_g = 2.0, prev_snr = INFINITY;
    for (int i = 1; i <= 100; ++i) {
      const double t = i / 100.0;
      EXPECT_LT(s.gamma(t), prev_g);
      if (i < 100) EXPECT_LT(s.snr(t), prev_snr);
      prev_g = s.gamma(t);
      prev_snr = s.snr(t);
    }
  }
}

TEST(LossWeight, Forms) {
  const NoiseSchedule s(0.1);
  const LossWeighting sig{WeightingKind::SigmoidBias, -4.0};
  const LossWeighting con{WeightingKind::Constant, -4.0};
  const LossWeighting eps{WeightingKind::SnrEps, -4.0};
  for (int i = 1; i < 100; ++i) {
    const double t = i / 100.0;
    const double g = s.gamma(t);
    const double lambda = std::log(g / (1.0 - g));
    EXPECT_EQ(loss_weight(t, s, con), 1.0);
    EXPECT_NEAR(loss_weight(t, s, sig), 1.0 / (1.0 + std::exp(lambda + 4.0)), 1e-12);
    EXPECT_NEAR(loss_weight(t, s, eps) / (g / (1.0 - g)), 1.0, 1e-9);
  }
}

TEST(LossWeight, SigmoidMidpointAtBias) {
  // Bisect for lambda(t*) = bias, then check w(t*) = 1/2.
  const NoiseSchedule s(1.0);
  const LossWeighting w{WeightingKind::SigmoidBias, -4.0};
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (s.log_snr2(mid) > -4.0 ? lo : hi) = mid;
  }
  EXPECT_NEAR(loss_weight(lo, s, w), 0.5, 1e-9);
}

TEST(LossWeight, SigmoidIncreasingAndBounded) {
  for (double b : {0.1, 1.0}) {
    const NoiseSchedule s(b);
    const LossWeighting w{WeightingKind::SigmoidBias, -4.0};
    double prev = -1.0;
    for (int i = 1; i < 1000; ++i) {
      const double v = loss_weight(i / 1000.0, s, w);
      EXPECT_GT(v, prev);
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      prev = v;
    }
  }
}

TEST(Weighting, Names) {
  for (auto k : {WeightingKind::SigmoidBias, WeightingKind::Constant, WeightingKind::SnrEps}) {
    EXPECT_EQ(parse_weighting_kind(to_string(k)), k);
  }
}

}  // namespace
}  // namespace segdiff
