#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "segdiff/bitcodec.hpp"
#include "segdiff/denoiser.hpp"
#include "segdiff/rng.hpp"
#include "segdiff/schedule.hpp"
#include "segdiff/tensor.hpp"

namespace segdiff {

/// alpha(t) x0 + sigma(t) eps.
Tensor<float> forward_sample(const Tensor<float>& x0, const Tensor<float>& eps, double t,
                             const NoiseSchedule& sched);
/// (x_t - sigma eps_hat) / alpha. Throws NumericError when alpha vanishes.
Tensor<float> x_from_eps(const Tensor<float>& x_t, const Tensor<float>& eps_hat, double t,
                         const NoiseSchedule& sched);
/// alpha x_t - sigma v_hat.
Tensor<float> x_from_v(const Tensor<float>& x_t, const Tensor<float>& v_hat, double t,
                       const NoiseSchedule& sched);
/// alpha eps - sigma x0.
Tensor<float> v_target(const Tensor<float>& x0, const Tensor<float>& eps, double t,
                       const NoiseSchedule& sched);

/// Smallest alpha for which an eps prediction is converted to x-space.
inline constexpr double kMinAlphaForEps = 1e-10;

/// Converts a raw network output to an x-space estimate, per sample time.
/// Eps outputs at a sample whose alpha is below kMinAlphaForEps become zero
/// (the blind estimate of symmetric targets).
template <typename T>
Tensor<T> prediction_to_x(PredictionType type, const Tensor<T>& x_t, const Tensor<T>& output,
                          std::span<const float> t, const NoiseSchedule& sched);

/// cond + gw (cond - uncond).
Tensor<float> cfg_combine(const Tensor<float>& pred_cond, const Tensor<float>& pred_uncond,
                          double gw);

/// Gaussian posterior q(x_t' | x_s, x0 = x_hat) of the variance-preserving process.
struct PosteriorCoefficients {
  double state = 0.0;     ///< multiplies x_s
  double estimate = 0.0;  ///< multiplies x_hat
  double variance = 0.0;
};

PosteriorCoefficients posterior_coefficients(double s, double t_next, const NoiseSchedule& sched);

/// One ancestral step from time s down to t_next < s with caller-supplied unit
/// noise (ignored when stochastic is false).
Tensor<float> ancestral_step(const Tensor<float>& x_s, const Tensor<float>& x_hat, double s,
                             double t_next, const NoiseSchedule& sched, bool stochastic,
                             const Tensor<float>& noise);
/// Same, drawing the noise from rng.
Tensor<float> ancestral_step(const Tensor<float>& x_s, const Tensor<float>& x_hat, double s,
                             double t_next, const NoiseSchedule& sched, bool stochastic, Rng& rng);

/// Batch-mean of w(t_i) * mean_pixels((x0 - x_hat)^2), where x_hat is the
/// network output converted to x-space (tanh, if any, is part of the network).
template <typename T>
struct LossTerms {
  double loss = 0.0;
  Tensor<T> grad_output;  ///< dloss / d(network output); empty unless requested
};

template <typename T>
LossTerms<T> weighted_x_loss(PredictionType type, const Tensor<T>& x_t, const Tensor<T>& output,
                             const Tensor<T>& x0, std::span<const float> t,
                             const NoiseSchedule& sched, const LossWeighting& weighting,
                             bool with_gradient);

/// Forward-only loss of a denoiser on a batch: noises x0 with eps at times t and
/// scores the prediction. images: [N, 3, H, W]; x0, eps: [N, C, H, W].
double training_loss(const Denoiser& net, const Tensor<float>& images, const Tensor<float>& x0,
                     std::span<const float> t, const Tensor<float>& eps, const NoiseSchedule& sched,
                     const LossWeighting& weighting);

/// Per-sample forward process with distinct times.
Tensor<float> forward_sample_batch(const Tensor<float>& x0, const Tensor<float>& eps,
                                   std::span<const float> t, const NoiseSchedule& sched);

struct SamplerConfig {
  int steps = 8;
  double guidance_weight = 1.0;
  bool stochastic = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampleResult {
  std::vector<LabelMap> labels;
  Tensor<float> state;  ///< final clamped x-space estimate, [N, C, H, W]
};

/// Draws one segmentation per image (images: [N, 3, H, W]). Sample i uses the
/// rng stream keyed by (cfg.seed, first_index + i), so batching never changes
/// which noise a sample sees.
SampleResult sample(const Denoiser& net, const Tensor<float>& images, const SamplerConfig& cfg,
                    const NoiseSchedule& sched, const Encoding& enc, std::uint64_t first_index = 0);

/// Fills a tensor with unit Gaussian draws.
void fill_normal(Tensor<float>& out, Rng& rng);

}  // namespace segdiff
