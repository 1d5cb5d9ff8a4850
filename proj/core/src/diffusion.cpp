#include "segdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "segdiff/errors.hpp"

namespace segdiff {

namespace {

void require_same_shape(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": tensor shapes differ");
}

void check_times(std::span<const float> t, int n) {
  if (static_cast<int>(t.size()) != n) {
    throw std::invalid_argument("expected one diffusion time per sample");
  }
}

}  // namespace

std::string to_string(PredictionType p) {
  switch (p) {
    case PredictionType::X: return "x";
    case PredictionType::Eps: return "eps";
    case PredictionType::V: return "v";
  }
  return "?";
}

PredictionType parse_prediction_type(const std::string& name) {
  if (name == "x") return PredictionType::X;
  if (name == "eps" || name == "epsilon") return PredictionType::Eps;
  if (name == "v") return PredictionType::V;
  throw ValidationError("unknown prediction type '" + name + "' (expected x, eps, v)");
}

Tensor<float> forward_sample(const Tensor<float>& x0, const Tensor<float>& eps, double t,
                             const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_sample");
  const auto [alpha, sigma] = sched.coefficients(t);
  Tensor<float> out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(alpha * x0[i] + sigma * eps[i]);
  }
  return out;
}

Tensor<float> forward_sample_batch(const Tensor<float>& x0, const Tensor<float>& eps,
                                   std::span<const float> t, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_sample_batch");
  check_times(t, x0.n());
  Tensor<float> out = x0;
  for (int n = 0; n < x0.n(); ++n) {
    const auto [alpha, sigma] = sched.coefficients(t[n]);
    auto o = out.sample(n);
    const auto x = x0.sample(n);
    const auto e = eps.sample(n);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(alpha * x[i] + sigma * e[i]);
  }
  return out;
}

Tensor<float> x_from_eps(const Tensor<float>& x_t, const Tensor<float>& eps_hat, double t,
                         const NoiseSchedule& sched) {
  require_same_shape(x_t, eps_hat, "x_from_eps");
  const auto [alpha, sigma] = sched.coefficients(t);
  if (alpha < kMinAlphaForEps) {
    throw NumericError("x_from_eps: alpha(" + std::to_string(t) + ") = " + std::to_string(alpha) +
                       " is too small to invert");
  }
  Tensor<float> out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>((x_t[i] - sigma * eps_hat[i]) / alpha);
  }
  return out;
}

Tensor<float> x_from_v(const Tensor<float>& x_t, const Tensor<float>& v_hat, double t,
                       const NoiseSchedule& sched) {
  require_same_shape(x_t, v_hat, "x_from_v");
  const auto [alpha, sigma] = sched.coefficients(t);
  Tensor<float> out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(alpha * x_t[i] - sigma * v_hat[i]);
  }
  return out;
}

Tensor<float> v_target(const Tensor<float>& x0, const Tensor<float>& eps, double t,
                       const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "v_target");
  const auto [alpha, sigma] = sched.coefficients(t);
  Tensor<float> out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(alpha * eps[i] - sigma * x0[i]);
  }
  return out;
}

template <typename T>
Tensor<T> prediction_to_x(PredictionType type, const Tensor<T>& x_t, const Tensor<T>& output,
                          std::span<const float> t, const NoiseSchedule& sched) {
  if (!x_t.same_shape(output)) throw std::invalid_argument("prediction_to_x: tensor shapes differ");
  check_times(t, x_t.n());
  if (type == PredictionType::X) return output;
  Tensor<T> out = output;
  for (int n = 0; n < x_t.n(); ++n) {
    const auto [alpha, sigma] = sched.coefficients(t[n]);
    auto o = out.sample(n);
    const auto xt = x_t.sample(n);
    const auto raw = output.sample(n);
    if (type == PredictionType::V) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(alpha * xt[i] - sigma * raw[i]);
    } else if (alpha < kMinAlphaForEps) {
      std::fill(o.begin(), o.end(), T{});
    } else {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>((xt[i] - sigma * raw[i]) / alpha);
    }
  }
  return out;
}

Tensor<float> cfg_combine(const Tensor<float>& pred_cond, const Tensor<float>& pred_uncond,
                          double gw) {
  require_same_shape(pred_cond, pred_uncond, "cfg_combine");
  Tensor<float> out = pred_cond;
  if (gw == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(pred_cond[i] + gw * (static_cast<double>(pred_cond[i]) - pred_uncond[i]));
  }
  return out;
}

PosteriorCoefficients posterior_coefficients(double s, double t_next, const NoiseSchedule& sched) {
  if (!(t_next >= 0.0 && t_next < s && s <= 1.0)) {
    throw std::invalid_argument("ancestral step needs 0 <= t_next < s <= 1");
  }
  const double gs = sched.gamma(s);
  const double gt = sched.gamma(t_next);
  const double var_s = sched.one_minus_gamma(s);
  const double var_t = sched.one_minus_gamma(t_next);
  // sigma^2_{s|t} = sigma_s^2 - alpha_{s|t}^2 sigma_t^2 = (gt - gs) / gt.
  const double alpha_st = std::sqrt(gs / gt);
  const double var_st = (gt - gs) / gt;
  return {alpha_st * var_t / var_s, std::sqrt(gt) * var_st / var_s, var_st * var_t / var_s};
}

Tensor<float> ancestral_step(const Tensor<float>& x_s, const Tensor<float>& x_hat, double s,
                             double t_next, const NoiseSchedule& sched, bool stochastic,
                             const Tensor<float>& noise) {
  require_same_shape(x_s, x_hat, "ancestral_step");
  const PosteriorCoefficients pc = posterior_coefficients(s, t_next, sched);
  if (t_next == 0.0) return x_hat;
  if (stochastic) require_same_shape(x_s, noise, "ancestral_step noise");
  const double stddev = std::sqrt(pc.variance);
  Tensor<float> out = x_s;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = pc.state * x_s[i] + pc.estimate * x_hat[i];
    if (stochastic) v += stddev * noise[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

Tensor<float> ancestral_step(const Tensor<float>& x_s, const Tensor<float>& x_hat, double s,
                             double t_next, const NoiseSchedule& sched, bool stochastic, Rng& rng) {
  Tensor<float> noise;
  if (stochastic && t_next > 0.0) {
    noise = Tensor<float>(x_s.n(), x_s.channels(), x_s.height(), x_s.width());
    fill_normal(noise, rng);
  }
  return ancestral_step(x_s, x_hat, s, t_next, sched, stochastic, noise);
}

void fill_normal(Tensor<float>& out, Rng& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (float& v : out.values()) v = normal(rng);
}

template <typename T>
LossTerms<T> weighted_x_loss(PredictionType type, const Tensor<T>& x_t, const Tensor<T>& output,
                             const Tensor<T>& x0, std::span<const float> t,
                             const NoiseSchedule& sched, const LossWeighting& weighting,
                             bool with_gradient) {
  if (!x_t.same_shape(output) || !x0.same_shape(output)) {
    throw std::invalid_argument("weighted_x_loss: tensor shapes differ");
  }
  check_times(t, output.n());
  const Tensor<T> x_hat = prediction_to_x(type, x_t, output, t, sched);
  const int n_samples = output.n();
  const std::size_t per_sample = output.size() / std::max(1, n_samples);
  LossTerms<T> terms;
  if (with_gradient) terms.grad_output = Tensor<T>(output.n(), output.channels(), output.height(), output.width());
  double total = 0.0;
  for (int n = 0; n < n_samples; ++n) {
    const double w = loss_weight(t[n], sched, weighting);
    const auto [alpha, sigma] = sched.coefficients(t[n]);
    const auto xh = x_hat.sample(n);
    const auto target = x0.sample(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < per_sample; ++i) {
      const double d = static_cast<double>(target[i]) - xh[i];
      sq += d * d;
    }
    total += w * sq / static_cast<double>(per_sample);
    if (with_gradient) {
      // d x_hat / d output: 1 (x), -sigma/alpha (eps), -sigma (v).
      double chain = 1.0;
      if (type == PredictionType::Eps) chain = alpha < kMinAlphaForEps ? 0.0 : -sigma / alpha;
      if (type == PredictionType::V) chain = -sigma;
      const double scale = -2.0 * w * chain / (static_cast<double>(per_sample) * n_samples);
      auto g = terms.grad_output.sample(n);
      for (std::size_t i = 0; i < per_sample; ++i) {
        g[i] = static_cast<T>(scale * (static_cast<double>(target[i]) - xh[i]));
      }
    }
  }
  terms.loss = total / n_samples;
  if (!std::isfinite(terms.loss)) throw NumericError("training loss is not finite");
  return terms;
}

template Tensor<float> prediction_to_x(PredictionType, const Tensor<float>&, const Tensor<float>&,
                                       std::span<const float>, const NoiseSchedule&);
template Tensor<double> prediction_to_x(PredictionType, const Tensor<double>&, const Tensor<double>&,
                                        std::span<const float>, const NoiseSchedule&);
template LossTerms<float> weighted_x_loss(PredictionType, const Tensor<float>&, const Tensor<float>&,
                                          const Tensor<float>&, std::span<const float>,
                                          const NoiseSchedule&, const LossWeighting&, bool);
template LossTerms<double> weighted_x_loss(PredictionType, const Tensor<double>&, const Tensor<double>&,
                                           const Tensor<double>&, std::span<const float>,
                                           const NoiseSchedule&, const LossWeighting&, bool);

double training_loss(const Denoiser& net, const Tensor<float>& images, const Tensor<float>& x0,
                     std::span<const float> t, const Tensor<float>& eps, const NoiseSchedule& sched,
                     const LossWeighting& weighting) {
  for (float ti : t) {
    if (!(ti >= kMinTrainTime && ti <= 1.0f)) throw std::domain_error("training time outside [1e-5, 1]");
  }
  const Tensor<float> x_t = forward_sample_batch(x0, eps, t, sched);
  const Tensor<float> out = net.predict(x_t, images, t);
  return weighted_x_loss<float>(net.prediction_type(), x_t, out, x0, t, sched, weighting, false).loss;
}

void SamplerConfig::validate() const {
  if (steps < 1) throw ValidationError("sampler steps must be >= 1");
  if (!(guidance_weight >= 0.0)) throw ValidationError("guidance weight must be >= 0");
}

SampleResult sample(const Denoiser& net, const Tensor<float>& images, const SamplerConfig& cfg,
                    const NoiseSchedule& sched, const Encoding& enc, std::uint64_t first_index) {
  cfg.validate();
  const int n = images.n();
  const int channels = net.state_channels();
  if (channels != enc.channels()) {
    throw ValidationError("denoiser has " + std::to_string(channels) + " state channels but encoding needs " +
                          std::to_string(enc.channels()));
  }
  const int h = images.height();
  const int w = images.width();

  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) streams.push_back(make_stream(cfg.seed, first_index + static_cast<std::uint64_t>(i)));

  auto draw_noise = [&]() {
    Tensor<float> z(n, channels, h, w);
    for (int i = 0; i < n; ++i) {
      std::normal_distribution<float> normal(0.0f, 1.0f);
      for (float& v : z.sample(i)) v = normal(streams[i]);
    }
    return z;
  };

  Tensor<float> x = draw_noise();
  const Tensor<float> blank(n, kImageChannels, h, w, 0.0f);
  const float lo = enc.min_value();
  const float hi = enc.max_value();
  Tensor<float> x_hat;

  for (int k = 0; k < cfg.steps; ++k) {
    const double s = 1.0 - static_cast<double>(k) / cfg.steps;
    const double t_next = k + 1 == cfg.steps ? 0.0 : 1.0 - static_cast<double>(k + 1) / cfg.steps;
    const std::vector<float> times(static_cast<std::size_t>(n), static_cast<float>(s));

    x_hat = prediction_to_x<float>(net.prediction_type(), x, net.predict(x, images, times), times, sched);
    if (cfg.guidance_weight > 0.0) {
      const Tensor<float> uncond =
          prediction_to_x<float>(net.prediction_type(), x, net.predict(x, blank, times), times, sched);
      x_hat = cfg_combine(x_hat, uncond, cfg.guidance_weight);
    }
    for (float& v : x_hat.values()) {
      if (std::isnan(v)) throw NumericError("denoiser produced NaN during sampling");
      v = std::clamp(v, lo, hi);
    }
    if (t_next == 0.0) {
      x = x_hat;
    } else {
      const Tensor<float> noise = cfg.stochastic ? draw_noise() : Tensor<float>();
      x = ancestral_step(x, x_hat, s, t_next, sched, cfg.stochastic, noise);
    }
  }

  SampleResult result;
  result.labels.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) result.labels.push_back(decode_map(x_hat, enc, i));
  result.state = std::move(x_hat);
  return result;
}

}  // namespace segdiff
