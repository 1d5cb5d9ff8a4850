#pragma once

#include <span>
#include <string>

#include "segdiff/tensor.hpp"

namespace segdiff {

enum class PredictionType { X, Eps, V };

std::string to_string(PredictionType p);
PredictionType parse_prediction_type(const std::string& name);

inline constexpr int kImageChannels = 3;

/// Time-conditioned network contract: (noisy state, image, t) -> prediction in
/// the space named by prediction_type(). Implementations must be safe to call
/// concurrently through a const reference.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual PredictionType prediction_type() const = 0;
  /// Channels of the diffusion state (n_bits for analog bits).
  virtual int state_channels() const = 0;

  /// x_t: [N, state_channels, H, W], image: [N, 3, H, W], t: N times in [0, 1].
  virtual Tensor<float> predict(const Tensor<float>& x_t, const Tensor<float>& image,
                                std::span<const float> t) const = 0;
};

}  // namespace segdiff
