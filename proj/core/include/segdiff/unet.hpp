#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/denoiser.hpp"
#include "segdiff/nn/layers.hpp"

namespace segdiff {

/// Reference UNet hyperparameters. Level l runs at 1/2^l resolution with
/// base_width * channel_mult[l] channels.
struct NetConfig {
  int base_width = 64;
  std::vector<int> channel_mult = {1, 2, 2};
  int depth_per_level = 1;
  bool attention_at_lowest = true;
  int time_embed_dim = 128;
  int groups = 8;

  int levels() const { return static_cast<int>(channel_mult.size()); }
  int width(int level) const { return base_width * channel_mult[static_cast<std::size_t>(level)]; }
  void validate() const;
  /// Spatial sizes must be divisible by this.
  int spatial_multiple() const { return 1 << (levels() - 1); }
  bool operator==(const NetConfig&) const = default;
};

nlohmann::json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

/// Sinusoidal features of 1000*t over log-spaced frequencies: [sin..., cos...].
std::vector<double> time_embedding(double t, int dim);

/// Residual UNet denoiser: image conditioning by channel concatenation, a
/// per-block time shift, single-head attention at the lowest resolution and a
/// tanh head for x-prediction.
template <typename T>
class UNet final : public Denoiser {
 public:
  UNet(const NetConfig& cfg, int state_channels, PredictionType type, std::uint64_t init_seed = 0);
  // The parameter list points into the layers, so instances stay put.
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  PredictionType prediction_type() const override { return type_; }
  int state_channels() const override { return state_channels_; }
  const NetConfig& config() const { return cfg_; }

  Tensor<float> predict(const Tensor<float>& x_t, const Tensor<float>& image,
                        std::span<const float> t) const override;

  /// Same computation in the network's own precision.
  Tensor<T> forward(const Tensor<T>& x_t, const Tensor<T>& image, std::span<const float> t) const;
  /// Caching forward for a subsequent backward().
  Tensor<T> forward_train(const Tensor<T>& x_t, const Tensor<T>& image, std::span<const float> t);
  /// Accumulates parameter gradients of sum(d_output * output).
  void backward(const Tensor<T>& d_output);

  /// Parameters in declaration order.
  const nn::ParamList<T>& parameters() { return params_; }
  std::vector<const nn::Param<T>*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  template <class Self>
  static Tensor<T> run(Self& self, const Tensor<T>& x_t, const Tensor<T>& image,
                       std::span<const float> t);

  NetConfig cfg_;
  int state_channels_;
  PredictionType type_;

  nn::Conv2d<T> conv_in_;
  nn::Linear<T> time1_, time2_;
  std::vector<nn::ResBlock<T>> down_;
  nn::AttentionBlock<T> attn_;
  std::vector<nn::ResBlock<T>> up_;
  std::vector<int> up_cur_channels_;  // channels of the running activation entering each up block
  nn::GroupNorm<T> out_norm_;
  nn::Conv2d<T> out_conv_;
  nn::ParamList<T> params_;

  // training caches
  int batch_ = 0;
  std::vector<T> time_h1_, time_h2_;
  nn::Act<T> out_pre_;
  Tensor<T> head_out_;
};

/// Learnable scalar count of the reference network.
std::size_t parameter_count(const NetConfig& cfg, int state_channels);

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace segdiff
