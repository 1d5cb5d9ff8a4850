#include "segdiff/unet.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <type_traits>

#include "segdiff/errors.hpp"
#include "segdiff/rng.hpp"

namespace segdiff {

void NetConfig::validate() const {
  if (base_width < 1) throw ValidationError("base_width must be positive");
  if (channel_mult.empty()) throw ValidationError("channel_mult needs at least one level");
  if (depth_per_level < 1) throw ValidationError("depth_per_level must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2) throw ValidationError("time_embed_dim must be even and >= 2");
  if (groups < 1) throw ValidationError("groups must be >= 1");
  for (int l = 0; l < levels(); ++l) {
    if (channel_mult[static_cast<std::size_t>(l)] < 1) throw ValidationError("channel_mult entries must be >= 1");
    if (width(l) % std::min(groups, width(l)) != 0) {
      throw ValidationError("level widths must be divisible by the group count");
    }
  }
}

nlohmann::json to_json(const NetConfig& cfg) {
  return {{"base_width", cfg.base_width},
          {"channel_mult", cfg.channel_mult},
          {"levels", cfg.levels()},
          {"depth_per_level", cfg.depth_per_level},
          {"attention_at_lowest", cfg.attention_at_lowest},
          {"time_embed_dim", cfg.time_embed_dim},
          {"groups", cfg.groups}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig cfg;
  cfg.base_width = j.value("base_width", cfg.base_width);
  cfg.channel_mult = j.value("channel_mult", cfg.channel_mult);
  if (j.contains("levels") && j.at("levels").get<int>() != cfg.levels()) {
    throw ValidationError("net.levels disagrees with the length of net.channel_mult");
  }
  cfg.depth_per_level = j.value("depth_per_level", cfg.depth_per_level);
  cfg.attention_at_lowest = j.value("attention_at_lowest", cfg.attention_at_lowest);
  cfg.time_embed_dim = j.value("time_embed_dim", cfg.time_embed_dim);
  cfg.groups = j.value("groups", cfg.groups);
  cfg.validate();
  return cfg;
}

std::vector<double> time_embedding(double t, int dim) {
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim), 0.0);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    const double arg = 1000.0 * t * freq;
    e[static_cast<std::size_t>(k)] = std::sin(arg);
    e[static_cast<std::size_t>(half + k)] = std::cos(arg);
  }
  return e;
}

namespace {

template <typename T>
std::vector<T> silu_vec(const std::vector<T>& x) {
  std::vector<T> y = x;
  nn::silu_inplace(std::span<T>(y));
  return y;
}

template <typename T>
std::vector<T> silu_vec_backward(const std::vector<T>& x, std::span<const T> dy) {
  std::vector<T> dx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-x[i]));
    dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
  return dx;
}

// NCHW tensors -> channel-major activation with x_t channels first.
template <typename T>
nn::Act<T> to_act(const Tensor<T>& x_t, const Tensor<T>& image) {
  const int n = x_t.n(), h = x_t.height(), w = x_t.width();
  const int cs = x_t.channels(), ci = image.channels();
  nn::Act<T> a(cs + ci, n, h, w);
  const std::size_t hw = a.hw();
  for (int c = 0; c < cs + ci; ++c) {
    for (int s = 0; s < n; ++s) {
      const T* src = c < cs ? x_t.data() + x_t.offset(s, c, 0, 0) : image.data() + image.offset(s, c - cs, 0, 0);
      std::copy(src, src + hw, a.row(c) + s * hw);
    }
  }
  return a;
}

template <typename T>
Tensor<T> from_act(const nn::Act<T>& a) {
  Tensor<T> out(a.n, a.c, a.h, a.w);
  const std::size_t hw = a.hw();
  for (int c = 0; c < a.c; ++c) {
    for (int s = 0; s < a.n; ++s) {
      const T* src = a.row(c) + s * hw;
      std::copy(src, src + hw, out.data() + out.offset(s, c, 0, 0));
    }
  }
  return out;
}

template <typename T>
nn::Act<T> to_act(const Tensor<T>& x) {
  nn::Act<T> a(x.channels(), x.n(), x.height(), x.width());
  const std::size_t hw = a.hw();
  for (int c = 0; c < a.c; ++c) {
    for (int s = 0; s < a.n; ++s) {
      const T* src = x.data() + x.offset(s, c, 0, 0);
      std::copy(src, src + hw, a.row(c) + s * hw);
    }
  }
  return a;
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  if constexpr (std::is_same_v<To, From>) {
    return x;
  } else {
    Tensor<To> out(x.n(), x.channels(), x.height(), x.width());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<To>(x[i]);
    return out;
  }
}

}  // namespace

template <typename T>
UNet<T>::UNet(const NetConfig& cfg, int state_channels, PredictionType type, std::uint64_t init_seed)
    : cfg_(cfg), state_channels_(state_channels), type_(type) {
  cfg_.validate();
  if (state_channels < 1) throw ValidationError("denoiser needs at least one state channel");
  const int L = cfg_.levels();
  const int D = cfg_.time_embed_dim;
  const int G = cfg_.groups;

  conv_in_ = nn::Conv2d<T>("conv_in", state_channels + kImageChannels, cfg_.width(0), 3);
  time1_ = nn::Linear<T>("time.0", D, D);
  time2_ = nn::Linear<T>("time.1", D, D);

  std::vector<int> skip_channels;
  int ch = cfg_.width(0);
  for (int l = 0; l < L; ++l) {
    for (int d = 0; d < cfg_.depth_per_level; ++d) {
      down_.emplace_back("down." + std::to_string(l) + "." + std::to_string(d), ch, cfg_.width(l), D, G);
      ch = cfg_.width(l);
      skip_channels.push_back(ch);
    }
  }
  if (cfg_.attention_at_lowest) attn_ = nn::AttentionBlock<T>("mid.attn", ch, G);
  for (int l = L - 1; l >= 0; --l) {
    for (int d = 0; d < cfg_.depth_per_level; ++d) {
      const int skip = skip_channels.back();
      skip_channels.pop_back();
      up_cur_channels_.push_back(ch);
      up_.emplace_back("up." + std::to_string(l) + "." + std::to_string(d), ch + skip, cfg_.width(l), D, G);
      ch = cfg_.width(l);
    }
  }
  out_norm_ = nn::GroupNorm<T>("out.norm", G, ch);
  out_conv_ = nn::Conv2d<T>("out.conv", ch, state_channels, 3);

  Rng rng = make_stream(init_seed, 0x5eed);
  conv_in_.init(rng);
  time1_.init(rng);
  time2_.init(rng);
  for (auto& b : down_) b.init(rng);
  if (cfg_.attention_at_lowest) attn_.init(rng);
  for (auto& b : up_) b.init(rng);
  // Zero output layer: the initial x-prediction is tanh(0) = 0.
  out_conv_.zero_init();

  conv_in_.collect(params_);
  time1_.collect(params_);
  time2_.collect(params_);
  for (auto& b : down_) b.collect(params_);
  if (cfg_.attention_at_lowest) attn_.collect(params_);
  for (auto& b : up_) b.collect(params_);
  out_norm_.collect(params_);
  out_conv_.collect(params_);
}

template <typename T>
std::vector<const nn::Param<T>*> UNet<T>::parameters() const {
  return {params_.begin(), params_.end()};
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params_) n += p->size();
  return n;
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto* p : params_) std::fill(p->grad.begin(), p->grad.end(), T{});
}

template <typename T>
template <class Self>
Tensor<T> UNet<T>::run(Self& self, const Tensor<T>& x_t, const Tensor<T>& image, std::span<const float> t) {
  constexpr bool kTrain = !std::is_const_v<Self>;
  const int n = x_t.n();
  if (x_t.channels() != self.state_channels_) throw std::invalid_argument("denoiser: state channel mismatch");
  if (image.channels() != kImageChannels || image.n() != n || image.height() != x_t.height() ||
      image.width() != x_t.width()) {
    throw std::invalid_argument("denoiser: image shape does not match the state");
  }
  if (static_cast<int>(t.size()) != n) throw std::invalid_argument("denoiser: need one time per sample");
  const int mult = self.cfg_.spatial_multiple();
  if (x_t.height() % mult || x_t.width() % mult) {
    throw std::invalid_argument("denoiser: spatial size must be divisible by " + std::to_string(mult));
  }

  const int D = self.cfg_.time_embed_dim;
  std::vector<T> emb(static_cast<std::size_t>(n) * D);
  for (int s = 0; s < n; ++s) {
    const auto e = time_embedding(t[s], D);
    for (int k = 0; k < D; ++k) emb[static_cast<std::size_t>(s) * D + k] = static_cast<T>(e[k]);
  }

  auto fwd = [](auto& layer, const auto&... args) {
    if constexpr (kTrain) return layer.forward_train(args...);
    else return layer.forward(args...);
  };

  std::vector<T> h1 = fwd(self.time1_, std::span<const T>(emb), n);
  std::vector<T> h2 = fwd(self.time2_, std::span<const T>(silu_vec(h1)), n);
  const std::vector<T> temb = silu_vec(h2);
  const std::span<const T> temb_span(temb);
  if constexpr (kTrain) {
    self.batch_ = n;
    self.time_h1_ = std::move(h1);
    self.time_h2_ = std::move(h2);
  }

  nn::Act<T> h = fwd(self.conv_in_, to_act(x_t, image));
  std::vector<nn::Act<T>> skips;
  const int L = self.cfg_.levels();
  std::size_t block = 0;
  for (int l = 0; l < L; ++l) {
    for (int d = 0; d < self.cfg_.depth_per_level; ++d) {
      h = fwd(self.down_[block++], h, temb_span);
      skips.push_back(h);
    }
    if (l + 1 < L) h = nn::avg_pool2(h);
  }
  if (self.cfg_.attention_at_lowest) h = fwd(self.attn_, h);
  block = 0;
  for (int l = L - 1; l >= 0; --l) {
    for (int d = 0; d < self.cfg_.depth_per_level; ++d) {
      h = fwd(self.up_[block++], nn::concat(h, skips.back()), temb_span);
      skips.pop_back();
    }
    if (l > 0) h = nn::upsample2(h);
  }
  nn::Act<T> pre = fwd(self.out_norm_, h);
  nn::Act<T> y = fwd(self.out_conv_, nn::silu(pre));
  if constexpr (kTrain) self.out_pre_ = std::move(pre);

  Tensor<T> out = from_act(y);
  if (self.type_ == PredictionType::X) {
    for (T& v : out.values()) v = std::tanh(v);
  }
  if constexpr (kTrain) self.head_out_ = out;
  return out;
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x_t, const Tensor<T>& image, std::span<const float> t) const {
  return run(*this, x_t, image, t);
}

template <typename T>
Tensor<T> UNet<T>::forward_train(const Tensor<T>& x_t, const Tensor<T>& image, std::span<const float> t) {
  return run(*this, x_t, image, t);
}

template <typename T>
Tensor<float> UNet<T>::predict(const Tensor<float>& x_t, const Tensor<float>& image,
                               std::span<const float> t) const {
  return cast<float>(forward(cast<T>(x_t), cast<T>(image), t));
}

template <typename T>
void UNet<T>::backward(const Tensor<T>& d_output) {
  if (!d_output.same_shape(head_out_)) throw std::invalid_argument("backward: gradient shape mismatch");
  Tensor<T> d_pre = d_output;
  if (type_ == PredictionType::X) {
    for (std::size_t i = 0; i < d_pre.size(); ++i) d_pre[i] *= T(1) - head_out_[i] * head_out_[i];
  }
  nn::Act<T> d = out_conv_.backward(to_act(d_pre));
  d = out_norm_.backward(nn::silu_backward(out_pre_, d));

  const int D = cfg_.time_embed_dim;
  std::vector<T> dtemb(static_cast<std::size_t>(batch_) * D, T{});
  const int L = cfg_.levels();
  const int depth = cfg_.depth_per_level;
  std::vector<nn::Act<T>> d_skips(down_.size());

  // Up path in reverse. Up block b consumed skip (num_skips - 1 - b).
  int block = static_cast<int>(up_.size()) - 1;
  for (int l = 0; l < L; ++l) {
    if (l > 0) d = nn::upsample2_backward(d);
    for (int k = 0; k < depth; ++k, --block) {
      nn::Act<T> dcat = up_[static_cast<std::size_t>(block)].backward(d, dtemb);
      const std::size_t skip_index = down_.size() - 1 - static_cast<std::size_t>(block);
      nn::split(dcat, up_cur_channels_[static_cast<std::size_t>(block)], d, d_skips[skip_index]);
    }
  }
  if (cfg_.attention_at_lowest) d = attn_.backward(d);
  block = static_cast<int>(down_.size()) - 1;
  for (int l = L - 1; l >= 0; --l) {
    if (l + 1 < L) d = nn::avg_pool2_backward(d);
    for (int k = 0; k < depth; ++k, --block) {
      const nn::Act<T>& ds = d_skips[static_cast<std::size_t>(block)];
      for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] += ds.v[i];
      d = down_[static_cast<std::size_t>(block)].backward(d, dtemb);
    }
  }
  conv_in_.backward(d);

  const std::vector<T> dh2 = silu_vec_backward(time_h2_, std::span<const T>(dtemb));
  const std::vector<T> da = time2_.backward(dh2);
  const std::vector<T> dh1 = silu_vec_backward(time_h1_, std::span<const T>(da));
  time1_.backward(dh1);
}

std::size_t parameter_count(const NetConfig& cfg, int state_channels) {
  return UNet<float>(cfg, state_channels, PredictionType::X).parameter_count();
}

template class UNet<float>;
template class UNet<double>;

}  // namespace segdiff
