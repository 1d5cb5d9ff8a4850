#pragma once

// Minimal layer set for the reference denoiser. Activations use a
// channel-major layout [C][N][H][W] so that every convolution over a batch is
// one GEMM and channel concatenation is plain appending.
//
// Each layer has a pure forward() for inference and a forward_train()/backward()
// pair that caches what the backward pass needs inside the layer. Gradients
// accumulate into Param::grad until zero_grad().

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segdiff/rng.hpp"

namespace segdiff::nn {

template <typename T>
struct Act {
  int c = 0, n = 0, h = 0, w = 0;
  std::vector<T> v;

  Act() = default;
  Act(int c_, int n_, int h_, int w_, T fill = T{})
      : c(c_), n(n_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * n_ * h_ * w_, fill) {}

  std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
  /// Columns per channel row: N*H*W.
  std::size_t cols() const { return static_cast<std::size_t>(n) * h * w; }
  T* row(int ch) { return v.data() + static_cast<std::size_t>(ch) * cols(); }
  const T* row(int ch) const { return v.data() + static_cast<std::size_t>(ch) * cols(); }
  bool same_shape(const Act& o) const { return c == o.c && n == o.n && h == o.h && w == o.w; }
};

/// Channel concatenation (a on top of b).
template <typename T>
Act<T> concat(const Act<T>& a, const Act<T>& b);
/// Splits a gradient of concat(a, b) with a.c leading channels.
template <typename T>
void split(const Act<T>& d, int first_channels, Act<T>& da, Act<T>& db);

template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::size_t size) : name(std::move(n)), value(size, T{}), grad(size, T{}) {}
  std::size_t size() const { return value.size(); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

/// Fan-in scaled uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
void init_uniform(Param<T>& p, std::size_t fan_in, Rng& rng);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int kernel);

  Act<T> forward(const Act<T>& x) const;
  Act<T> forward_train(const Act<T>& x);
  Act<T> backward(const Act<T>& dy);

  void init(Rng& rng);
  void zero_init();
  void collect(ParamList<T>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

 private:
  int cin_ = 0, cout_ = 0, k_ = 1;
  Param<T> weight_, bias_;
  Act<T> x_;
};

template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(const std::string& name, int groups, int channels);

  Act<T> forward(const Act<T>& x) const;
  Act<T> forward_train(const Act<T>& x);
  Act<T> backward(const Act<T>& dy);
  void collect(ParamList<T>& out) { out.push_back(&gamma_); out.push_back(&beta_); }

 private:
  Act<T> run(const Act<T>& x, Act<T>* xhat, std::vector<T>* rstd) const;
  int groups_ = 1, channels_ = 0;
  Param<T> gamma_, beta_;
  Act<T> xhat_;
  std::vector<T> rstd_;
};

template <typename T>
Act<T> silu(const Act<T>& x);
template <typename T>
Act<T> silu_backward(const Act<T>& x, const Act<T>& dy);
template <typename T>
void silu_inplace(std::span<T> x);

template <typename T>
Act<T> avg_pool2(const Act<T>& x);
template <typename T>
Act<T> avg_pool2_backward(const Act<T>& dy);
template <typename T>
Act<T> upsample2(const Act<T>& x);
template <typename T>
Act<T> upsample2_backward(const Act<T>& dy);

/// Dense layer on row-major [N, in] inputs.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  std::vector<T> forward(std::span<const T> x, int n) const;
  std::vector<T> forward_train(std::span<const T> x, int n);
  std::vector<T> backward(std::span<const T> dy);

  void init(Rng& rng);
  void collect(ParamList<T>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_ = 0, out_ = 0, n_ = 0;
  Param<T> weight_, bias_;
  std::vector<T> x_;
};

/// Pre-norm residual block with a per-channel time shift:
/// y = skip(x) + conv2(silu(gn2(conv1(silu(gn1(x))) + proj(temb))))
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int cin, int cout, int temb_dim, int groups);

  /// temb_act: silu(time embedding), row-major [N, temb_dim].
  Act<T> forward(const Act<T>& x, std::span<const T> temb_act) const;
  Act<T> forward_train(const Act<T>& x, std::span<const T> temb_act);
  /// Returns dx; adds the time-embedding gradient into dtemb_act.
  Act<T> backward(const Act<T>& dy, std::span<T> dtemb_act);

  void init(Rng& rng);
  void collect(ParamList<T>& out);

 private:
  int cin_ = 0, cout_ = 0;
  GroupNorm<T> gn1_, gn2_;
  Conv2d<T> conv1_, conv2_, skip_;
  Linear<T> temb_proj_;
  bool has_skip_ = false;
  Act<T> a1_, a2_;  // pre-activation inputs of the two SiLUs
};

/// Single-head self-attention over all spatial positions of each sample, residual.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const std::string& name, int channels, int groups);

  Act<T> forward(const Act<T>& x) const;
  Act<T> forward_train(const Act<T>& x);
  Act<T> backward(const Act<T>& dy);

  void init(Rng& rng);
  void collect(ParamList<T>& out);

 private:
  Act<T> attend(const Act<T>& qkv, std::vector<T>* probs) const;
  int channels_ = 0;
  GroupNorm<T> norm_;
  Conv2d<T> qkv_, proj_;
  Act<T> qkv_out_;
  std::vector<T> probs_;  // per sample [S, S]
};

}  // namespace segdiff::nn
