#include "segdiff/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace segdiff::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using StridedMap = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

// Eigen's vectorized reductions peel differently depending on the start
// address, so sums that feed gradients use a fixed scalar order instead.
template <typename T>
T ordered_sum(const T* p, Eigen::Index n) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) acc += p[i];
  return static_cast<T>(acc);
}

// 3x3, stride 1, zero padding 1. col is [cin*9, N*H*W].
template <typename T>
void im2col3(const Act<T>& x, std::vector<T>& col) {
  const int H = x.h, W = x.w;
  const std::size_t cols = x.cols();
  col.assign(static_cast<std::size_t>(x.c) * 9 * cols, T{});
  for (int ci = 0; ci < x.c; ++ci) {
    const T* src = x.row(ci);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * cols;
        const int dy = ky - 1, dx = kx - 1;
        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        for (int n = 0; n < x.n; ++n) {
          for (int y = 0; y < H; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= H) continue;
            const T* s = src + (static_cast<std::size_t>(n) * H + sy) * W + dx;
            T* d = dst + (static_cast<std::size_t>(n) * H + y) * W;
            std::copy(s + x0, s + x1, d + x0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3(const std::vector<T>& col, Act<T>& dx) {
  const int H = dx.h, W = dx.w;
  const std::size_t cols = dx.cols();
  for (int ci = 0; ci < dx.c; ++ci) {
    T* dst = dx.row(ci);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * cols;
        const int dy = ky - 1, ddx = kx - 1;
        const int x0 = std::max(0, -ddx), x1 = std::min(W, W - ddx);
        for (int n = 0; n < dx.n; ++n) {
          for (int y = 0; y < H; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= H) continue;
            T* d = dst + (static_cast<std::size_t>(n) * H + sy) * W + ddx;
            const T* s = src + (static_cast<std::size_t>(n) * H + y) * W;
            for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Act<T> concat(const Act<T>& a, const Act<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw std::invalid_argument("concat: shape mismatch");
  Act<T> out;
  out.c = a.c + b.c;
  out.n = a.n;
  out.h = a.h;
  out.w = a.w;
  out.v.reserve(a.v.size() + b.v.size());
  out.v.insert(out.v.end(), a.v.begin(), a.v.end());
  out.v.insert(out.v.end(), b.v.begin(), b.v.end());
  return out;
}

template <typename T>
void split(const Act<T>& d, int first_channels, Act<T>& da, Act<T>& db) {
  const std::size_t cut = static_cast<std::size_t>(first_channels) * d.cols();
  da = Act<T>(first_channels, d.n, d.h, d.w);
  db = Act<T>(d.c - first_channels, d.n, d.h, d.w);
  std::copy(d.v.begin(), d.v.begin() + static_cast<std::ptrdiff_t>(cut), da.v.begin());
  std::copy(d.v.begin() + static_cast<std::ptrdiff_t>(cut), d.v.end(), db.v.begin());
}

template <typename T>
void init_uniform(Param<T>& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : p.value) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int cin, int cout, int kernel)
    : cin_(cin),
      cout_(cout),
      k_(kernel),
      weight_(name + ".weight", static_cast<std::size_t>(cout) * cin * kernel * kernel),
      bias_(name + ".bias", static_cast<std::size_t>(cout)) {
  if (kernel != 1 && kernel != 3) throw std::invalid_argument("Conv2d supports 1x1 and 3x3 kernels");
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  init_uniform(weight_, static_cast<std::size_t>(cin_) * k_ * k_, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), T{});
}

template <typename T>
void Conv2d<T>::zero_init() {
  std::fill(weight_.value.begin(), weight_.value.end(), T{});
  std::fill(bias_.value.begin(), bias_.value.end(), T{});
}

template <typename T>
Act<T> Conv2d<T>::forward(const Act<T>& x) const {
  if (x.c != cin_) throw std::invalid_argument("Conv2d: input channel mismatch");
  Act<T> y(cout_, x.n, x.h, x.w);
  const auto cols = static_cast<Eigen::Index>(x.cols());
  CMapR<T> W(weight_.value.data(), cout_, cin_ * k_ * k_);
  MapR<T> Y(y.v.data(), cout_, cols);
  if (k_ == 1) {
    Y.noalias() = W * CMapR<T>(x.v.data(), cin_, cols);
  } else {
    auto& col = scratch<T>();
    im2col3(x, col);
    Y.noalias() = W * CMapR<T>(col.data(), cin_ * 9, cols);
  }
  for (int o = 0; o < cout_; ++o) Y.row(o).array() += bias_.value[o];
  return y;
}

template <typename T>
Act<T> Conv2d<T>::forward_train(const Act<T>& x) {
  x_ = x;
  return forward(x);
}

template <typename T>
Act<T> Conv2d<T>::backward(const Act<T>& dy) {
  const Act<T>& x = x_;
  const auto cols = static_cast<Eigen::Index>(x.cols());
  CMapR<T> dY(dy.v.data(), cout_, cols);
  MapR<T> dW(weight_.grad.data(), cout_, cin_ * k_ * k_);
  CMapR<T> W(weight_.value.data(), cout_, cin_ * k_ * k_);
  for (int c = 0; c < cout_; ++c) bias_.grad[static_cast<std::size_t>(c)] += ordered_sum(dy.row(c), cols);
  Act<T> dx(cin_, x.n, x.h, x.w);
  if (k_ == 1) {
    CMapR<T> X(x.v.data(), cin_, cols);
    dW.noalias() += dY * X.transpose();
    MapR<T>(dx.v.data(), cin_, cols).noalias() = W.transpose() * dY;
  } else {
    auto& col = scratch<T>();
    im2col3(x, col);
    dW.noalias() += dY * CMapR<T>(col.data(), cin_ * 9, cols).transpose();
    MapR<T>(col.data(), cin_ * 9, cols).noalias() = W.transpose() * dY;
    col2im3(col, dx);
  }
  return dx;
}

// ---------------------------------------------------------------- GroupNorm

template <typename T>
GroupNorm<T>::GroupNorm(const std::string& name, int groups, int channels)
    : groups_(std::min(groups, channels)),
      channels_(channels),
      gamma_(name + ".gamma", static_cast<std::size_t>(channels)),
      beta_(name + ".beta", static_cast<std::size_t>(channels)) {
  if (channels % groups_ != 0) throw std::invalid_argument("GroupNorm: channels not divisible by groups");
  std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
}

template <typename T>
Act<T> GroupNorm<T>::run(const Act<T>& x, Act<T>* xhat, std::vector<T>* rstd) const {
  if (x.c != channels_) throw std::invalid_argument("GroupNorm: channel mismatch");
  constexpr double kEps = 1e-5;
  const int per_group = channels_ / groups_;
  const std::size_t hw = x.hw();
  const double count = static_cast<double>(per_group) * hw;
  Act<T> y(x.c, x.n, x.h, x.w);
  if (xhat) *xhat = Act<T>(x.c, x.n, x.h, x.w);
  if (rstd) rstd->assign(static_cast<std::size_t>(groups_) * x.n, T{});
  for (int n = 0; n < x.n; ++n) {
    for (int g = 0; g < groups_; ++g) {
      double sum = 0.0, sq = 0.0;
      for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
        const T* p = x.row(c) + n * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum += p[i];
          sq += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mean = sum / count;
      const double var = std::max(0.0, sq / count - mean * mean);
      const double r = 1.0 / std::sqrt(var + kEps);
      if (rstd) (*rstd)[static_cast<std::size_t>(n) * groups_ + g] = static_cast<T>(r);
      for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
        const T* p = x.row(c) + n * hw;
        T* q = y.row(c) + n * hw;
        T* h = xhat ? xhat->row(c) + n * hw : nullptr;
        const T ga = gamma_.value[c], be = beta_.value[c];
        for (std::size_t i = 0; i < hw; ++i) {
          const T z = static_cast<T>((p[i] - mean) * r);
          if (h) h[i] = z;
          q[i] = ga * z + be;
        }
      }
    }
  }
  return y;
}

template <typename T>
Act<T> GroupNorm<T>::forward(const Act<T>& x) const {
  return run(x, nullptr, nullptr);
}

template <typename T>
Act<T> GroupNorm<T>::forward_train(const Act<T>& x) {
  return run(x, &xhat_, &rstd_);
}

template <typename T>
Act<T> GroupNorm<T>::backward(const Act<T>& dy) {
  const Act<T>& xh = xhat_;
  const int per_group = channels_ / groups_;
  const std::size_t hw = xh.hw();
  const double count = static_cast<double>(per_group) * hw;
  Act<T> dx(xh.c, xh.n, xh.h, xh.w);
  for (int c = 0; c < channels_; ++c) {
    const T* d = dy.row(c);
    const T* h = xh.row(c);
    double dg = 0.0, db = 0.0;
    for (std::size_t i = 0; i < xh.cols(); ++i) {
      dg += static_cast<double>(d[i]) * h[i];
      db += d[i];
    }
    gamma_.grad[c] += static_cast<T>(dg);
    beta_.grad[c] += static_cast<T>(db);
  }
  for (int n = 0; n < xh.n; ++n) {
    for (int g = 0; g < groups_; ++g) {
      double sum_d = 0.0, sum_dh = 0.0;
      for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
        const T ga = gamma_.value[c];
        const T* d = dy.row(c) + n * hw;
        const T* h = xh.row(c) + n * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double dxh = static_cast<double>(d[i]) * ga;
          sum_d += dxh;
          sum_dh += dxh * h[i];
        }
      }
      const double r = rstd_[static_cast<std::size_t>(n) * groups_ + g];
      const double mean_d = sum_d / count, mean_dh = sum_dh / count;
      for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
        const T ga = gamma_.value[c];
        const T* d = dy.row(c) + n * hw;
        const T* h = xh.row(c) + n * hw;
        T* o = dx.row(c) + n * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          o[i] = static_cast<T>(r * (static_cast<double>(d[i]) * ga - mean_d - h[i] * mean_dh));
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- pointwise / resampling

template <typename T>
void silu_inplace(std::span<T> x) {
  for (T& v : x) v = v * sigmoid(v);
}

template <typename T>
Act<T> silu(const Act<T>& x) {
  Act<T> y = x;
  silu_inplace(std::span<T>(y.v));
  return y;
}

template <typename T>
Act<T> silu_backward(const Act<T>& x, const Act<T>& dy) {
  Act<T> dx(x.c, x.n, x.h, x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const T s = sigmoid(x.v[i]);
    dx.v[i] = dy.v[i] * s * (T(1) + x.v[i] * (T(1) - s));
  }
  return dx;
}

template <typename T>
Act<T> avg_pool2(const Act<T>& x) {
  if (x.h % 2 || x.w % 2) throw std::invalid_argument("avg_pool2: odd spatial size");
  Act<T> y(x.c, x.n, x.h / 2, x.w / 2);
  const int planes = x.c * x.n;
  for (int p = 0; p < planes; ++p) {
    const T* s = x.v.data() + static_cast<std::size_t>(p) * x.hw();
    T* d = y.v.data() + static_cast<std::size_t>(p) * y.hw();
    for (int r = 0; r < y.h; ++r) {
      for (int c = 0; c < y.w; ++c) {
        const T* a = s + (2 * r) * x.w + 2 * c;
        d[r * y.w + c] = T(0.25) * (a[0] + a[1] + a[x.w] + a[x.w + 1]);
      }
    }
  }
  return y;
}

template <typename T>
Act<T> avg_pool2_backward(const Act<T>& dy) {
  Act<T> dx(dy.c, dy.n, dy.h * 2, dy.w * 2);
  const int planes = dy.c * dy.n;
  for (int p = 0; p < planes; ++p) {
    const T* s = dy.v.data() + static_cast<std::size_t>(p) * dy.hw();
    T* d = dx.v.data() + static_cast<std::size_t>(p) * dx.hw();
    for (int r = 0; r < dx.h; ++r) {
      for (int c = 0; c < dx.w; ++c) d[r * dx.w + c] = T(0.25) * s[(r / 2) * dy.w + c / 2];
    }
  }
  return dx;
}

template <typename T>
Act<T> upsample2(const Act<T>& x) {
  Act<T> y(x.c, x.n, x.h * 2, x.w * 2);
  const int planes = x.c * x.n;
  for (int p = 0; p < planes; ++p) {
    const T* s = x.v.data() + static_cast<std::size_t>(p) * x.hw();
    T* d = y.v.data() + static_cast<std::size_t>(p) * y.hw();
    for (int r = 0; r < y.h; ++r) {
      for (int c = 0; c < y.w; ++c) d[r * y.w + c] = s[(r / 2) * x.w + c / 2];
    }
  }
  return y;
}

template <typename T>
Act<T> upsample2_backward(const Act<T>& dy) {
  Act<T> dx(dy.c, dy.n, dy.h / 2, dy.w / 2);
  const int planes = dy.c * dy.n;
  for (int p = 0; p < planes; ++p) {
    const T* s = dy.v.data() + static_cast<std::size_t>(p) * dy.hw();
    T* d = dx.v.data() + static_cast<std::size_t>(p) * dx.hw();
    for (int r = 0; r < dy.h; ++r) {
      for (int c = 0; c < dy.w; ++c) d[(r / 2) * dx.w + c / 2] += s[r * dy.w + c];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out)
    : in_(in),
      out_(out),
      weight_(name + ".weight", static_cast<std::size_t>(in) * out),
      bias_(name + ".bias", static_cast<std::size_t>(out)) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  init_uniform(weight_, static_cast<std::size_t>(in_), rng);
  std::fill(bias_.value.begin(), bias_.value.end(), T{});
}

template <typename T>
std::vector<T> Linear<T>::forward(std::span<const T> x, int n) const {
  if (x.size() != static_cast<std::size_t>(n) * in_) throw std::invalid_argument("Linear: input size");
  std::vector<T> y(static_cast<std::size_t>(n) * out_);
  CMapR<T> X(x.data(), n, in_);
  CMapR<T> W(weight_.value.data(), out_, in_);
  MapR<T> Y(y.data(), n, out_);
  Y.noalias() = X * W.transpose();
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_; ++o) Y(i, o) += bias_.value[o];
  }
  return y;
}

template <typename T>
std::vector<T> Linear<T>::forward_train(std::span<const T> x, int n) {
  x_.assign(x.begin(), x.end());
  n_ = n;
  return forward(x, n);
}

template <typename T>
std::vector<T> Linear<T>::backward(std::span<const T> dy) {
  CMapR<T> dY(dy.data(), n_, out_);
  CMapR<T> X(x_.data(), n_, in_);
  CMapR<T> W(weight_.value.data(), out_, in_);
  MapR<T>(weight_.grad.data(), out_, in_).noalias() += dY.transpose() * X;
  for (int o = 0; o < out_; ++o) {
    double acc = 0.0;
    for (int n = 0; n < n_; ++n) acc += dy[static_cast<std::size_t>(n) * out_ + o];
    bias_.grad[static_cast<std::size_t>(o)] += static_cast<T>(acc);
  }
  std::vector<T> dx(static_cast<std::size_t>(n_) * in_);
  MapR<T>(dx.data(), n_, in_).noalias() = dY * W;
  return dx;
}

// ---------------------------------------------------------------- ResBlock

template <typename T>
ResBlock<T>::ResBlock(const std::string& name, int cin, int cout, int temb_dim, int groups)
    : cin_(cin),
      cout_(cout),
      gn1_(name + ".norm1", groups, cin),
      gn2_(name + ".norm2", groups, cout),
      conv1_(name + ".conv1", cin, cout, 3),
      conv2_(name + ".conv2", cout, cout, 3),
      temb_proj_(name + ".temb", temb_dim, cout),
      has_skip_(cin != cout) {
  if (has_skip_) skip_ = Conv2d<T>(name + ".skip", cin, cout, 1);
}

template <typename T>
void ResBlock<T>::init(Rng& rng) {
  conv1_.init(rng);
  temb_proj_.init(rng);
  conv2_.init(rng);
  if (has_skip_) skip_.init(rng);
}

template <typename T>
void ResBlock<T>::collect(ParamList<T>& out) {
  gn1_.collect(out);
  conv1_.collect(out);
  temb_proj_.collect(out);
  gn2_.collect(out);
  conv2_.collect(out);
  if (has_skip_) skip_.collect(out);
}

namespace {

template <typename T>
void add_time_shift(Act<T>& h, const std::vector<T>& shift) {
  // shift is [N, C] row-major.
  const std::size_t hw = h.hw();
  for (int c = 0; c < h.c; ++c) {
    for (int n = 0; n < h.n; ++n) {
      const T s = shift[static_cast<std::size_t>(n) * h.c + c];
      T* p = h.row(c) + n * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += s;
    }
  }
}

}  // namespace

template <typename T>
Act<T> ResBlock<T>::forward(const Act<T>& x, std::span<const T> temb_act) const {
  Act<T> h = silu(gn1_.forward(x));
  h = conv1_.forward(h);
  add_time_shift(h, temb_proj_.forward(temb_act, x.n));
  h = conv2_.forward(silu(gn2_.forward(h)));
  const Act<T> s = has_skip_ ? skip_.forward(x) : x;
  for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += s.v[i];
  return h;
}

template <typename T>
Act<T> ResBlock<T>::forward_train(const Act<T>& x, std::span<const T> temb_act) {
  a1_ = gn1_.forward_train(x);
  Act<T> h = conv1_.forward_train(silu(a1_));
  add_time_shift(h, temb_proj_.forward_train(temb_act, x.n));
  a2_ = gn2_.forward_train(h);
  h = conv2_.forward_train(silu(a2_));
  const Act<T> s = has_skip_ ? skip_.forward_train(x) : x;
  for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += s.v[i];
  return h;
}

template <typename T>
Act<T> ResBlock<T>::backward(const Act<T>& dy, std::span<T> dtemb_act) {
  Act<T> dx = has_skip_ ? skip_.backward(dy) : dy;
  Act<T> dh = conv2_.backward(dy);
  dh = gn2_.backward(silu_backward(a2_, dh));
  // Time shift gradient: sum over spatial positions per (n, c).
  std::vector<T> dshift(static_cast<std::size_t>(dh.n) * dh.c, T{});
  const std::size_t hw = dh.hw();
  for (int c = 0; c < dh.c; ++c) {
    for (int n = 0; n < dh.n; ++n) {
      const T* p = dh.row(c) + n * hw;
      T s{};
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      dshift[static_cast<std::size_t>(n) * dh.c + c] = s;
    }
  }
  const std::vector<T> dt = temb_proj_.backward(dshift);
  for (std::size_t i = 0; i < dt.size(); ++i) dtemb_act[i] += dt[i];
  dh = conv1_.backward(dh);
  dh = gn1_.backward(silu_backward(a1_, dh));
  for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dh.v[i];
  return dx;
}

// ---------------------------------------------------------------- AttentionBlock

template <typename T>
AttentionBlock<T>::AttentionBlock(const std::string& name, int channels, int groups)
    : channels_(channels),
      norm_(name + ".norm", groups, channels),
      qkv_(name + ".qkv", channels, 3 * channels, 1),
      proj_(name + ".proj", channels, channels, 1) {}

template <typename T>
void AttentionBlock<T>::init(Rng& rng) {
  qkv_.init(rng);
  proj_.init(rng);
}

template <typename T>
void AttentionBlock<T>::collect(ParamList<T>& out) {
  norm_.collect(out);
  qkv_.collect(out);
  proj_.collect(out);
}

template <typename T>
Act<T> AttentionBlock<T>::attend(const Act<T>& qkv, std::vector<T>* probs) const {
  const int C = channels_;
  const int N = qkv.n;
  const auto S = static_cast<Eigen::Index>(qkv.hw());
  const auto stride = static_cast<Eigen::Index>(qkv.cols());
  const T scale = T(1) / std::sqrt(static_cast<T>(C));
  Act<T> out(C, N, qkv.h, qkv.w);
  if (probs) probs->assign(static_cast<std::size_t>(N) * S * S, T{});
  MatR<T> A(S, S);
  for (int n = 0; n < N; ++n) {
    const std::size_t off = static_cast<std::size_t>(n) * S;
    CStridedMap<T> Q(qkv.row(0) + off, C, S, Eigen::OuterStride<>(stride));
    CStridedMap<T> K(qkv.row(C) + off, C, S, Eigen::OuterStride<>(stride));
    CStridedMap<T> V(qkv.row(2 * C) + off, C, S, Eigen::OuterStride<>(stride));
    A.noalias() = (Q.transpose() * K) * scale;
    for (Eigen::Index i = 0; i < S; ++i) {
      const T m = A.row(i).maxCoeff();
      A.row(i) = (A.row(i).array() - m).exp();
      A.row(i) /= A.row(i).sum();
    }
    StridedMap<T> O(out.row(0) + off, C, S, Eigen::OuterStride<>(stride));
    O.noalias() = V * A.transpose();
    if (probs) MapR<T>(probs->data() + static_cast<std::size_t>(n) * S * S, S, S) = A;
  }
  return out;
}

template <typename T>
Act<T> AttentionBlock<T>::forward(const Act<T>& x) const {
  Act<T> h = proj_.forward(attend(qkv_.forward(norm_.forward(x)), nullptr));
  for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += x.v[i];
  return h;
}

template <typename T>
Act<T> AttentionBlock<T>::forward_train(const Act<T>& x) {
  qkv_out_ = qkv_.forward_train(norm_.forward_train(x));
  Act<T> h = proj_.forward_train(attend(qkv_out_, &probs_));
  for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += x.v[i];
  return h;
}

template <typename T>
Act<T> AttentionBlock<T>::backward(const Act<T>& dy) {
  const int C = channels_;
  const Act<T>& qkv = qkv_out_;
  const int N = qkv.n;
  const auto S = static_cast<Eigen::Index>(qkv.hw());
  const auto stride = static_cast<Eigen::Index>(qkv.cols());
  const T scale = T(1) / std::sqrt(static_cast<T>(C));

  const Act<T> d_attn = proj_.backward(dy);
  Act<T> d_qkv(3 * C, N, qkv.h, qkv.w);
  MatR<T> dA(S, S), dS(S, S);
  for (int n = 0; n < N; ++n) {
    const std::size_t off = static_cast<std::size_t>(n) * S;
    CStridedMap<T> Q(qkv.row(0) + off, C, S, Eigen::OuterStride<>(stride));
    CStridedMap<T> K(qkv.row(C) + off, C, S, Eigen::OuterStride<>(stride));
    CStridedMap<T> V(qkv.row(2 * C) + off, C, S, Eigen::OuterStride<>(stride));
    CStridedMap<T> dO(d_attn.row(0) + off, C, S, Eigen::OuterStride<>(stride));
    CMapR<T> A(probs_.data() + static_cast<std::size_t>(n) * S * S, S, S);
    StridedMap<T> dQ(d_qkv.row(0) + off, C, S, Eigen::OuterStride<>(stride));
    StridedMap<T> dK(d_qkv.row(C) + off, C, S, Eigen::OuterStride<>(stride));
    StridedMap<T> dV(d_qkv.row(2 * C) + off, C, S, Eigen::OuterStride<>(stride));
    dV.noalias() = dO * A;
    dA.noalias() = dO.transpose() * V;
    for (Eigen::Index i = 0; i < S; ++i) {
      const T dot = (dA.row(i).array() * A.row(i).array()).sum();
      dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
    }
    dQ.noalias() = (K * dS.transpose()) * scale;
    dK.noalias() = (Q * dS) * scale;
  }
  Act<T> dx = norm_.backward(qkv_.backward(d_qkv));
  for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dy.v[i];
  return dx;
}

#define SEGDIFF_INSTANTIATE(T)                                                     \
  template struct Act<T>;                                                          \
  template Act<T> concat(const Act<T>&, const Act<T>&);                            \
  template void split(const Act<T>&, int, Act<T>&, Act<T>&);                       \
  template void init_uniform(Param<T>&, std::size_t, Rng&);                        \
  template class Conv2d<T>;                                                        \
  template class GroupNorm<T>;                                                     \
  template Act<T> silu(const Act<T>&);                                             \
  template Act<T> silu_backward(const Act<T>&, const Act<T>&);                     \
  template void silu_inplace(std::span<T>);                                        \
  template Act<T> avg_pool2(const Act<T>&);                                        \
  template Act<T> avg_pool2_backward(const Act<T>&);                               \
  template Act<T> upsample2(const Act<T>&);                                        \
  template Act<T> upsample2_backward(const Act<T>&);                               \
  template class Linear<T>;                                                        \
  template class ResBlock<T>;                                                      \
  template class AttentionBlock<T>;

SEGDIFF_INSTANTIATE(float)
SEGDIFF_INSTANTIATE(double)

#undef SEGDIFF_INSTANTIATE

}  // namespace segdiff::nn
