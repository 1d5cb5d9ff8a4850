#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace segdiff {

/// Dense NCHW tensor. A single image or per-pixel channel encoding is stored
/// with n == 1, which makes the payload planar: [channel][row][col].
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T{})
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return n_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
  }
  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// View of sample i as a contiguous span of c*h*w values.
  std::span<T> sample(int i) {
    const std::size_t s = static_cast<std::size_t>(c_) * plane();
    return {data_.data() + s * i, s};
  }
  std::span<const T> sample(int i) const {
    const std::size_t s = static_cast<std::size_t>(c_) * plane();
    return {data_.data() + s * i, s};
  }

  bool operator==(const Tensor&) const = default;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

using ChannelTensor = Tensor<float>;

/// Per-pixel integer labels, row-major. Holds either entity ids or class indices.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, std::int32_t fill = 0)
      : h_(height), w_(width), labels_(static_cast<std::size_t>(height) * width, fill) {}
  LabelMap(int height, int width, std::vector<std::int32_t> labels)
      : h_(height), w_(width), labels_(std::move(labels)) {
    assert(labels_.size() == static_cast<std::size_t>(h_) * w_);
  }

  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return labels_.size(); }
  bool same_shape(const LabelMap& o) const { return h_ == o.h_ && w_ == o.w_; }

  std::int32_t& at(int r, int c) { return labels_[static_cast<std::size_t>(r) * w_ + c]; }
  std::int32_t at(int r, int c) const { return labels_[static_cast<std::size_t>(r) * w_ + c]; }
  std::int32_t& operator[](std::size_t i) { return labels_[i]; }
  std::int32_t operator[](std::size_t i) const { return labels_[i]; }
  std::span<const std::int32_t> labels() const { return labels_; }
  std::span<std::int32_t> labels() { return labels_; }

  bool operator==(const LabelMap&) const = default;

 private:
  int h_ = 0, w_ = 0;
  std::vector<std::int32_t> labels_;
};

}  // namespace segdiff
