#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segdiff/tensor.hpp"

namespace segdiff {

enum class EncodingKind { AnalogBits, OneHot, Rgb };

std::string to_string(EncodingKind kind);
EncodingKind parse_encoding_kind(const std::string& name);

/// A label encoding for the diffusion state space.
struct Encoding {
  EncodingKind kind = EncodingKind::AnalogBits;
  int n_classes = 64;

  /// Throws ValidationError unless the class count fits the kind.
  void validate() const;
  /// Diffusion channel count: log2(n_classes), n_classes, or 3.
  int channels() const;
  /// Range of clean encoded values; predictions are clamped to it while sampling.
  float min_value() const;
  float max_value() const;

  bool operator==(const Encoding&) const = default;
};

inline constexpr int kMaxBits = 8;
inline constexpr int kRgbPaletteSize = 64;

/// MSB-first signed bits: 0 -> -1, 1 -> +1. Throws std::domain_error on range.
std::vector<double> encode_bits(std::int64_t c, int n_bits);

/// Thresholds at 0 (ties decode to 1) and reassembles MSB-first.
/// Throws std::domain_error on NaN.
std::int32_t decode_bits(std::span<const double> activations);
std::int32_t decode_bits(std::span<const float> activations);

/// Independent-bit class distribution: p(y) = prod_i (1 - |y_i - a_i| / 2),
/// indexed by class. Activations must already lie in [-1, 1].
std::vector<double> class_probabilities(std::span<const double> activations);

/// One-hot encoding affinely rescaled so each channel is zero-mean unit-variance
/// under a uniform class prior.
std::vector<double> encode_onehot(std::int64_t c, int n_classes);
/// Raw unit vector, before rescaling.
std::vector<double> onehot_unit(std::int64_t c, int n_classes);
/// Affine constants (offset, scale) mapping a unit entry v to (v - offset) / scale.
std::array<double, 2> onehot_affine(int n_classes);
std::int32_t decode_onehot(std::span<const double> values);

/// Index-ordered colors on the 4x4x4 lattice of [-1, 1]^3.
std::array<double, 3> rgb_palette_color(int index);
std::array<double, 3> encode_rgb(std::int64_t c, int n_classes);
/// Nearest palette color among the first n_classes; ties go to the lowest index.
std::int32_t decode_rgb(std::span<const double> rgb, int n_classes);

/// Pixelwise lift of the per-class encoders. Returns a planar [C][H][W] tensor (n == 1).
ChannelTensor encode_map(const LabelMap& labels, const Encoding& enc);
/// Decodes sample `index` of a batched channel tensor.
LabelMap decode_map(const ChannelTensor& values, const Encoding& enc, int index = 0);

}  // namespace segdiff
