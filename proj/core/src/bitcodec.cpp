#include "segdiff/bitcodec.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "segdiff/errors.hpp"

namespace segdiff {

namespace {

void check_bits(int n_bits) {
  if (n_bits < 1 || n_bits > kMaxBits) {
    throw std::domain_error("n_bits must be in [1, " + std::to_string(kMaxBits) + "], got " +
                            std::to_string(n_bits));
  }
}

void check_class(std::int64_t c, std::int64_t n_classes) {
  if (c < 0 || c >= n_classes) {
    throw std::domain_error("class index " + std::to_string(c) + " outside [0, " +
                            std::to_string(n_classes) + ")");
  }
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

template <typename F>
std::int32_t decode_bits_impl(std::span<const F> a) {
  if (a.empty() || a.size() > static_cast<std::size_t>(kMaxBits)) {
    throw std::domain_error("bit vector length must be in [1, 8]");
  }
  std::int32_t c = 0;
  for (F v : a) {
    if (std::isnan(v)) throw std::domain_error("NaN bit activation");
    c = (c << 1) | (v >= F(0) ? 1 : 0);
  }
  return c;
}

}  // namespace

std::string to_string(EncodingKind kind) {
  switch (kind) {
    case EncodingKind::AnalogBits: return "bits";
    case EncodingKind::OneHot: return "onehot";
    case EncodingKind::Rgb: return "rgb";
  }
  return "?";
}

EncodingKind parse_encoding_kind(const std::string& name) {
  if (name == "bits" || name == "analog_bits") return EncodingKind::AnalogBits;
  if (name == "onehot") return EncodingKind::OneHot;
  if (name == "rgb") return EncodingKind::Rgb;
  throw ValidationError("unknown encoding '" + name + "' (expected bits, onehot, rgb)");
}

void Encoding::validate() const {
  if (n_classes < 2) throw ValidationError("encoding needs at least 2 classes");
  switch (kind) {
    case EncodingKind::AnalogBits:
      if (!is_power_of_two(n_classes) || n_classes > (1 << kMaxBits)) {
        throw ValidationError("analog bits need a power-of-two class count <= 256, got " +
                              std::to_string(n_classes));
      }
      break;
    case EncodingKind::OneHot:
      if (n_classes > (1 << kMaxBits)) throw ValidationError("one-hot supports <= 256 classes");
      break;
    case EncodingKind::Rgb:
      if (n_classes > kRgbPaletteSize) {
        throw ValidationError("rgb palette holds at most 64 classes, got " +
                              std::to_string(n_classes));
      }
      break;
  }
}

int Encoding::channels() const {
  switch (kind) {
    case EncodingKind::AnalogBits: {
      int bits = 0;
      while ((1 << bits) < n_classes) ++bits;
      return bits;
    }
    case EncodingKind::OneHot: return n_classes;
    case EncodingKind::Rgb: return 3;
  }
  return 0;
}

float Encoding::min_value() const {
  if (kind == EncodingKind::OneHot) {
    const auto [offset, scale] = onehot_affine(n_classes);
    return static_cast<float>((0.0 - offset) / scale);
  }
  return -1.0f;
}

float Encoding::max_value() const {
  if (kind == EncodingKind::OneHot) {
    const auto [offset, scale] = onehot_affine(n_classes);
    return static_cast<float>((1.0 - offset) / scale);
  }
  return 1.0f;
}

std::vector<double> encode_bits(std::int64_t c, int n_bits) {
  check_bits(n_bits);
  check_class(c, std::int64_t{1} << n_bits);
  std::vector<double> out(static_cast<std::size_t>(n_bits));
  for (int i = 0; i < n_bits; ++i) {
    out[i] = ((c >> (n_bits - 1 - i)) & 1) ? 1.0 : -1.0;
  }
  return out;
}

std::int32_t decode_bits(std::span<const double> activations) {
  return decode_bits_impl(activations);
}

std::int32_t decode_bits(std::span<const float> activations) {
  return decode_bits_impl(activations);
}

std::vector<double> class_probabilities(std::span<const double> a) {
  const int n = static_cast<int>(a.size());
  check_bits(n);
  for (double v : a) {
    if (!(v >= -1.0 && v <= 1.0)) {
      throw std::domain_error("bit activation outside [-1, 1]; clamp before computing probabilities");
    }
  }
  // Per-bit probability of a 1 is (1 + a)/2, of a 0 is (1 - a)/2.
  std::vector<double> probs(std::size_t{1} << n);
  for (std::size_t y = 0; y < probs.size(); ++y) {
    double p = 1.0;
    for (int i = 0; i < n; ++i) {
      const double bit = ((y >> (n - 1 - i)) & 1) ? 1.0 : -1.0;
      p *= 1.0 - std::abs(bit - a[i]) / 2.0;
    }
    probs[y] = p;
  }
  return probs;
}

std::vector<double> onehot_unit(std::int64_t c, int n_classes) {
  if (n_classes < 2) throw std::domain_error("one-hot needs at least 2 classes");
  check_class(c, n_classes);
  std::vector<double> v(static_cast<std::size_t>(n_classes), 0.0);
  v[static_cast<std::size_t>(c)] = 1.0;
  return v;
}

std::array<double, 2> onehot_affine(int n_classes) {
  // Under a uniform prior each channel is Bernoulli(1/K).
  const double p = 1.0 / n_classes;
  return {p, std::sqrt(p * (1.0 - p))};
}

std::vector<double> encode_onehot(std::int64_t c, int n_classes) {
  auto v = onehot_unit(c, n_classes);
  const auto [offset, scale] = onehot_affine(n_classes);
  for (double& x : v) x = (x - offset) / scale;
  return v;
}

std::int32_t decode_onehot(std::span<const double> values) {
  if (values.empty()) throw std::domain_error("empty one-hot vector");
  std::size_t best = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) throw std::domain_error("NaN one-hot activation");
    if (values[i] > values[best]) best = i;
  }
  return static_cast<std::int32_t>(best);
}

std::array<double, 3> rgb_palette_color(int index) {
  check_class(index, kRgbPaletteSize);
  auto level = [](int v) { return -1.0 + 2.0 * v / 3.0; };
  return {level(index / 16), level((index / 4) % 4), level(index % 4)};
}

std::array<double, 3> encode_rgb(std::int64_t c, int n_classes) {
  if (n_classes > kRgbPaletteSize) throw std::domain_error("rgb palette holds at most 64 classes");
  check_class(c, n_classes);
  return rgb_palette_color(static_cast<int>(c));
}

std::int32_t decode_rgb(std::span<const double> rgb, int n_classes) {
  if (rgb.size() != 3) throw std::domain_error("rgb decode needs 3 channels");
  if (n_classes < 1 || n_classes > kRgbPaletteSize) throw std::domain_error("bad rgb class count");
  std::int32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n_classes; ++k) {
    const auto col = rgb_palette_color(k);
    double d = 0.0;
    for (int i = 0; i < 3; ++i) d += (rgb[i] - col[i]) * (rgb[i] - col[i]);
    if (std::isnan(d)) throw std::domain_error("NaN rgb activation");
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

ChannelTensor encode_map(const LabelMap& labels, const Encoding& enc) {
  enc.validate();
  const int channels = enc.channels();
  ChannelTensor out(1, channels, labels.height(), labels.width());
  const std::size_t plane = out.plane();
  // Encode each distinct class once.
  std::vector<std::vector<double>> cache(static_cast<std::size_t>(enc.n_classes));
  for (std::size_t p = 0; p < plane; ++p) {
    const std::int32_t c = labels[p];
    if (c < 0 || c >= enc.n_classes) {
      throw std::domain_error("label " + std::to_string(c) + " overflows encoding with " +
                              std::to_string(enc.n_classes) + " classes");
    }
    auto& code = cache[static_cast<std::size_t>(c)];
    if (code.empty()) {
      switch (enc.kind) {
        case EncodingKind::AnalogBits: code = encode_bits(c, channels); break;
        case EncodingKind::OneHot: code = encode_onehot(c, enc.n_classes); break;
        case EncodingKind::Rgb: {
          const auto rgb = encode_rgb(c, enc.n_classes);
          code.assign(rgb.begin(), rgb.end());
          break;
        }
      }
    }
    for (int k = 0; k < channels; ++k) out[k * plane + p] = static_cast<float>(code[k]);
  }
  return out;
}

LabelMap decode_map(const ChannelTensor& values, const Encoding& enc, int index) {
  enc.validate();
  const int channels = enc.channels();
  if (values.channels() != channels) {
    throw std::domain_error("channel count " + std::to_string(values.channels()) +
                            " does not match encoding (" + std::to_string(channels) + ")");
  }
  LabelMap out(values.height(), values.width());
  const std::size_t plane = values.plane();
  const auto sample = values.sample(index);
  std::vector<double> pixel(static_cast<std::size_t>(channels));
  for (std::size_t p = 0; p < plane; ++p) {
    for (int k = 0; k < channels; ++k) pixel[k] = sample[k * plane + p];
    switch (enc.kind) {
      case EncodingKind::AnalogBits: out[p] = decode_bits(std::span<const double>(pixel)); break;
      case EncodingKind::OneHot: out[p] = decode_onehot(pixel); break;
      case EncodingKind::Rgb: out[p] = decode_rgb(pixel, enc.n_classes); break;
    }
  }
  return out;
}

}  // namespace segdiff
