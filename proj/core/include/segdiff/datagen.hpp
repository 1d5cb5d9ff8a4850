#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/tensor.hpp"

namespace segdiff {

enum class ShapeKind { Ellipse, Rectangle, Triangle };

struct SceneConfig {
  int size = 32;
  int min_entities = 2;  // including the background entity
  int max_entities = 12;
  std::array<double, 3> shape_weights = {1.0, 1.0, 1.0};  // ellipse, rectangle, triangle
  double color_jitter = 0.15;  // amplitude of the per-entity linear shading
  double texture_noise = 0.1;  // per-pixel uniform noise amplitude
  int n_bits = 4;

  void validate() const;
  bool operator==(const SceneConfig&) const = default;
};

nlohmann::json to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const nlohmann::json& j);

/// An RGB image in [-1, 1] (shape [1, 3, H, W]) and its full entity partition.
/// Entity 0 is the background; ids are dense.
struct Sample {
  Tensor<float> image;
  LabelMap entities;
};

/// Opaque shapes composited back to front over a background. Pure in (seed, cfg).
/// Pixel values sit on the 8-bit lattice so PNG round trips are exact.
Sample synth_scene(std::uint64_t seed, const SceneConfig& cfg);

/// Aspect-preserving resize so the longer side equals target (bilinear for the
/// image, nearest for labels), then right/bottom padding with image value 0 and
/// `background` in the label map.
Sample pad_to_square(const Tensor<float>& image, const LabelMap& entities, int target,
                     std::int32_t background = 0);

/// [-1, 1] -> {0..255} by round-half-up of (v + 1) * 127.5, clamped.
std::uint8_t to_byte(float v);
float from_byte(std::uint8_t b);
/// Snaps a value onto the 8-bit lattice.
float quantize8(float v);

void save_labelmap(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labelmap(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Tensor<float>& image, int index = 0);
Tensor<float> load_image(const std::filesystem::path& path);

struct SeedRange {
  std::uint64_t first = 0;
  std::uint64_t count = 0;

  std::uint64_t end() const { return first + count; }
  bool operator==(const SeedRange&) const = default;
};

struct DatasetSplits {
  SeedRange train{0, 2000};
  SeedRange val{1'000'000, 200};
  SeedRange test{2'000'000, 200};

  void validate() const;
  bool operator==(const DatasetSplits&) const = default;
};

/// Writes images/{seed}.png, entities/{seed}.png and meta.json under dir.
void write_dataset(const std::filesystem::path& dir, const SceneConfig& cfg,
                   const DatasetSplits& splits);

struct DatasetMeta {
  SceneConfig scene;
  DatasetSplits splits;
};

DatasetMeta read_dataset_meta(const std::filesystem::path& dir);
SeedRange split_range(const DatasetSplits& splits, const std::string& name);
/// Loads every sample of a named split ("train", "val", "test"), optionally only the first `limit`.
std::vector<Sample> load_split(const std::filesystem::path& dir, const std::string& split,
                               std::size_t limit = 0);

}  // namespace segdiff
