#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/bitcodec.hpp"
#include "segdiff/schedule.hpp"
#include "segdiff/unet.hpp"

namespace segdiff {

/// Everything needed to rebuild a denoiser and use it for sampling.
struct ModelSpec {
  NetConfig net;
  PredictionType prediction = PredictionType::X;
  Encoding encoding{EncodingKind::AnalogBits, 16};
  double input_scale = 0.1;
  LossWeighting weighting;

  int state_channels() const { return encoding.channels(); }
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

struct OptimizerState {
  std::int64_t step = 0;
  std::vector<float> m;
  std::vector<float> v;
  bool operator==(const OptimizerState&) const = default;
};

/// File layout: "SGDF", u32 version, u32 header length, JSON header, u64
/// parameter count, little-endian f32 parameters in declaration order, then an
/// optional optimizer section (u64 step, f32 m, f32 v) flagged in the header.
struct Checkpoint {
  ModelSpec spec;
  std::int64_t iteration = 0;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<float> parameters;
  std::optional<OptimizerState> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError on malformed files and on a version other than kCheckpointVersion.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<float> flatten_parameters(const UNet<float>& net);
void assign_parameters(UNet<float>& net, std::span<const float> values);

/// Builds the network a spec describes with freshly initialized weights.
std::unique_ptr<UNet<float>> build_network(const ModelSpec& spec, std::uint64_t init_seed);
/// Builds the network and loads the checkpoint's weights.
std::unique_ptr<UNet<float>> restore_network(const Checkpoint& ckpt);

}  // namespace segdiff
