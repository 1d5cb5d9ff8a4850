#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "segdiff/checkpoint.hpp"
#include "segdiff/datagen.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/palette.hpp"
#include "segdiff/trainer.hpp"

namespace segdiff::cli {

/// The full description of one experiment. It is echoed as config.json next to
/// every artifact the tool writes.
struct ExperimentConfig {
  EncodingKind encoding = EncodingKind::AnalogBits;
  int n_bits = 4;  // class count is 2^n_bits for every encoding
  LapMode lap_mode = LapMode::Similar;
  std::uint64_t palette_seed = 0;
  double input_scale = 0.1;
  LossWeighting weighting;
  PredictionType prediction = PredictionType::X;
  NetConfig net;
  TrainConfig train;
  SamplerConfig sampler;
  std::filesystem::path dataset = "data";
  SceneConfig scene;
  DatasetSplits splits;
  std::filesystem::path out = "runs/default";

  int n_classes() const { return 1 << n_bits; }
  Encoding encoding_spec() const { return {encoding, n_classes()}; }
  ModelSpec model_spec() const;
  PaletteGrid palette() const;
  NoiseSchedule schedule() const { return NoiseSchedule(input_scale); }

  /// Cross-field consistency; throws ValidationError.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);
void write_config(const std::filesystem::path& dir, const ExperimentConfig& cfg);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace segdiff::cli
