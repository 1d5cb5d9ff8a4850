#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/checkpoint.hpp"
#include "segdiff/datagen.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/palette.hpp"
#include "segdiff/unet.hpp"

namespace segdiff {

struct TrainConfig {
  std::int64_t iterations = 20000;
  int batch_size = 16;
  double lr_peak = 1e-4;
  std::int64_t warmup_iters = 1000;
  std::int64_t decay_tail_iters = 5000;
  double weight_decay = 1e-4;
  double cond_drop_prob = 0.05;
  std::int64_t eval_every = 1000;
  int eval_images = 16;  // validation scenes scored at each log row
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup from 0, constant peak, cosine decay reaching 0 at iterations - 1.
double lr_at(std::int64_t iter, const TrainConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay. Moments are kept in float so a saved state
/// restores bit-exactly.
class AdamW {
 public:
  AdamW(nn::ParamList<float> params, AdamWConfig cfg);

  void step(double lr);
  OptimizerState state() const;
  void restore(const OptimizerState& s);
  std::int64_t steps() const { return t_; }

 private:
  nn::ParamList<float> params_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

/// Images and encoded class targets of a split, ready for batching.
struct TrainingData {
  Tensor<float> images;   // [N, 3, H, W]
  Tensor<float> targets;  // [N, C, H, W]
  std::vector<LabelMap> entities;

  std::size_t size() const { return entities.size(); }
};

/// Remaps every entity map through the palette and encodes it.
TrainingData prepare_training_data(const std::vector<Sample>& samples, const Encoding& enc,
                                   LapMode mode, const PaletteGrid& grid);

struct Batch {
  Tensor<float> images;
  Tensor<float> x0;
  Tensor<float> eps;
  std::vector<float> t;
  std::vector<std::size_t> indices;
  std::vector<char> dropped;  // image replaced by zeros
};

/// Example e of iteration `iter` draws its index, time, dropout and noise from
/// the stream keyed by (seed, iter, e), independent of every other example.
Batch draw_batch(const TrainingData& data, const TrainConfig& cfg, std::int64_t iter);

/// One optimizer update on the batch of iteration `iter`. Returns the loss
/// before the update. Throws NumericError on a non-finite loss.
double train_step(UNet<float>& net, AdamW& opt, const TrainingData& data, const TrainConfig& cfg,
                  const NoiseSchedule& sched, const LossWeighting& weighting, std::int64_t iter);

struct EvalScores {
  double ari = 0.0;
  double iou = 0.0;
};

/// Mean ARI and Hungarian IoU of one sample per scene against its entity map.
EvalScores evaluate_segmentation(const Denoiser& net, const std::vector<Sample>& scenes,
                                 const SamplerConfig& sampler, const NoiseSchedule& sched,
                                 const Encoding& enc, int batch_size = 8);

struct LogRow {
  std::int64_t iter = 0;
  double loss = 0.0;
  double ari = 0.0;
  double iou = 0.0;
  double lr = 0.0;
};

struct FitOptions {
  std::filesystem::path out_dir;
  ModelSpec spec;
  nlohmann::json provenance = nlohmann::json::object();
  std::function<EvalScores(const UNet<float>&)> evaluate;  // optional
  std::function<void(const LogRow&)> on_row;                // optional progress hook
};

/// Trains from `start_iter` to cfg.iterations. Every eval_every iterations it
/// appends a row (mean loss since the previous row, validation scores, lr) to
/// out_dir/log.csv and writes out_dir/checkpoints/step_<iter>.sgdf; the final
/// weights also go to out_dir/final.sgdf.
std::vector<LogRow> fit(UNet<float>& net, AdamW& opt, const TrainingData& data,
                        const TrainConfig& cfg, const NoiseSchedule& sched,
                        const LossWeighting& weighting, const FitOptions& options,
                        std::int64_t start_iter = 0);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t iter);

}  // namespace segdiff
