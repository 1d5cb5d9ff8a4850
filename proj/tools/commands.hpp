#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace segdiff::cli {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumeric = 3;

/// Runs fn, reporting any error on stderr and translating it to an exit code.
int run_guarded(const std::function<void()>& fn);

void cmd_datagen(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct TrainOutcome {
  std::vector<LogRow> rows;
  std::filesystem::path final_checkpoint;
};

using Progress = std::function<void(const LogRow&)>;

/// Trains one model on in-memory scenes. `val` feeds the periodic log rows.
TrainOutcome run_training(const ExperimentConfig& cfg, const std::vector<Sample>& train,
                          const std::vector<Sample>& val, const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& resume = std::nullopt,
                          const Progress& progress = {});

/// Loads the configured dataset and trains into out_dir.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume = std::nullopt);

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path images;
  std::filesystem::path out;
  SamplerConfig sampler;
  int num_samples = 1;
};

/// Sampler seed of the k-th draw per image; draw 0 uses the base seed.
std::uint64_t draw_seed(std::uint64_t base, int k);

/// Writes one class-index label map per input image ({stem}.png, or
/// {stem}_s{k}.png when several samples are requested). Returns the files written.
std::vector<std::filesystem::path> cmd_sample(const SampleOptions& opt, const ExperimentConfig& cfg);

struct EvalRow {
  std::string name;
  double ari = 0.0;
  double iou = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_ari = 0.0;
  double mean_iou = 0.0;
};

/// Scores every PNG in gt_dir against the same file name in pred_dir and writes
/// out_dir/eval.csv (one row per image, then a "mean" row).
EvalReport cmd_eval(const std::filesystem::path& gt_dir, const std::filesystem::path& pred_dir,
                    const std::filesystem::path& out_dir, const ExperimentConfig& cfg);

enum class SweepKind { Timesteps, Guidance, InputScale, LapMode, Encoding, PredLoss, BestOfN };

SweepKind parse_sweep_kind(const std::string& name);
std::string to_string(SweepKind kind);
/// Default grid of a sweep, as strings in CSV order.
std::vector<std::string> default_sweep_values(SweepKind kind);
bool is_training_sweep(SweepKind kind);

struct SweepOptions {
  SweepKind kind = SweepKind::Timesteps;
  std::vector<std::string> values;             // empty: default grid
  std::optional<std::filesystem::path> checkpoint;  // sampling sweeps; default <cfg.out>/final.sgdf
  std::filesystem::path grid_dir;              // training sweeps; default <cfg.out>/grid
  int seeds = 1;
  bool train_missing = false;
  int eval_images = 200;
};

struct SweepRow {
  std::vector<std::string> key;  // value(s) of the swept variable
  double ari = 0.0;
  double iou = 0.0;
  int seeds = 1;
};

/// Applies one grid value of a training sweep to a config.
ExperimentConfig apply_grid_value(ExperimentConfig cfg, SweepKind kind, const std::string& value);

/// Runs the sweep and writes out_dir/sweep_<kind>.csv. Rows hold medians over seeds.
std::vector<SweepRow> cmd_sweep(const SweepOptions& opt, const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir);

/// Best-of-n curve on a fixed model: entry n-1 is the mean over scenes of the
/// best ARI among the first n draws, with the IoU of that draw.
std::vector<EvalScores> best_of_n_curve(const Denoiser& net, const std::vector<Sample>& scenes,
                                        const SamplerConfig& sampler, const NoiseSchedule& sched,
                                        const Encoding& enc, int max_n);

double median(std::vector<double> v);

}  // namespace segdiff::cli
