#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "commands.hpp"

using namespace segdiff;
using namespace segdiff::cli;

int main(int argc, char** argv) {
  CLI::App app{"segdiff: diffusion-based agnostic segmentation with analog bits"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_option("--seed", seed, "Run seed (train/sample rng; first train seed for datagen)");
  app.add_option("--out", out, "Output directory");

  auto* datagen = app.add_subcommand("datagen", "Generate the synthetic scene dataset");
  std::optional<std::uint64_t> n_train, n_val, n_test;
  datagen->add_option("--train-count", n_train, "Training scenes");
  datagen->add_option("--val-count", n_val, "Validation scenes");
  datagen->add_option("--test-count", n_test, "Test scenes");

  auto* train = app.add_subcommand("train", "Train a denoiser on the configured dataset");
  std::string resume;
  std::optional<std::int64_t> iterations;
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--iterations", iterations, "Override train.iterations");

  auto* samp = app.add_subcommand("sample", "Segment images with a trained checkpoint");
  std::string checkpoint, images;
  std::optional<int> steps;
  std::optional<double> gw;
  int num_samples = 1;
  bool deterministic = false;
  samp->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  samp->add_option("--images", images, "Directory of RGB PNG images")->required();
  samp->add_option("--steps", steps, "Sampling steps (default 8)");
  samp->add_option("--gw", gw, "Guidance weight (default 1.0)");
  samp->add_option("--num-samples", num_samples, "Samples per image");
  samp->add_flag("--deterministic", deterministic, "Skip the posterior noise");

  auto* eval = app.add_subcommand("eval", "Score predicted label maps against ground truth");
  std::string gt_dir, pred_dir;
  eval->add_option("--gt", gt_dir, "Ground-truth label maps")->required();
  eval->add_option("--pred", pred_dir, "Predicted label maps")->required();

  auto* sweep = app.add_subcommand("sweep", "Run one of the experiment sweeps and write a CSV");
  std::string kind, sweep_ckpt, grid_dir;
  std::vector<std::string> values;
  SweepOptions sopt;
  sweep->add_option("kind", kind, "timesteps | guidance | input_scale | lap_mode | encoding | pred_loss | best_of_n")
      ->required();
  sweep->add_option("--values", values, "Grid values (default: the standard grid)")->delimiter(',');
  sweep->add_option("--checkpoint", sweep_ckpt, "Checkpoint for sampling sweeps");
  sweep->add_option("--grid-dir", grid_dir, "Root of per-grid-point training runs");
  sweep->add_option("--seeds", sopt.seeds, "Training seeds per grid point");
  sweep->add_option("--eval-images", sopt.eval_images, "Test scenes to score");
  sweep->add_flag("--train", sopt.train_missing, "Train grid points that have no checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  return run_guarded([&] {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_experiment(config_path);

    if (datagen->parsed()) {
      if (seed) {
        cfg.splits.train.first = *seed;
        cfg.splits.val.first = *seed + 1'000'000;
        cfg.splits.test.first = *seed + 2'000'000;
      }
      if (n_train) cfg.splits.train.count = *n_train;
      if (n_val) cfg.splits.val.count = *n_val;
      if (n_test) cfg.splits.test.count = *n_test;
      if (!out.empty()) cfg.dataset = out;
      cmd_datagen(cfg, cfg.dataset);
      std::cout << "wrote dataset to " << cfg.dataset.string() << '\n';
    } else if (train->parsed()) {
      if (seed) cfg.train.seed = *seed;
      if (iterations) cfg.train.iterations = *iterations;
      if (!out.empty()) cfg.out = out;
      const auto r = cmd_train(cfg, cfg.out, resume.empty() ? std::nullopt : std::optional(std::filesystem::path(resume)));
      std::cout << "final checkpoint " << r.final_checkpoint.string() << '\n';
    } else if (samp->parsed()) {
      SampleOptions o;
      o.checkpoint = checkpoint;
      o.images = images;
      o.out = out.empty() ? cfg.out / "samples" : std::filesystem::path(out);
      o.sampler = cfg.sampler;
      if (steps) o.sampler.steps = *steps;
      if (gw) o.sampler.guidance_weight = *gw;
      if (seed) o.sampler.seed = *seed;
      if (deterministic) o.sampler.stochastic = false;
      o.num_samples = num_samples;
      const auto files = cmd_sample(o, cfg);
      std::cout << "wrote " << files.size() << " label maps to " << o.out.string() << '\n';
    } else if (eval->parsed()) {
      const auto dir = out.empty() ? cfg.out / "eval" : std::filesystem::path(out);
      const auto rep = cmd_eval(gt_dir, pred_dir, dir, cfg);
      std::cout << "images " << rep.rows.size() << "  mean ari " << rep.mean_ari << "  mean iou " << rep.mean_iou
                << '\n';
    } else if (sweep->parsed()) {
      if (seed) {
        cfg.train.seed = *seed;
        cfg.sampler.seed = *seed;
      }
      sopt.kind = parse_sweep_kind(kind);
      sopt.values = values;
      if (!sweep_ckpt.empty()) sopt.checkpoint = sweep_ckpt;
      sopt.grid_dir = grid_dir;
      const auto dir = out.empty() ? cfg.out / "sweeps" : std::filesystem::path(out);
      const auto rows = cmd_sweep(sopt, cfg, dir);
      std::cout << "wrote " << rows.size() << " rows to " << (dir / ("sweep_" + kind + ".csv")).string() << '\n';
    }
  });
}
