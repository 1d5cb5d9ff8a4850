#include "segdiff/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "segdiff/errors.hpp"
#include "segdiff/metrics.hpp"

namespace segdiff {

void TrainConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (!(lr_peak >= 0.0)) throw ValidationError("lr_peak must be non-negative");
  if (warmup_iters < 0 || warmup_iters >= iterations) {
    throw ValidationError("warmup_iters must lie in [0, iterations)");
  }
  if (decay_tail_iters < 0 || decay_tail_iters > iterations - warmup_iters) {
    throw ValidationError("decay_tail_iters must fit after the warmup");
  }
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (!(cond_drop_prob >= 0.0 && cond_drop_prob <= 1.0)) {
    throw ValidationError("cond_drop_prob must lie in [0, 1]");
  }
  if (eval_every < 1) throw ValidationError("eval_every must be positive");
  if (eval_images < 0) throw ValidationError("eval_images must be non-negative");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"iterations", cfg.iterations},         {"batch_size", cfg.batch_size},
          {"lr_peak", cfg.lr_peak},               {"warmup_iters", cfg.warmup_iters},
          {"decay_tail_iters", cfg.decay_tail_iters}, {"weight_decay", cfg.weight_decay},
          {"cond_drop_prob", cfg.cond_drop_prob}, {"eval_every", cfg.eval_every},
          {"eval_images", cfg.eval_images},       {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr_peak = j.value("lr_peak", cfg.lr_peak);
  cfg.warmup_iters = j.value("warmup_iters", cfg.warmup_iters);
  cfg.decay_tail_iters = j.value("decay_tail_iters", cfg.decay_tail_iters);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.cond_drop_prob = j.value("cond_drop_prob", cfg.cond_drop_prob);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.eval_images = j.value("eval_images", cfg.eval_images);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

double lr_at(std::int64_t iter, const TrainConfig& cfg) {
  if (iter < cfg.warmup_iters) {
    return cfg.lr_peak * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
  }
  const std::int64_t tail_start = cfg.iterations - cfg.decay_tail_iters;
  if (cfg.decay_tail_iters > 0 && iter >= tail_start) {
    if (cfg.decay_tail_iters == 1) return 0.0;
    const double progress =
        static_cast<double>(iter - tail_start) / static_cast<double>(cfg.decay_tail_iters - 1);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
  }
  return cfg.lr_peak;
}

AdamW::AdamW(nn::ParamList<float> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto* p : params_) {
    m_.emplace_back(p->size(), 0.0f);
    v_.emplace_back(p->size(), 0.0f);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const float fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
  const float step = static_cast<float>(lr / c1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float eps = static_cast<float>(cfg_.eps);
  const float decay = static_cast<float>(lr * cfg_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& theta = params_[k]->value;
    const auto& g = params_[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = fb1 * m[i] + (1.0f - fb1) * g[i];
      v[i] = fb2 * v[i] + (1.0f - fb2) * g[i] * g[i];
      if (lr == 0.0) continue;
      theta[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps) + decay * theta[i];
    }
  }
}

OptimizerState AdamW::state() const {
  OptimizerState s;
  s.step = t_;
  for (const auto& m : m_) s.m.insert(s.m.end(), m.begin(), m.end());
  for (const auto& v : v_) s.v.insert(s.v.end(), v.begin(), v.end());
  return s;
}

void AdamW::restore(const OptimizerState& s) {
  std::size_t total = 0;
  for (const auto& m : m_) total += m.size();
  if (s.m.size() != total || s.v.size() != total) {
    throw ValidationError("optimizer state does not match the parameter layout");
  }
  t_ = s.step;
  std::size_t off = 0;
  for (std::size_t k = 0; k < m_.size(); ++k) {
    std::copy_n(s.m.begin() + static_cast<std::ptrdiff_t>(off), m_[k].size(), m_[k].begin());
    std::copy_n(s.v.begin() + static_cast<std::ptrdiff_t>(off), v_[k].size(), v_[k].begin());
    off += m_[k].size();
  }
}

TrainingData prepare_training_data(const std::vector<Sample>& samples, const Encoding& enc,
                                   LapMode mode, const PaletteGrid& grid) {
  if (samples.empty()) throw ValidationError("training data is empty");
  enc.validate();
  const int h = samples[0].entities.height(), w = samples[0].entities.width();
  const int n = static_cast<int>(samples.size());
  TrainingData data;
  data.images = Tensor<float>(n, kImageChannels, h, w);
  data.targets = Tensor<float>(n, enc.channels(), h, w);
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    if (s.entities.height() != h || s.entities.width() != w || s.image.channels() != kImageChannels) {
      throw ValidationError("training scenes must share one size and have RGB images");
    }
    const LabelMap classes = remap_labelmap(s.entities, grid, mode, enc.n_classes);
    const ChannelTensor code = encode_map(classes, enc);
    std::copy(s.image.values().begin(), s.image.values().end(), data.images.sample(i).begin());
    std::copy(code.values().begin(), code.values().end(), data.targets.sample(i).begin());
    data.entities.push_back(s.entities);
  }
  return data;
}

Batch draw_batch(const TrainingData& data, const TrainConfig& cfg, std::int64_t iter) {
  if (data.size() == 0) throw ValidationError("training data is empty");
  const int b = cfg.batch_size;
  const auto& tg = data.targets;
  Batch batch;
  batch.images = Tensor<float>(b, kImageChannels, tg.height(), tg.width());
  batch.x0 = Tensor<float>(b, tg.channels(), tg.height(), tg.width());
  batch.eps = Tensor<float>(b, tg.channels(), tg.height(), tg.width());
  batch.t.resize(static_cast<std::size_t>(b));
  batch.indices.resize(static_cast<std::size_t>(b));
  batch.dropped.resize(static_cast<std::size_t>(b));

  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> time(kMinTrainTime, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (int e = 0; e < b; ++e) {
    Rng rng = make_stream(cfg.seed, 0x7ba1, static_cast<std::uint64_t>(iter), static_cast<std::uint64_t>(e));
    const auto idx = pick(rng);
    const auto ue = static_cast<std::size_t>(e);
    batch.indices[ue] = idx;
    batch.t[ue] = static_cast<float>(time(rng));
    batch.dropped[ue] = coin(rng) < cfg.cond_drop_prob;
    const auto src_x0 = tg.sample(static_cast<int>(idx));
    std::copy(src_x0.begin(), src_x0.end(), batch.x0.sample(e).begin());
    if (!batch.dropped[ue]) {
      const auto src_img = data.images.sample(static_cast<int>(idx));
      std::copy(src_img.begin(), src_img.end(), batch.images.sample(e).begin());
    }
    for (float& v : batch.eps.sample(e)) v = normal(rng);
  }
  return batch;
}

double train_step(UNet<float>& net, AdamW& opt, const TrainingData& data, const TrainConfig& cfg,
                  const NoiseSchedule& sched, const LossWeighting& weighting, std::int64_t iter) {
  const Batch batch = draw_batch(data, cfg, iter);
  const Tensor<float> x_t = forward_sample_batch(batch.x0, batch.eps, batch.t, sched);
  net.zero_grad();
  const Tensor<float> out = net.forward_train(x_t, batch.images, batch.t);
  const auto terms = weighted_x_loss<float>(net.prediction_type(), x_t, out, batch.x0, batch.t, sched,
                                            weighting, true);
  net.backward(terms.grad_output);
  opt.step(lr_at(iter, cfg));
  return terms.loss;
}

EvalScores evaluate_segmentation(const Denoiser& net, const std::vector<Sample>& scenes,
                                 const SamplerConfig& sampler, const NoiseSchedule& sched,
                                 const Encoding& enc, int batch_size) {
  if (scenes.empty()) return {};
  batch_size = std::max(1, batch_size);
  EvalScores sum;
  const int h = scenes[0].image.height(), w = scenes[0].image.width();
  for (std::size_t first = 0; first < scenes.size(); first += static_cast<std::size_t>(batch_size)) {
    const int n = static_cast<int>(std::min<std::size_t>(batch_size, scenes.size() - first));
    Tensor<float> images(n, kImageChannels, h, w);
    for (int i = 0; i < n; ++i) {
      const auto src = scenes[first + static_cast<std::size_t>(i)].image.values();
      std::copy(src.begin(), src.end(), images.sample(i).begin());
    }
    const SampleResult r = sample(net, images, sampler, sched, enc, first);
    for (int i = 0; i < n; ++i) {
      const LabelMap& gt = scenes[first + static_cast<std::size_t>(i)].entities;
      sum.ari += ari(gt, r.labels[static_cast<std::size_t>(i)]);
      sum.iou += hungarian_iou(gt, r.labels[static_cast<std::size_t>(i)]).mean_iou;
    }
  }
  const double n = static_cast<double>(scenes.size());
  return {sum.ari / n, sum.iou / n};
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t iter) {
  char name[48];
  std::snprintf(name, sizeof(name), "step_%08lld.sgdf", static_cast<long long>(iter));
  return out_dir / "checkpoints" / name;
}

std::vector<LogRow> fit(UNet<float>& net, AdamW& opt, const TrainingData& data,
                        const TrainConfig& cfg, const NoiseSchedule& sched,
                        const LossWeighting& weighting, const FitOptions& options,
                        std::int64_t start_iter) {
  cfg.validate();
  if (data.size() == 0) throw ValidationError("training data is empty");
  if (start_iter < 0 || start_iter > cfg.iterations) throw ValidationError("resume point outside the run");

  std::error_code ec;
  std::filesystem::create_directories(options.out_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());

  const auto log_path = options.out_dir / "log.csv";
  std::ofstream log;
  if (start_iter == 0) {
    log.open(log_path, std::ios::trunc);
    log << "iter,loss,ari,iou,lr\n";
  } else {
    log.open(log_path, std::ios::app);
  }
  if (!log) throw IoError("cannot open " + log_path.string());
  log.precision(9);

  auto snapshot = [&](std::int64_t iter, bool with_optimizer) {
    Checkpoint ckpt;
    ckpt.spec = options.spec;
    ckpt.iteration = iter;
    ckpt.provenance = options.provenance;
    ckpt.parameters = flatten_parameters(net);
    if (with_optimizer) ckpt.optimizer = opt.state();
    return ckpt;
  };

  std::vector<LogRow> rows;
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  for (std::int64_t iter = start_iter; iter < cfg.iterations; ++iter) {
    loss_sum += train_step(net, opt, data, cfg, sched, weighting, iter);
    ++loss_count;
    const std::int64_t done = iter + 1;
    if (done % cfg.eval_every != 0) continue;

    LogRow row{done, loss_sum / static_cast<double>(loss_count), 0.0, 0.0, lr_at(iter, cfg)};
    if (options.evaluate) {
      const EvalScores s = options.evaluate(net);
      row.ari = s.ari;
      row.iou = s.iou;
    }
    log << row.iter << ',' << row.loss << ',' << row.ari << ',' << row.iou << ',' << row.lr << '\n';
    log.flush();
    if (!log) throw IoError("failed to append to " + log_path.string());
    save_checkpoint(checkpoint_path(options.out_dir, done), snapshot(done, true));
    rows.push_back(row);
    if (options.on_row) options.on_row(row);
    loss_sum = 0.0;
    loss_count = 0;
  }
  save_checkpoint(options.out_dir / "final.sgdf", snapshot(cfg.iterations, true));
  return rows;
}

}  // namespace segdiff
