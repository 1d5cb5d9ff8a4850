#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "segdiff/errors.hpp"
#include "segdiff/metrics.hpp"

namespace segdiff::cli {

int run_guarded(const std::function<void()>& fn) {
  try {
    fn();
    return kExitOk;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::logic_error& e) {
    // ValidationError, CapacityError and the codec's domain errors
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

namespace {

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor<float> stack_images(const std::vector<Sample>& scenes, std::size_t first, int n) {
  const int h = scenes[first].image.height(), w = scenes[first].image.width();
  Tensor<float> images(n, kImageChannels, h, w);
  for (int i = 0; i < n; ++i) {
    const auto src = scenes[first + static_cast<std::size_t>(i)].image.values();
    std::copy(src.begin(), src.end(), images.sample(i).begin());
  }
  return images;
}

void log_progress(const LogRow& r) {
  std::cerr << "iter " << r.iter << "  loss " << r.loss << "  ari " << r.ari << "  iou " << r.iou
            << "  lr " << r.lr << '\n';
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void cmd_datagen(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  write_dataset(out_dir, cfg.scene, cfg.splits);
  write_config(out_dir, cfg);
}

TrainOutcome run_training(const ExperimentConfig& cfg, const std::vector<Sample>& train,
                          const std::vector<Sample>& val, const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& resume,
                          const Progress& progress) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training split is empty");
  for (const Sample& s : train) {
    if (s.entities.height() != cfg.scene.size || s.entities.width() != cfg.scene.size) {
      throw ValidationError("training scenes do not match the configured size " +
                            std::to_string(cfg.scene.size));
    }
  }
  const ModelSpec spec = cfg.model_spec();
  const Encoding enc = cfg.encoding_spec();
  const TrainingData data = prepare_training_data(train, enc, cfg.lap_mode, cfg.palette());

  auto net = build_network(spec, cfg.train.seed);
  AdamW opt(net->parameters(), {0.9, 0.999, 1e-8, cfg.train.weight_decay});
  std::int64_t start = 0;
  if (resume) {
    const Checkpoint ck = load_checkpoint(*resume);
    if (!(ck.spec == spec)) throw ValidationError("resume checkpoint was trained with a different model spec");
    if (!ck.optimizer) throw ValidationError("resume checkpoint carries no optimizer state");
    assign_parameters(*net, ck.parameters);
    opt.restore(*ck.optimizer);
    start = ck.iteration;
  }
  write_config(out_dir, cfg);

  const NoiseSchedule sched = cfg.schedule();
  std::vector<Sample> val_subset(val.begin(), val.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(
                                                               val.size(), static_cast<std::size_t>(cfg.train.eval_images))));
  FitOptions fo;
  fo.out_dir = out_dir;
  fo.spec = spec;
  fo.provenance = to_json(cfg);
  if (!val_subset.empty()) {
    fo.evaluate = [&](const UNet<float>& model) {
      return evaluate_segmentation(model, val_subset, cfg.sampler, sched, enc);
    };
  }
  fo.on_row = progress;
  TrainOutcome out;
  out.rows = fit(*net, opt, data, cfg.train, sched, cfg.weighting, fo, start);
  out.final_checkpoint = out_dir / "final.sgdf";
  return out;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume) {
  cfg.validate();
  const DatasetMeta meta = read_dataset_meta(cfg.dataset);
  if (meta.scene.size != cfg.scene.size) {
    throw ValidationError("dataset scenes are " + std::to_string(meta.scene.size) + " px, config expects " +
                          std::to_string(cfg.scene.size));
  }
  const auto train = load_split(cfg.dataset, "train");
  const auto val = load_split(cfg.dataset, "val", static_cast<std::size_t>(cfg.train.eval_images));
  return run_training(cfg, train, val, out_dir, resume, log_progress);
}

std::uint64_t draw_seed(std::uint64_t base, int k) {
  return k == 0 ? base : stream_key(base, 0x5a3, static_cast<std::uint64_t>(k));
}

std::vector<std::filesystem::path> cmd_sample(const SampleOptions& opt, const ExperimentConfig& cfg) {
  opt.sampler.validate();
  if (opt.num_samples < 1) throw ValidationError("--num-samples must be >= 1");
  const Checkpoint ck = load_checkpoint(opt.checkpoint);
  const auto net = restore_network(ck);
  const NoiseSchedule sched(ck.spec.input_scale);
  const auto files = list_pngs(opt.images);
  if (files.empty()) throw IoError("no PNG images in " + opt.images.string());
  make_dirs(opt.out);

  std::vector<Sample> scenes;
  for (const auto& f : files) {
    Sample s;
    s.image = load_image(f);
    if (s.image.height() % ck.spec.net.spatial_multiple() || s.image.width() % ck.spec.net.spatial_multiple()) {
      throw ValidationError(f.string() + ": image sides must be multiples of " +
                            std::to_string(ck.spec.net.spatial_multiple()));
    }
    scenes.push_back(std::move(s));
  }

  std::vector<std::filesystem::path> written;
  for (int k = 0; k < opt.num_samples; ++k) {
    SamplerConfig sc = opt.sampler;
    sc.seed = draw_seed(opt.sampler.seed, k);
    std::size_t first = 0;
    while (first < scenes.size()) {
      // batch consecutive images of equal size
      int n = 1;
      while (n < 8 && first + static_cast<std::size_t>(n) < scenes.size() &&
             scenes[first + static_cast<std::size_t>(n)].image.same_shape(scenes[first].image)) {
        ++n;
      }
      const SampleResult r = sample(*net, stack_images(scenes, first, n), sc, sched, ck.spec.encoding, first);
      for (int i = 0; i < n; ++i) {
        const auto& src = files[first + static_cast<std::size_t>(i)];
        const std::string stem = src.stem().string();
        const auto path = opt.out / (opt.num_samples == 1 ? stem + ".png" : stem + "_s" + std::to_string(k) + ".png");
        save_labelmap(path, r.labels[static_cast<std::size_t>(i)]);
        written.push_back(path);
      }
      first += static_cast<std::size_t>(n);
    }
  }

  ExperimentConfig echo = cfg;
  echo.sampler = opt.sampler;
  nlohmann::json j = to_json(echo);
  j["checkpoint"] = {{"path", opt.checkpoint.string()}, {"iteration", ck.iteration},
                     {"model", to_json(ck.spec)}, {"provenance", ck.provenance}};
  j["num_samples"] = opt.num_samples;
  write_json(opt.out / "config.json", j);
  return written;
}

EvalReport cmd_eval(const std::filesystem::path& gt_dir, const std::filesystem::path& pred_dir,
                    const std::filesystem::path& out_dir, const ExperimentConfig& cfg) {
  const auto gts = list_pngs(gt_dir);
  if (gts.empty()) throw IoError("no ground-truth PNGs in " + gt_dir.string());
  std::vector<std::string> missing;
  for (const auto& g : gts) {
    if (!std::filesystem::exists(pred_dir / g.filename())) missing.push_back(g.filename().string());
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw IoError("missing predictions in " + pred_dir.string() + ": " + list);
  }

  EvalReport rep;
  for (const auto& g : gts) {
    const LabelMap gt = load_labelmap(g);
    const LabelMap pred = load_labelmap(pred_dir / g.filename());
    if (!gt.same_shape(pred)) throw ValidationError(g.filename().string() + ": prediction shape differs");
    rep.rows.push_back({g.filename().string(), ari(gt, pred), hungarian_iou(gt, pred).mean_iou});
    rep.mean_ari += rep.rows.back().ari;
    rep.mean_iou += rep.rows.back().iou;
  }
  rep.mean_ari /= static_cast<double>(rep.rows.size());
  rep.mean_iou /= static_cast<double>(rep.rows.size());

  make_dirs(out_dir);
  std::ofstream csv(out_dir / "eval.csv", std::ios::trunc);
  csv << std::setprecision(10) << "image,ari,iou\n";
  for (const auto& r : rep.rows) csv << r.name << ',' << r.ari << ',' << r.iou << '\n';
  csv << "mean," << rep.mean_ari << ',' << rep.mean_iou << '\n';
  if (!csv) throw IoError("cannot write " + (out_dir / "eval.csv").string());
  nlohmann::json j = to_json(cfg);
  j["eval"] = {{"gt", gt_dir.string()}, {"pred", pred_dir.string()}};
  write_json(out_dir / "config.json", j);
  return rep;
}

SweepKind parse_sweep_kind(const std::string& name) {
  static const std::map<std::string, SweepKind> kinds = {
      {"timesteps", SweepKind::Timesteps}, {"guidance", SweepKind::Guidance},
      {"input_scale", SweepKind::InputScale}, {"lap_mode", SweepKind::LapMode},
      {"encoding", SweepKind::Encoding}, {"pred_loss", SweepKind::PredLoss},
      {"best_of_n", SweepKind::BestOfN}};
  const auto it = kinds.find(name);
  if (it == kinds.end()) {
    throw ValidationError("unknown sweep '" + name +
                          "' (expected timesteps, guidance, input_scale, lap_mode, encoding, pred_loss, best_of_n)");
  }
  return it->second;
}

std::string to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::Timesteps: return "timesteps";
    case SweepKind::Guidance: return "guidance";
    case SweepKind::InputScale: return "input_scale";
    case SweepKind::LapMode: return "lap_mode";
    case SweepKind::Encoding: return "encoding";
    case SweepKind::PredLoss: return "pred_loss";
    case SweepKind::BestOfN: return "best_of_n";
  }
  return "?";
}

std::vector<std::string> default_sweep_values(SweepKind kind) {
  switch (kind) {
    case SweepKind::Timesteps: return {"1", "2", "4", "8", "16", "32"};
    case SweepKind::Guidance: return {"0", "0.5", "1", "1.5", "2", "2.5", "3"};
    case SweepKind::InputScale: return {"0.02", "0.05", "0.1", "0.2", "0.5", "1"};
    case SweepKind::LapMode: return {"none", "different", "random", "similar"};
    case SweepKind::Encoding: return {"onehot", "rgb", "bits"};
    case SweepKind::PredLoss: {
      std::vector<std::string> v;
      for (const char* p : {"x", "eps", "v"}) {
        for (const char* w : {"sigmoid", "constant", "snr_eps"}) v.push_back(std::string(p) + "/" + w);
      }
      return v;
    }
    case SweepKind::BestOfN: return {"1", "2", "4", "8"};
  }
  return {};
}

bool is_training_sweep(SweepKind kind) {
  return kind == SweepKind::InputScale || kind == SweepKind::LapMode || kind == SweepKind::Encoding ||
         kind == SweepKind::PredLoss;
}

namespace {

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("bad " + what + " value '" + s + "'");
  }
}

int parse_count(const std::string& s, const std::string& what) {
  const double v = parse_number(s, what);
  if (v < 1 || v != static_cast<int>(v)) throw ValidationError(what + " must be a positive integer, got " + s);
  return static_cast<int>(v);
}

std::vector<std::string> key_columns(SweepKind kind) {
  switch (kind) {
    case SweepKind::Timesteps: return {"steps"};
    case SweepKind::Guidance: return {"gw"};
    case SweepKind::InputScale: return {"b"};
    case SweepKind::LapMode: return {"lap_mode"};
    case SweepKind::Encoding: return {"encoding"};
    case SweepKind::PredLoss: return {"prediction", "weighting"};
    case SweepKind::BestOfN: return {"n"};
  }
  return {};
}

std::vector<std::string> split_key(SweepKind kind, const std::string& value) {
  if (kind != SweepKind::PredLoss) return {value};
  const auto slash = value.find('/');
  if (slash == std::string::npos) throw ValidationError("pred_loss values look like x/sigmoid, got " + value);
  return {value.substr(0, slash), value.substr(slash + 1)};
}

}  // namespace

ExperimentConfig apply_grid_value(ExperimentConfig cfg, SweepKind kind, const std::string& value) {
  switch (kind) {
    case SweepKind::InputScale: cfg.input_scale = parse_number(value, "b"); break;
    case SweepKind::LapMode: cfg.lap_mode = parse_lap_mode(value); break;
    case SweepKind::Encoding: cfg.encoding = parse_encoding_kind(value); break;
    case SweepKind::PredLoss: {
      const auto k = split_key(kind, value);
      cfg.prediction = parse_prediction_type(k[0]);
      cfg.weighting.kind = parse_weighting_kind(k[1]);
      break;
    }
    default: throw ValidationError(to_string(kind) + " is not a training sweep");
  }
  cfg.validate();
  return cfg;
}

std::vector<EvalScores> best_of_n_curve(const Denoiser& net, const std::vector<Sample>& scenes,
                                        const SamplerConfig& sampler, const NoiseSchedule& sched,
                                        const Encoding& enc, int max_n) {
  if (max_n < 1) throw ValidationError("best-of-n needs n >= 1");
  // draws[k][i]: draw k of scene i
  std::vector<std::vector<LabelMap>> draws(static_cast<std::size_t>(max_n));
  for (int k = 0; k < max_n; ++k) {
    SamplerConfig sc = sampler;
    sc.seed = draw_seed(sampler.seed, k);
    for (std::size_t first = 0; first < scenes.size(); first += 8) {
      const int n = static_cast<int>(std::min<std::size_t>(8, scenes.size() - first));
      SampleResult r = sample(net, stack_images(scenes, first, n), sc, sched, enc, first);
      for (auto& l : r.labels) draws[static_cast<std::size_t>(k)].push_back(std::move(l));
    }
  }
  std::vector<EvalScores> curve(static_cast<std::size_t>(max_n));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::vector<LabelMap> mine;
    for (int k = 0; k < max_n; ++k) {
      mine.push_back(draws[static_cast<std::size_t>(k)][i]);
      const BestOfN b = best_of_n(scenes[i].entities, mine);
      curve[static_cast<std::size_t>(k)].ari += b.ari;
      curve[static_cast<std::size_t>(k)].iou += hungarian_iou(scenes[i].entities, mine[b.index]).mean_iou;
    }
  }
  for (auto& c : curve) {
    c.ari /= static_cast<double>(scenes.size());
    c.iou /= static_cast<double>(scenes.size());
  }
  return curve;
}

std::vector<SweepRow> cmd_sweep(const SweepOptions& opt, const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir) {
  cfg.validate();
  if (opt.seeds < 1) throw ValidationError("--seeds must be >= 1");
  if (opt.eval_images < 1) throw ValidationError("--eval-images must be >= 1");
  const auto values = opt.values.empty() ? default_sweep_values(opt.kind) : opt.values;
  const auto scenes = load_split(cfg.dataset, "test", static_cast<std::size_t>(opt.eval_images));
  if (scenes.empty()) throw ValidationError("test split is empty");

  std::vector<SweepRow> rows;
  if (!is_training_sweep(opt.kind)) {
    const auto ckpt_path = opt.checkpoint.value_or(cfg.out / "final.sgdf");
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const auto net = restore_network(ck);
    const NoiseSchedule sched(ck.spec.input_scale);
    if (opt.kind == SweepKind::BestOfN) {
      int max_n = 0;
      for (const auto& v : values) max_n = std::max(max_n, parse_count(v, "n"));
      const auto curve = best_of_n_curve(*net, scenes, cfg.sampler, sched, ck.spec.encoding, max_n);
      for (const auto& v : values) {
        const auto& c = curve[static_cast<std::size_t>(parse_count(v, "n") - 1)];
        rows.push_back({{v}, c.ari, c.iou, 1});
      }
    } else {
      for (const auto& v : values) {
        SamplerConfig sc = cfg.sampler;
        if (opt.kind == SweepKind::Timesteps) sc.steps = parse_count(v, "steps");
        else sc.guidance_weight = parse_number(v, "gw");
        const EvalScores s = evaluate_segmentation(*net, scenes, sc, sched, ck.spec.encoding);
        rows.push_back({{v}, s.ari, s.iou, 1});
        std::cerr << to_string(opt.kind) << ' ' << v << ": ari " << s.ari << " iou " << s.iou << '\n';
      }
    }
  } else {
    const auto grid_dir = opt.grid_dir.empty() ? cfg.out / "grid" : opt.grid_dir;
    std::vector<Sample> train, val;
    for (const auto& v : values) {
      std::vector<double> aris, ious;
      for (int s = 0; s < opt.seeds; ++s) {
        ExperimentConfig point = apply_grid_value(cfg, opt.kind, v);
        point.train.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
        std::string dirname = v;
        std::replace(dirname.begin(), dirname.end(), '/', '_');
        const auto dir = grid_dir / to_string(opt.kind) / dirname / ("seed_" + std::to_string(point.train.seed));
        point.out = dir;
        const auto ckpt_path = dir / "final.sgdf";
        if (!std::filesystem::exists(ckpt_path)) {
          if (!opt.train_missing) {
            throw IoError("missing checkpoint for grid point " + to_string(opt.kind) + "=" + v + " seed " +
                          std::to_string(point.train.seed) + ": " + ckpt_path.string() + " (pass --train)");
          }
          if (train.empty()) {
            train = load_split(cfg.dataset, "train");
            val = load_split(cfg.dataset, "val", static_cast<std::size_t>(cfg.train.eval_images));
          }
          std::cerr << "training " << to_string(opt.kind) << "=" << v << " seed " << point.train.seed << '\n';
          run_training(point, train, val, dir, std::nullopt, log_progress);
        }
        const Checkpoint ck = load_checkpoint(ckpt_path);
        if (!(ck.spec == point.model_spec())) {
          throw ValidationError(ckpt_path.string() + " was trained with a different model spec");
        }
        const auto net = restore_network(ck);
        const EvalScores sc =
            evaluate_segmentation(*net, scenes, cfg.sampler, point.schedule(), ck.spec.encoding);
        aris.push_back(sc.ari);
        ious.push_back(sc.iou);
      }
      rows.push_back({split_key(opt.kind, v), median(aris), median(ious), opt.seeds});
    }
  }

  make_dirs(out_dir);
  const auto csv_path = out_dir / ("sweep_" + to_string(opt.kind) + ".csv");
  std::ofstream csv(csv_path, std::ios::trunc);
  for (const auto& k : key_columns(opt.kind)) csv << k << ',';
  csv << "ari,iou,seeds\n";
  for (const auto& r : rows) {
    for (const auto& k : r.key) csv << k << ',';
    csv << fmt(r.ari) << ',' << fmt(r.iou) << ',' << r.seeds << '\n';
  }
  if (!csv) throw IoError("cannot write " + csv_path.string());
  nlohmann::json j = to_json(cfg);
  j["sweep"] = {{"kind", to_string(opt.kind)}, {"values", values}, {"seeds", opt.seeds},
                {"eval_images", opt.eval_images}};
  // several sweeps may share one output directory
  write_json(out_dir / ("sweep_" + to_string(opt.kind) + ".config.json"), j);
  return rows;
}

}  // namespace segdiff::cli
