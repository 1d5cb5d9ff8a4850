#include "experiment.hpp"

#include <fstream>
#include <set>

#include "segdiff/errors.hpp"

namespace segdiff::cli {

ModelSpec ExperimentConfig::model_spec() const {
  ModelSpec spec;
  spec.net = net;
  spec.prediction = prediction;
  spec.encoding = encoding_spec();
  spec.input_scale = input_scale;
  spec.weighting = weighting;
  return spec;
}

PaletteGrid ExperimentConfig::palette() const { return build_grid(lap_mode, n_bits, palette_seed); }

void ExperimentConfig::validate() const {
  if (n_bits < 1 || n_bits > kMaxBits) throw ValidationError("n_bits must lie in [1, 8]");
  encoding_spec().validate();
  if (lap_mode != LapMode::None && n_bits % 2 != 0) {
    throw ValidationError("LAP mode '" + to_string(lap_mode) + "' needs an even n_bits, got " +
                          std::to_string(n_bits));
  }
  if (!(input_scale > 0.0 && input_scale <= 1.0)) throw ValidationError("input_scale must lie in (0, 1]");
  net.validate();
  train.validate();
  sampler.validate();
  scene.validate();
  splits.validate();
  if (scene.n_bits != n_bits) throw ValidationError("scene.n_bits must equal n_bits");
  if (lap_mode == LapMode::None && scene.max_entities >= n_classes()) {
    throw ValidationError("without a palette, max_entities must stay below 2^n_bits");
  }
  if (scene.size % net.spatial_multiple() != 0) {
    throw ValidationError("scene size must be divisible by " + std::to_string(net.spatial_multiple()));
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  auto range = [](const SeedRange& r) { return nlohmann::json{{"first_seed", r.first}, {"count", r.count}}; };
  return {{"encoding", to_string(c.encoding)},
          {"n_bits", c.n_bits},
          {"lap_mode", to_string(c.lap_mode)},
          {"palette_seed", c.palette_seed},
          {"schedule", {{"input_scale", c.input_scale},
                        {"weighting", to_string(c.weighting.kind)},
                        {"bias", c.weighting.bias}}},
          {"prediction", to_string(c.prediction)},
          {"net", to_json(c.net)},
          {"train", to_json(c.train)},
          {"sampler", {{"steps", c.sampler.steps},
                       {"guidance_weight", c.sampler.guidance_weight},
                       {"stochastic", c.sampler.stochastic},
                       {"seed", c.sampler.seed}}},
          {"data", {{"dataset", c.dataset.string()},
                    {"scene", to_json(c.scene)},
                    {"splits", {{"train", range(c.splits.train)},
                                {"val", range(c.splits.val)},
                                {"test", range(c.splits.test)}}}}},
          {"out", c.out.string()}};
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ValidationError("unknown key '" + k + "' in " + where);
  }
}

SeedRange range_from(const nlohmann::json& j, SeedRange r) {
  r.first = j.value("first_seed", r.first);
  r.count = j.value("count", r.count);
  return r;
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  reject_unknown(j, {"encoding", "n_bits", "lap_mode", "palette_seed", "schedule", "prediction", "net",
                     "train", "sampler", "data", "out"},
                 "config");
  ExperimentConfig c;
  try {
    if (j.contains("encoding")) c.encoding = parse_encoding_kind(j["encoding"].get<std::string>());
    c.n_bits = j.value("n_bits", c.n_bits);
    c.scene.n_bits = c.n_bits;
    if (j.contains("lap_mode")) c.lap_mode = parse_lap_mode(j["lap_mode"].get<std::string>());
    c.palette_seed = j.value("palette_seed", c.palette_seed);
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      reject_unknown(s, {"input_scale", "weighting", "bias"}, "schedule");
      c.input_scale = s.value("input_scale", c.input_scale);
      if (s.contains("weighting")) c.weighting.kind = parse_weighting_kind(s["weighting"].get<std::string>());
      c.weighting.bias = s.value("bias", c.weighting.bias);
    }
    if (j.contains("prediction")) c.prediction = parse_prediction_type(j["prediction"].get<std::string>());
    if (j.contains("net")) c.net = net_config_from_json(j["net"]);
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      reject_unknown(s, {"steps", "guidance_weight", "stochastic", "seed"}, "sampler");
      c.sampler.steps = s.value("steps", c.sampler.steps);
      c.sampler.guidance_weight = s.value("guidance_weight", c.sampler.guidance_weight);
      c.sampler.stochastic = s.value("stochastic", c.sampler.stochastic);
      c.sampler.seed = s.value("seed", c.sampler.seed);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d, {"dataset", "scene", "splits"}, "data");
      c.dataset = d.value("dataset", c.dataset.string());
      if (d.contains("scene")) {
        nlohmann::json scene = d["scene"];
        if (!scene.contains("n_bits")) scene["n_bits"] = c.n_bits;
        c.scene = scene_config_from_json(scene);
      }
      if (d.contains("splits")) {
        const auto& s = d["splits"];
        if (s.contains("train")) c.splits.train = range_from(s["train"], c.splits.train);
        if (s.contains("val")) c.splits.val = range_from(s["val"], c.splits.val);
        if (s.contains("test")) c.splits.test = range_from(s["test"], c.splits.test);
      }
    }
    c.out = j.value("out", c.out.string());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::trunc);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + path.string());
}

void write_config(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_json(dir / "config.json", to_json(cfg));
}

}  // namespace segdiff::cli
