#include "segdiff/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "segdiff/errors.hpp"
#include "segdiff/rng.hpp"

namespace segdiff {

void SceneConfig::validate() const {
  if (size < 4) throw ValidationError("scene size must be at least 4");
  if (n_bits < 1 || n_bits > 16) throw ValidationError("scene n_bits must be in [1, 16]");
  if (min_entities < 1 || max_entities < min_entities) {
    throw ValidationError("entity range must satisfy 1 <= min_entities <= max_entities");
  }
  if (max_entities > (1 << n_bits)) {
    throw ValidationError("max_entities exceeds the palette capacity 2^n_bits");
  }
  if (2 * max_entities > size * size) throw ValidationError("canvas too small for max_entities");
  double total = 0.0;
  for (double w : shape_weights) {
    if (!(w >= 0.0)) throw ValidationError("shape weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) throw ValidationError("at least one shape weight must be positive");
  if (!(color_jitter >= 0.0) || !(texture_noise >= 0.0)) {
    throw ValidationError("color_jitter and texture_noise must be non-negative");
  }
}

nlohmann::json to_json(const SceneConfig& cfg) {
  return {{"size", cfg.size},
          {"min_entities", cfg.min_entities},
          {"max_entities", cfg.max_entities},
          {"shape_weights", cfg.shape_weights},
          {"color_jitter", cfg.color_jitter},
          {"texture_noise", cfg.texture_noise},
          {"n_bits", cfg.n_bits}};
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig cfg;
  cfg.size = j.value("size", cfg.size);
  cfg.min_entities = j.value("min_entities", cfg.min_entities);
  cfg.max_entities = j.value("max_entities", cfg.max_entities);
  cfg.shape_weights = j.value("shape_weights", cfg.shape_weights);
  cfg.color_jitter = j.value("color_jitter", cfg.color_jitter);
  cfg.texture_noise = j.value("texture_noise", cfg.texture_noise);
  cfg.n_bits = j.value("n_bits", cfg.n_bits);
  cfg.validate();
  return cfg;
}

namespace {

struct Shape {
  ShapeKind kind = ShapeKind::Ellipse;
  double cy = 0, cx = 0;
  double a = 1, b = 1;  // radii or half extents
  double angle = 0;
  std::array<double, 6> tri{};  // y0 x0 y1 x1 y2 x2
};

Shape draw_shape(Rng& rng, const SceneConfig& cfg) {
  std::discrete_distribution<int> kind(cfg.shape_weights.begin(), cfg.shape_weights.end());
  std::uniform_real_distribution<double> pos(0.0, cfg.size);
  std::uniform_real_distribution<double> radius(0.1 * cfg.size, 0.35 * cfg.size);
  std::uniform_real_distribution<double> turn(0.0, std::numbers::pi);

  Shape s;
  s.kind = static_cast<ShapeKind>(kind(rng));
  s.cy = pos(rng);
  s.cx = pos(rng);
  s.a = radius(rng);
  s.b = radius(rng);
  s.angle = turn(rng);
  if (s.kind == ShapeKind::Triangle) {
    std::uniform_real_distribution<double> wobble(-0.4, 0.4);
    for (int k = 0; k < 3; ++k) {
      const double phi = s.angle * 2 + k * 2 * std::numbers::pi / 3 + wobble(rng);
      const double r = radius(rng);
      s.tri[2 * k] = s.cy + r * std::sin(phi);
      s.tri[2 * k + 1] = s.cx + r * std::cos(phi);
    }
  }
  return s;
}

bool inside(const Shape& s, double y, double x) {
  const double dy = y - s.cy, dx = x - s.cx;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double u = dx * c + dy * sn;
  const double v = -dx * sn + dy * c;
  switch (s.kind) {
    case ShapeKind::Ellipse:
      return (u / s.a) * (u / s.a) + (v / s.b) * (v / s.b) <= 1.0;
    case ShapeKind::Rectangle:
      return std::abs(u) <= s.a && std::abs(v) <= s.b;
    case ShapeKind::Triangle: {
      auto edge = [&](int i, int j) {
        const double y0 = s.tri[2 * i], x0 = s.tri[2 * i + 1];
        const double y1 = s.tri[2 * j], x1 = s.tri[2 * j + 1];
        return (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

}  // namespace

Sample synth_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  const int n = cfg.size;
  Rng rng = make_stream(seed, 0xda7a);
  const int entities = std::uniform_int_distribution<int>(cfg.min_entities, cfg.max_entities)(rng);

  LabelMap map(n, n, 0);
  std::vector<std::int64_t> area(static_cast<std::size_t>(entities), 0);
  area[0] = static_cast<std::int64_t>(n) * n;

  for (int id = 1; id < entities; ++id) {
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      Rng shape_rng = make_stream(seed, 0x5aa7e, static_cast<std::uint64_t>(id),
                                  static_cast<std::uint64_t>(attempt));
      const Shape shape = draw_shape(shape_rng, cfg);
      std::vector<std::int64_t> next = area;
      std::vector<std::size_t> covered;
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          if (!inside(shape, r + 0.5, c + 0.5)) continue;
          const auto k = static_cast<std::size_t>(r) * n + c;
          --next[static_cast<std::size_t>(map[k])];
          covered.push_back(k);
        }
      }
      if (covered.empty()) continue;
      if (std::any_of(next.begin(), next.begin() + id, [](std::int64_t a) { return a == 0; })) continue;
      for (auto k : covered) map[k] = id;
      next[static_cast<std::size_t>(id)] = static_cast<std::int64_t>(covered.size());
      area = std::move(next);
      placed = true;
    }
    if (!placed) {
      // Carve a single pixel from the largest entity so the count stays exact.
      const auto largest = static_cast<std::int32_t>(
          std::max_element(area.begin(), area.begin() + id) - area.begin());
      for (std::size_t k = map.size(); k-- > 0;) {
        if (map[k] == largest) {
          map[k] = id;
          break;
        }
      }
      --area[static_cast<std::size_t>(largest)];
      area[static_cast<std::size_t>(id)] = 1;
    }
  }

  // Distinct base colors (L-inf separation), then linear shading and texture noise.
  std::uniform_real_distribution<double> channel(-0.85, 0.85);
  std::uniform_real_distribution<double> shade(-cfg.color_jitter, cfg.color_jitter);
  std::vector<std::array<double, 3>> base(static_cast<std::size_t>(entities));
  std::vector<std::array<double, 2>> slope(static_cast<std::size_t>(entities));
  for (int id = 0; id < entities; ++id) {
    std::array<double, 3> col{};
    for (int tries = 0; tries < 100; ++tries) {
      col = {channel(rng), channel(rng), channel(rng)};
      bool far = true;
      for (int o = 0; o < id && far; ++o) {
        const auto& p = base[static_cast<std::size_t>(o)];
        far = std::max({std::abs(p[0] - col[0]), std::abs(p[1] - col[1]), std::abs(p[2] - col[2])}) >= 0.25;
      }
      if (far) break;
    }
    base[static_cast<std::size_t>(id)] = col;
    slope[static_cast<std::size_t>(id)] = {shade(rng), shade(rng)};
  }

  Sample s;
  s.entities = map;
  s.image = Tensor<float>(1, 3, n, n);
  std::uniform_real_distribution<double> noise(-cfg.texture_noise, cfg.texture_noise);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const auto id = static_cast<std::size_t>(map.at(r, c));
      const double gy = 2.0 * (r + 0.5) / n - 1.0, gx = 2.0 * (c + 0.5) / n - 1.0;
      const double shading = slope[id][0] * gy + slope[id][1] * gx;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(base[id][static_cast<std::size_t>(ch)] + shading + noise(rng), -1.0, 1.0);
        s.image.at(0, ch, r, c) = quantize8(static_cast<float>(v));
      }
    }
  }
  return s;
}

Sample pad_to_square(const Tensor<float>& image, const LabelMap& entities, int target,
                     std::int32_t background) {
  const int h = entities.height(), w = entities.width();
  if (h == 0 || w == 0 || target <= 0) throw ValidationError("pad_to_square needs nonempty inputs");
  if (image.n() != 1 || image.height() != h || image.width() != w) {
    throw ValidationError("image and label map differ in shape");
  }
  const double scale = static_cast<double>(target) / std::max(h, w);
  const int nh = std::clamp(static_cast<int>(std::lround(h * scale)), 1, target);
  const int nw = std::clamp(static_cast<int>(std::lround(w * scale)), 1, target);
  const double sy = static_cast<double>(h) / nh, sx = static_cast<double>(w) / nw;

  Sample out;
  out.image = Tensor<float>(1, image.channels(), target, target, 0.0f);
  out.entities = LabelMap(target, target, background);
  for (int r = 0; r < nh; ++r) {
    const int lr = std::min(h - 1, static_cast<int>((r + 0.5) * sy));
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - y0;
    for (int c = 0; c < nw; ++c) {
      const int lc = std::min(w - 1, static_cast<int>((c + 0.5) * sx));
      out.entities.at(r, c) = entities.at(lr, lc);
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - x0;
      for (int ch = 0; ch < image.channels(); ++ch) {
        const double top = (1 - ax) * image.at(0, ch, y0, x0) + ax * image.at(0, ch, y0, x1);
        const double bot = (1 - ax) * image.at(0, ch, y1, x0) + ax * image.at(0, ch, y1, x1);
        out.image.at(0, ch, r, c) = static_cast<float>((1 - ay) * top + ay * bot);
      }
    }
  }
  return out;
}

std::uint8_t to_byte(float v) {
  const double q = std::floor((static_cast<double>(v) + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

float from_byte(std::uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

float quantize8(float v) { return from_byte(to_byte(v)); }

void DatasetSplits::validate() const {
  const SeedRange* r[] = {&train, &val, &test};
  for (int i = 0; i < 3; ++i) {
    if (r[i]->end() < r[i]->first) throw ValidationError("seed range overflows");
    for (int j = i + 1; j < 3; ++j) {
      if (r[i]->first < r[j]->end() && r[j]->first < r[i]->end()) {
        throw ValidationError("dataset splits must use disjoint seed ranges");
      }
    }
  }
  if (train.count == 0) throw ValidationError("training split is empty");
}

namespace {

nlohmann::json range_json(const SeedRange& r) { return {{"first_seed", r.first}, {"count", r.count}}; }

SeedRange range_from_json(const nlohmann::json& j) {
  return {j.at("first_seed").get<std::uint64_t>(), j.at("count").get<std::uint64_t>()};
}

std::filesystem::path image_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / "images" / (std::to_string(seed) + ".png");
}

std::filesystem::path entity_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / "entities" / (std::to_string(seed) + ".png");
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const SceneConfig& cfg,
                   const DatasetSplits& splits) {
  cfg.validate();
  splits.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "entities", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  for (const SeedRange& r : {splits.train, splits.val, splits.test}) {
    for (std::uint64_t seed = r.first; seed < r.end(); ++seed) {
      const Sample s = synth_scene(seed, cfg);
      save_image(image_path(dir, seed), s.image);
      save_labelmap(entity_path(dir, seed), s.entities);
    }
  }

  nlohmann::json meta = {{"format", 1},
                         {"scene", to_json(cfg)},
                         {"splits",
                          {{"train", range_json(splits.train)},
                           {"val", range_json(splits.val)},
                           {"test", range_json(splits.test)}}}};
  std::ofstream f(dir / "meta.json");
  f << meta.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + (dir / "meta.json").string());
}

DatasetMeta read_dataset_meta(const std::filesystem::path& dir) {
  std::ifstream f(dir / "meta.json");
  if (!f) throw IoError("missing dataset metadata " + (dir / "meta.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + (dir / "meta.json").string() + ": " + e.what());
  }
  DatasetMeta meta;
  meta.scene = scene_config_from_json(j.at("scene"));
  const auto& s = j.at("splits");
  meta.splits.train = range_from_json(s.at("train"));
  meta.splits.val = range_from_json(s.at("val"));
  meta.splits.test = range_from_json(s.at("test"));
  meta.splits.validate();
  return meta;
}

SeedRange split_range(const DatasetSplits& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<Sample> load_split(const std::filesystem::path& dir, const std::string& split,
                               std::size_t limit) {
  const SeedRange r = split_range(read_dataset_meta(dir).splits, split);
  std::uint64_t count = r.count;
  if (limit > 0) count = std::min<std::uint64_t>(count, limit);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::uint64_t seed = r.first; seed < r.first + count; ++seed) {
    Sample s;
    s.image = load_image(image_path(dir, seed));
    s.entities = load_labelmap(entity_path(dir, seed));
    if (s.image.height() != s.entities.height() || s.image.width() != s.entities.width()) {
      throw IoError("image and entity map sizes differ for seed " + std::to_string(seed));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace segdiff
