#include "segdiff/palette.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "segdiff/errors.hpp"
#include "segdiff/rng.hpp"

namespace segdiff {

namespace {

int side_for_bits(int n_bits) {
  if (n_bits < 2 || n_bits > 8 || n_bits % 2 != 0) {
    throw ValidationError("location-aware palettes need an even n_bits in [2, 8], got " +
                          std::to_string(n_bits));
  }
  return 1 << (n_bits / 2);
}

}  // namespace

std::string to_string(LapMode mode) {
  switch (mode) {
    case LapMode::None: return "none";
    case LapMode::Random: return "random";
    case LapMode::Different: return "different";
    case LapMode::Similar: return "similar";
  }
  return "?";
}

LapMode parse_lap_mode(const std::string& name) {
  if (name == "none") return LapMode::None;
  if (name == "random") return LapMode::Random;
  if (name == "different") return LapMode::Different;
  if (name == "similar") return LapMode::Similar;
  throw ValidationError("unknown LAP mode '" + name + "' (expected none, random, different, similar)");
}

int hamming_distance(std::uint32_t a, std::uint32_t b) { return std::popcount(a ^ b); }

int PaletteGrid::n_bits() const { return std::countr_zero(static_cast<unsigned>(side * side)); }

double PaletteGrid::mean_adjacent_hamming() const {
  long total = 0;
  long pairs = 0;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      if (c + 1 < side) {
        total += hamming_distance(code(r, c), code(r, c + 1));
        ++pairs;
      }
      if (r + 1 < side) {
        total += hamming_distance(code(r, c), code(r + 1, c));
        ++pairs;
      }
    }
  }
  return pairs ? static_cast<double>(total) / pairs : 0.0;
}

bool PaletteGrid::is_permutation() const {
  std::vector<std::int32_t> sorted = codes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != static_cast<std::int32_t>(i)) return false;
  }
  return sorted.size() == static_cast<std::size_t>(side) * side;
}

PaletteGrid build_similar_grid(int n_bits) {
  const int side = side_for_bits(n_bits);
  PaletteGrid g{side, LapMode::Similar, {}};
  g.codes.resize(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      g.codes[static_cast<std::size_t>(r) * side + c] =
          static_cast<std::int32_t>((gray(r) << (n_bits / 2)) | gray(c));
    }
  }
  return g;
}

PaletteGrid build_random_grid(int n_bits, std::uint64_t seed) {
  const int side = side_for_bits(n_bits);
  PaletteGrid g{side, LapMode::Random, {}};
  g.codes.resize(static_cast<std::size_t>(side) * side);
  std::iota(g.codes.begin(), g.codes.end(), 0);
  Rng rng = make_stream(seed, 0x1a9u);
  std::shuffle(g.codes.begin(), g.codes.end(), rng);
  return g;
}

PaletteGrid build_different_grid(int n_bits) {
  const int side = side_for_bits(n_bits);
  const int n = side * side;
  PaletteGrid g{side, LapMode::Different, std::vector<std::int32_t>(static_cast<std::size_t>(n), -1)};
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      int best = -1;
      int best_score = -1;
      for (int code = 0; code < n; ++code) {
        if (used[code]) continue;
        int score = 0;
        if (c > 0) score += hamming_distance(code, g.code(r, c - 1));
        if (r > 0) score += hamming_distance(code, g.code(r - 1, c));
        if (score > best_score) {
          best_score = score;
          best = code;
        }
      }
      used[best] = true;
      g.codes[static_cast<std::size_t>(r) * side + c] = best;
    }
  }
  return g;
}

PaletteGrid build_grid(LapMode mode, int n_bits, std::uint64_t seed) {
  switch (mode) {
    case LapMode::None: return PaletteGrid{0, LapMode::None, {}};
    case LapMode::Random: return build_random_grid(n_bits, seed);
    case LapMode::Different: return build_different_grid(n_bits);
    case LapMode::Similar: return build_similar_grid(n_bits);
  }
  return {};
}

nlohmann::json to_json(const PaletteGrid& grid) {
  return {{"side", grid.side}, {"mode", to_string(grid.mode)}, {"codes", grid.codes}};
}

PaletteGrid palette_from_json(const nlohmann::json& j) {
  PaletteGrid g;
  g.side = j.at("side").get<int>();
  g.mode = parse_lap_mode(j.at("mode").get<std::string>());
  g.codes = j.at("codes").get<std::vector<std::int32_t>>();
  if (g.mode != LapMode::None && !g.is_permutation()) {
    throw ValidationError("palette codes are not a permutation of 0..side^2-1");
  }
  return g;
}

Centroid centroid(const Mask& mask) {
  if (mask.empty()) throw std::invalid_argument("centroid of an empty mask");
  double r = 0.0, c = 0.0;
  for (const Pixel& p : mask) {
    r += p.row;
    c += p.col;
  }
  const double n = static_cast<double>(mask.size());
  return {r / n, c / n};
}

std::pair<int, int> centroid_cell(const Centroid& c, int height, int width, int side) {
  auto cell = [side](double pos, int extent) {
    const int i = static_cast<int>(std::floor((pos + 0.5) * side / extent));
    return std::clamp(i, 0, side - 1);
  };
  return {cell(c.row, height), cell(c.col, width)};
}

std::vector<std::size_t> lap_processing_order(const MaskSet& masks) {
  struct Key {
    std::size_t area;
    Centroid cen;
    Pixel first;
  };
  std::vector<Key> keys;
  keys.reserve(masks.masks.size());
  for (const Mask& m : masks.masks) {
    Pixel first{std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
    for (const Pixel& p : m) {
      if (p.row < first.row || (p.row == first.row && p.col < first.col)) first = p;
    }
    keys.push_back({m.size(), centroid(m), first});
  }
  std::vector<std::size_t> order(masks.masks.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Key& ka = keys[a];
    const Key& kb = keys[b];
    if (ka.area != kb.area) return ka.area > kb.area;
    if (ka.cen.row != kb.cen.row) return ka.cen.row < kb.cen.row;
    if (ka.cen.col != kb.cen.col) return ka.cen.col < kb.cen.col;
    if (ka.first.row != kb.first.row) return ka.first.row < kb.first.row;
    return ka.first.col < kb.first.col;
  });
  return order;
}

std::vector<std::int32_t> assign_lap(const MaskSet& masks, const PaletteGrid& grid, LapMode mode,
                                     int n_classes) {
  for (const Mask& m : masks.masks) {
    if (m.empty()) throw std::invalid_argument("mask set contains an empty mask");
  }
  const auto order = lap_processing_order(masks);
  std::vector<std::int32_t> out(masks.masks.size(), -1);

  if (mode == LapMode::None) {
    // Index 0 stays unused, so N masks need N + 1 classes.
    if (static_cast<long>(masks.masks.size()) >= n_classes) {
      throw CapacityError(std::to_string(masks.masks.size()) + " masks exceed the " +
                          std::to_string(n_classes - 1) + " sequential indices available");
    }
    for (std::size_t k = 0; k < order.size(); ++k) out[order[k]] = static_cast<std::int32_t>(k + 1);
    return out;
  }

  const int side = grid.side;
  const std::size_t cells = static_cast<std::size_t>(side) * side;
  if (masks.masks.size() > cells) {
    throw CapacityError(std::to_string(masks.masks.size()) + " masks exceed the " +
                        std::to_string(cells) + " palette cells");
  }
  std::vector<bool> taken(cells, false);
  for (std::size_t idx : order) {
    const auto [r0, c0] = centroid_cell(centroid(masks.masks[idx]), masks.height, masks.width, side);
    int best_r = r0, best_c = c0;
    if (taken[static_cast<std::size_t>(r0) * side + c0]) {
      // Nearest free cell by center distance; row-major scan keeps the first on ties.
      long best_d = std::numeric_limits<long>::max();
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
          if (taken[static_cast<std::size_t>(r) * side + c]) continue;
          const long d = static_cast<long>(r - r0) * (r - r0) + static_cast<long>(c - c0) * (c - c0);
          if (d < best_d) {
            best_d = d;
            best_r = r;
            best_c = c;
          }
        }
      }
    }
    taken[static_cast<std::size_t>(best_r) * side + best_c] = true;
    out[idx] = grid.code(best_r, best_c);
  }
  return out;
}

MaskSet masks_from_entities(const LabelMap& entity_map, std::vector<std::int32_t>* ids) {
  std::map<std::int32_t, Mask> by_id;
  for (int r = 0; r < entity_map.height(); ++r) {
    for (int c = 0; c < entity_map.width(); ++c) by_id[entity_map.at(r, c)].push_back({r, c});
  }
  MaskSet set{entity_map.height(), entity_map.width(), {}};
  set.masks.reserve(by_id.size());
  if (ids) ids->clear();
  for (auto& [id, mask] : by_id) {
    if (ids) ids->push_back(id);
    set.masks.push_back(std::move(mask));
  }
  return set;
}

LabelMap remap_labelmap(const LabelMap& entity_map, const PaletteGrid& grid, LapMode mode,
                        int n_classes) {
  std::vector<std::int32_t> ids;
  const MaskSet masks = masks_from_entities(entity_map, &ids);
  const auto classes = assign_lap(masks, grid, mode, n_classes);
  LabelMap out(entity_map.height(), entity_map.width());
  for (std::size_t k = 0; k < masks.masks.size(); ++k) {
    for (const Pixel& p : masks.masks[k]) out.at(p.row, p.col) = classes[k];
  }
  return out;
}

}  // namespace segdiff
