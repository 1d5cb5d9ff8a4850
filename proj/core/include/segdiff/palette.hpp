#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segdiff/tensor.hpp"

namespace segdiff {

enum class LapMode { None, Random, Different, Similar };

std::string to_string(LapMode mode);
LapMode parse_lap_mode(const std::string& name);

/// Binary-reflected gray code.
constexpr std::uint32_t gray(std::uint32_t i) { return i ^ (i >> 1); }

int hamming_distance(std::uint32_t a, std::uint32_t b);

/// L x L grid of class codes; codes is a permutation of 0..L*L-1, row-major.
struct PaletteGrid {
  int side = 0;
  LapMode mode = LapMode::Similar;
  std::vector<std::int32_t> codes;

  std::int32_t code(int row, int col) const { return codes[static_cast<std::size_t>(row) * side + col]; }
  int n_bits() const;
  /// Mean Hamming distance over all 2L(L-1) four-neighbor pairs.
  double mean_adjacent_hamming() const;
  bool is_permutation() const;
};

/// code(r, c) = (gray(r) << n_bits/2) | gray(c). Requires even n_bits.
PaletteGrid build_similar_grid(int n_bits);
PaletteGrid build_random_grid(int n_bits, std::uint64_t seed);
/// Greedy: row-major cells, each takes the unused code with the largest summed
/// Hamming distance to its assigned up/left neighbors; ties to the smallest code.
PaletteGrid build_different_grid(int n_bits);
/// Dispatch by mode. None returns an empty grid (side 0) of capacity 2^n_bits.
PaletteGrid build_grid(LapMode mode, int n_bits, std::uint64_t seed);

nlohmann::json to_json(const PaletteGrid& grid);
PaletteGrid palette_from_json(const nlohmann::json& j);

struct Pixel {
  int row = 0;
  int col = 0;
};

using Mask = std::vector<Pixel>;

/// Disjoint nonempty masks over an H x W canvas.
struct MaskSet {
  int height = 0;
  int width = 0;
  std::vector<Mask> masks;
};

struct Centroid {
  double row = 0.0;
  double col = 0.0;
};

Centroid centroid(const Mask& mask);

/// Cell containing a centroid. Pixel (r, c) spans [r, r+1) x [c, c+1), so the
/// centroid's continuous position is (row + 0.5, col + 0.5).
std::pair<int, int> centroid_cell(const Centroid& c, int height, int width, int side);

/// Order in which masks claim cells: area descending, then centroid row-major,
/// then first pixel row-major.
std::vector<std::size_t> lap_processing_order(const MaskSet& masks);

/// Class index per mask (same order as masks.masks). With mode None the grid is
/// ignored and masks get 1..N in processing order; `n_classes` bounds that case.
std::vector<std::int32_t> assign_lap(const MaskSet& masks, const PaletteGrid& grid, LapMode mode,
                                     int n_classes);

/// Extracts one mask per distinct entity id (ascending id order).
MaskSet masks_from_entities(const LabelMap& entity_map, std::vector<std::int32_t>* ids = nullptr);

/// Replaces each entity id by its assigned class index.
LabelMap remap_labelmap(const LabelMap& entity_map, const PaletteGrid& grid, LapMode mode,
                        int n_classes);

}  // namespace segdiff
