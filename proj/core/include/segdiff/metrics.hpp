#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "segdiff/tensor.hpp"

namespace segdiff {

/// Pixel counts n_ij between ground-truth label i and predicted label j.
/// Labels are the distinct values present, ascending.
struct ContingencyTable {
  std::vector<std::int32_t> gt_labels;
  std::vector<std::int32_t> pred_labels;
  std::vector<std::int64_t> counts;  // row-major, gt x pred
  std::vector<std::int64_t> row_sums;
  std::vector<std::int64_t> col_sums;
  std::int64_t total = 0;

  std::size_t rows() const { return gt_labels.size(); }
  std::size_t cols() const { return pred_labels.size(); }
  std::int64_t at(std::size_t i, std::size_t j) const { return counts[i * cols() + j]; }
};

ContingencyTable contingency(const LabelMap& gt, const LabelMap& pred);

/// Adjusted Rand index. Returns 1 when both partitions are a single cluster.
double ari(const LabelMap& gt, const LabelMap& pred);
double ari(const ContingencyTable& table);

/// Maximum-weight one-to-one assignment on a rows x cols matrix (row-major).
struct Assignment {
  std::vector<int> row_to_col;  // -1 where a row stays unassigned
  double total = 0.0;
};

Assignment solve_assignment(std::span<const double> values, int rows, int cols);

struct MatchPair {
  std::int32_t gt_label = 0;
  std::int32_t pred_label = 0;
  double iou = 0.0;
};

struct MatchResult {
  double mean_iou = 0.0;  // over all non-empty ground-truth labels, unmatched count as 0
  std::vector<MatchPair> pairs;
  std::vector<std::int32_t> unmatched_gt;
  std::vector<std::int32_t> unmatched_pred;
};

MatchResult hungarian_iou(const LabelMap& gt, const LabelMap& pred);

struct BestOfN {
  double ari = 0.0;
  std::size_t index = 0;
};

/// Highest-ARI sample; ties keep the earliest.
BestOfN best_of_n(const LabelMap& gt, std::span<const LabelMap> samples);

}  // namespace segdiff
