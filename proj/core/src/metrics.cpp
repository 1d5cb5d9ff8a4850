#include "segdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "segdiff/errors.hpp"

namespace segdiff {
namespace {

std::int64_t pairs(std::int64_t n) { return n * (n - 1) / 2; }

std::vector<std::int32_t> distinct_sorted(std::span<const std::int32_t> v) {
  std::vector<std::int32_t> out(v.begin(), v.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

ContingencyTable contingency(const LabelMap& gt, const LabelMap& pred) {
  if (!gt.same_shape(pred)) throw ValidationError("label maps differ in shape");
  ContingencyTable t;
  t.gt_labels = distinct_sorted(gt.labels());
  t.pred_labels = distinct_sorted(pred.labels());

  std::unordered_map<std::int32_t, std::size_t> gi, pi;
  for (std::size_t i = 0; i < t.gt_labels.size(); ++i) gi[t.gt_labels[i]] = i;
  for (std::size_t j = 0; j < t.pred_labels.size(); ++j) pi[t.pred_labels[j]] = j;

  t.counts.assign(t.rows() * t.cols(), 0);
  t.row_sums.assign(t.rows(), 0);
  t.col_sums.assign(t.cols(), 0);
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const std::size_t i = gi[gt[k]];
    const std::size_t j = pi[pred[k]];
    ++t.counts[i * t.cols() + j];
    ++t.row_sums[i];
    ++t.col_sums[j];
  }
  t.total = static_cast<std::int64_t>(gt.size());
  return t;
}

double ari(const ContingencyTable& t) {
  if (t.total < 2) throw ValidationError("ARI needs at least two pixels");
  std::int64_t index = 0, sum_a = 0, sum_b = 0;
  for (const auto n : t.counts) index += pairs(n);
  for (const auto a : t.row_sums) sum_a += pairs(a);
  for (const auto b : t.col_sums) sum_b += pairs(b);

  // Pair counts fit comfortably in 64 bits; the products need extended precision.
  using LD = long double;
  const LD expected = static_cast<LD>(sum_a) * static_cast<LD>(sum_b) / static_cast<LD>(pairs(t.total));
  const LD max_index = (static_cast<LD>(sum_a) + static_cast<LD>(sum_b)) / 2;
  if (max_index == expected) return 1.0;
  return static_cast<double>((static_cast<LD>(index) - expected) / (max_index - expected));
}

double ari(const LabelMap& gt, const LabelMap& pred) { return ari(contingency(gt, pred)); }

Assignment solve_assignment(std::span<const double> values, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw ValidationError("assignment matrix is empty");
  if (values.size() != static_cast<std::size_t>(rows) * cols) {
    throw ValidationError("assignment matrix size does not match its shape");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("assignment matrix has a non-finite entry");
  }

  // Shortest augmenting paths with potentials on an n <= m cost matrix;
  // transpose when there are more rows than columns.
  const bool transposed = rows > cols;
  const int n = transposed ? cols : rows;
  const int m = transposed ? rows : cols;
  auto cost = [&](int i, int j) {
    const double v = transposed ? values[static_cast<std::size_t>(j) * cols + i]
                                : values[static_cast<std::size_t>(i) * cols + j];
    return -v;
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int i = p[j] - 1, c = j - 1;
    if (transposed) {
      out.row_to_col[static_cast<std::size_t>(c)] = i;
    } else {
      out.row_to_col[static_cast<std::size_t>(i)] = c;
    }
  }
  for (int r = 0; r < rows; ++r) {
    const int c = out.row_to_col[static_cast<std::size_t>(r)];
    if (c >= 0) out.total += values[static_cast<std::size_t>(r) * cols + c];
  }
  return out;
}

MatchResult hungarian_iou(const LabelMap& gt, const LabelMap& pred) {
  const ContingencyTable t = contingency(gt, pred);
  if (t.rows() == 0) throw ValidationError("ground truth has no non-empty classes");

  const int rows = static_cast<int>(t.rows()), cols = static_cast<int>(t.cols());
  std::vector<double> iou(t.counts.size());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      const std::int64_t inter = t.at(i, j);
      const std::int64_t uni = t.row_sums[i] + t.col_sums[j] - inter;
      iou[i * t.cols() + j] = static_cast<double>(inter) / static_cast<double>(uni);
    }
  }
  const Assignment a = solve_assignment(iou, rows, cols);

  MatchResult r;
  std::vector<char> pred_used(t.cols(), 0);
  double sum = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const int j = a.row_to_col[i];
    if (j < 0) {
      r.unmatched_gt.push_back(t.gt_labels[i]);
      continue;
    }
    pred_used[static_cast<std::size_t>(j)] = 1;
    const double v = iou[i * t.cols() + static_cast<std::size_t>(j)];
    r.pairs.push_back({t.gt_labels[i], t.pred_labels[static_cast<std::size_t>(j)], v});
    sum += v;
  }
  for (std::size_t j = 0; j < t.cols(); ++j) {
    if (!pred_used[j]) r.unmatched_pred.push_back(t.pred_labels[j]);
  }
  r.mean_iou = sum / static_cast<double>(t.rows());
  return r;
}

BestOfN best_of_n(const LabelMap& gt, std::span<const LabelMap> samples) {
  if (samples.empty()) throw ValidationError("best_of_n needs at least one sample");
  BestOfN best{ari(gt, samples[0]), 0};
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double a = ari(gt, samples[i]);
    if (a > best.ari) best = {a, i};
  }
  return best;
}

}  // namespace segdiff
