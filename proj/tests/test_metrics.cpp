#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "segdiff/errors.hpp"
#include "segdiff/metrics.hpp"

namespace segdiff {
namespace {

LabelMap random_map(int side, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  LabelMap m(side, side);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = d(rng);
  return m;
}

// Pair-counting over all unordered pixel pairs (Hubert-Arabie form).
// Returns nullopt when the denominator vanishes.
std::optional<double> ari_pairs(const LabelMap& g, const LabelMap& p) {
  long double a = 0, b = 0, c = 0, d = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = i + 1; j < g.size(); ++j) {
      const bool sg = g[i] == g[j], sp = p[i] == p[j];
      if (sg && sp) ++a;
      else if (sg) ++b;
      else if (sp) ++c;
      else ++d;
    }
  }
  const long double den = (a + b) * (b + d) + (a + c) * (c + d);
  if (den == 0) return std::nullopt;
  return static_cast<double>(2 * (a * d - b * c) / den);
}

LabelMap relabel(const LabelMap& m, std::mt19937_64& rng) {
  std::vector<std::int32_t> perm(64);
  std::iota(perm.begin(), perm.end(), 200);
  std::shuffle(perm.begin(), perm.end(), rng);
  LabelMap out = m;
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = perm[static_cast<std::size_t>(m[i])];
  return out;
}

TEST(Ari, Examples) {
  const LabelMap gt(2, 2, std::vector<std::int32_t>{0, 0, 1, 1});
  const LabelMap pred(2, 2, std::vector<std::int32_t>{0, 1, 0, 1});
  EXPECT_NEAR(ari(gt, pred), -0.5, 1e-15);
  EXPECT_NEAR(*ari_pairs(gt, pred), -0.5, 1e-15);
  EXPECT_EQ(ari(gt, gt), 1.0);
  EXPECT_EQ(ari(gt, LabelMap(2, 2, 7)), 0.0);
  EXPECT_EQ(ari(LabelMap(3, 3, 1), LabelMap(3, 3, 4)), 1.0);
  EXPECT_THROW(ari(LabelMap(1, 1), LabelMap(1, 1)), ValidationError);
  EXPECT_THROW(ari(gt, LabelMap(2, 3)), ValidationError);
}

TEST(Ari, MatchesPairCountingOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = random_map(8, 1 + trial % 5, rng);
    const auto p = random_map(8, 1 + (trial / 5) % 5, rng);
    const auto want = ari_pairs(g, p);
    const double got = ari(g, p);
    if (want) EXPECT_NEAR(got, *want, 1e-12) << trial;
    else EXPECT_EQ(got, 1.0);
    EXPECT_GE(got, -1.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(Ari, SymmetricAndRelabelInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_map(12, 6, rng);
    const auto p = random_map(12, 4, rng);
    EXPECT_NEAR(ari(g, p), ari(p, g), 1e-14);
    EXPECT_NEAR(ari(g, p), ari(relabel(g, rng), relabel(p, rng)), 1e-14);
    EXPECT_EQ(ari(g, relabel(g, rng)), 1.0);
  }
}

TEST(Contingency, Marginals) {
  std::mt19937_64 rng(2);
  const auto g = random_map(10, 4, rng), p = random_map(10, 7, rng);
  const auto t = contingency(g, p);
  EXPECT_EQ(t.total, 100);
  EXPECT_EQ(std::accumulate(t.counts.begin(), t.counts.end(), std::int64_t{0}), 100);
  EXPECT_EQ(std::accumulate(t.row_sums.begin(), t.row_sums.end(), std::int64_t{0}), 100);
  EXPECT_EQ(std::accumulate(t.col_sums.begin(), t.col_sums.end(), std::int64_t{0}), 100);
}

double brute_force_best(const std::vector<double>& v, int rows, int cols) {
  // Enumerate every injective map from the smaller side into the larger.
  const bool tr = rows > cols;
  const int r = tr ? cols : rows, c = tr ? rows : cols;
  auto at = [&](int i, int j) { return tr ? v[static_cast<std::size_t>(j) * cols + i] : v[static_cast<std::size_t>(i) * cols + j]; };
  std::vector<bool> used(static_cast<std::size_t>(c), false);
  double best = -1e300;
  auto rec = [&](auto&& self, int i, double acc) -> void {
    if (i == r) {
      best = std::max(best, acc);
      return;
    }
    for (int j = 0; j < c; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = true;
      self(self, i + 1, acc + at(i, j));
      used[static_cast<std::size_t>(j)] = false;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

TEST(SolveAssignment, Examples) {
  const std::vector<double> id{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const auto a = solve_assignment(id, 3, 3);
  EXPECT_EQ(a.row_to_col, (std::vector<int>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(a.total, 3.0);
  const auto b = solve_assignment(std::vector<double>{0.9, 0.8, 0.85, 0.1}, 2, 2);
  EXPECT_EQ(b.row_to_col, (std::vector<int>{1, 0}));
  EXPECT_NEAR(b.total, 1.65, 1e-12);
  EXPECT_THROW(solve_assignment(std::vector<double>{}, 0, 0), ValidationError);
  EXPECT_THROW(solve_assignment(std::vector<double>{NAN}, 1, 1), ValidationError);
}

TEST(SolveAssignment, MatchesPermutationEnumeration) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 7);
  for (int trial = 0; trial < 100; ++trial) {
    const int rows = trial < 30 ? 6 : dim(rng), cols = trial < 30 ? 6 : dim(rng);
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = u(rng);
    const auto got = solve_assignment(v, rows, cols);
    EXPECT_NEAR(got.total, brute_force_best(v, rows, cols), 1e-12) << rows << "x" << cols;
    double sum = 0.0;
    int assigned = 0;
    std::vector<bool> seen(static_cast<std::size_t>(cols), false);
    for (int i = 0; i < rows; ++i) {
      const int j = got.row_to_col[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      ASSERT_FALSE(seen[static_cast<std::size_t>(j)]);
      seen[static_cast<std::size_t>(j)] = true;
      sum += v[static_cast<std::size_t>(i) * cols + j];
      ++assigned;
    }
    EXPECT_EQ(assigned, std::min(rows, cols));
    EXPECT_NEAR(sum, got.total, 1e-12);
  }
}

// IoU by rasterizing each label's mask, then brute-force matching.
double hungarian_iou_oracle(const LabelMap& g, const LabelMap& p) {
  std::vector<std::int32_t> gl(g.labels().begin(), g.labels().end()), pl(p.labels().begin(), p.labels().end());
  std::sort(gl.begin(), gl.end());
  gl.erase(std::unique(gl.begin(), gl.end()), gl.end());
  std::sort(pl.begin(), pl.end());
  pl.erase(std::unique(pl.begin(), pl.end()), pl.end());
  std::vector<double> iou;
  for (auto a : gl) {
    for (auto b : pl) {
      int inter = 0, uni = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        inter += g[i] == a && p[i] == b;
        uni += g[i] == a || p[i] == b;
      }
      iou.push_back(static_cast<double>(inter) / uni);
    }
  }
  return brute_force_best(iou, static_cast<int>(gl.size()), static_cast<int>(pl.size())) / gl.size();
}

TEST(HungarianIou, Examples) {
  const LabelMap halves(2, 4, std::vector<std::int32_t>{0, 0, 1, 1, 0, 0, 1, 1});
  const auto r = hungarian_iou(halves, LabelMap(2, 4, 3));
  EXPECT_DOUBLE_EQ(r.mean_iou, 0.25);
  EXPECT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.unmatched_gt.size(), 1u);
  EXPECT_TRUE(r.unmatched_pred.empty());
  EXPECT_EQ(hungarian_iou(halves, halves).mean_iou, 1.0);
}

TEST(HungarianIou, MatchesRasterOracleAndRelabelInvariant) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = random_map(8, 1 + trial % 6, rng);
    const auto p = random_map(8, 1 + (trial / 6) % 6, rng);
    const auto r = hungarian_iou(g, p);
    EXPECT_NEAR(r.mean_iou, hungarian_iou_oracle(g, p), 1e-12);
    EXPECT_GE(r.mean_iou, 0.0);
    EXPECT_LE(r.mean_iou, 1.0);
    EXPECT_NEAR(hungarian_iou(g, relabel(p, rng)).mean_iou, r.mean_iou, 1e-12);
    EXPECT_EQ(r.pairs.size() + r.unmatched_gt.size(), contingency(g, p).rows());
  }
}

TEST(BestOfN, Selection) {
  std::mt19937_64 rng(4);
  const auto gt = random_map(8, 3, rng);
  std::vector<LabelMap> samples;
  for (int k = 0; k < 6; ++k) samples.push_back(random_map(8, 3, rng));
  samples.insert(samples.begin() + 3, relabel(gt, rng));
  const auto b = best_of_n(gt, samples);
  EXPECT_EQ(b.ari, 1.0);
  EXPECT_EQ(b.index, 3u);
  EXPECT_EQ(best_of_n(gt, std::span(samples).first(1)).ari, ari(gt, samples[0]));
  double prev = -2.0;
  for (std::size_t n = 1; n <= samples.size(); ++n) {
    const double v = best_of_n(gt, std::span(samples).first(n)).ari;
    EXPECT_GE(v, prev);
    prev = v;
  }
  const std::vector<LabelMap> twins{samples[0], samples[0]};
  EXPECT_EQ(best_of_n(gt, twins).index, 0u);
  EXPECT_THROW(best_of_n(gt, std::span<const LabelMap>()), ValidationError);
}

}  // namespace
}  // namespace segdiff
