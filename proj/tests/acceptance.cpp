// Acceptance runner: one PASS/FAIL line per criterion.
//
//   segdiff_acceptance                 criteria 1-8 (fast, exact property checks)
//   segdiff_acceptance --desk-scale    adds 9-10 (full directional experiment)
//
// Reduced-scale overrides of the desk-scale protocol are reported as PILOT and
// never count as a pass.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "experiment.hpp"
#include "segdiff/bitcodec.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/palette.hpp"
#include "segdiff/schedule.hpp"
#include "segdiff/trainer.hpp"
#include "segdiff/unet.hpp"

namespace fs = std::filesystem;
using namespace segdiff;

namespace {

// Wall-clock budgets per fast criterion, in seconds.
constexpr double kBudget[] = {0, 1, 1, 1, 5, 1, 30, 30, 10};

constexpr double kTolProbability = 1e-12;
constexpr double kTolSnrRelative = 1e-9;
constexpr double kTolRecovery = 1e-6;
constexpr double kTolGradient = 1e-4;
constexpr double kTolAriOracle = 1e-12;
constexpr double kTolAssignment = 1e-12;

// Desk-scale pass thresholds.
constexpr double kMinSimilarAri = 0.5;
constexpr double kMinLapGain = 0.05;
constexpr double kMinScaleGain = 0.10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

enum class Status { Pass, Fail, Skip, Pilot };

void report(int id, const std::string& name, Status status, const std::string& detail, double secs) {
  static const char* label[] = {"PASS", "FAIL", "SKIP", "PILOT"};
  std::cout << "criterion " << std::setw(2) << id << "  " << std::left << std::setw(5)
            << label[static_cast<int>(status)] << std::right << "  " << name << "  (" << detail;
  if (secs >= 0) std::cout << "; " << std::fixed << std::setprecision(2) << secs << " s" << std::defaultfloat;
  std::cout << ")" << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

// ---------------------------------------------------------------- 1

Outcome gray_adjacency() {
  long pairs = 0, bad = 0;
  for (int n : {2, 4, 6}) {
    const PaletteGrid g = build_similar_grid(n);
    if (!g.is_permutation()) return {false, "n_bits=" + std::to_string(n) + " grid is not a permutation"};
    for (int r = 0; r < g.side; ++r) {
      for (int c = 0; c < g.side; ++c) {
        if (c + 1 < g.side) {
          ++pairs;
          bad += std::popcount(static_cast<unsigned>(g.code(r, c) ^ g.code(r, c + 1))) != 1;
        }
        if (r + 1 < g.side) {
          ++pairs;
          bad += std::popcount(static_cast<unsigned>(g.code(r, c) ^ g.code(r + 1, c))) != 1;
        }
      }
    }
  }
  return {bad == 0, std::to_string(pairs) + " neighbor pairs, " + std::to_string(bad) + " not at distance 1"};
}

// ---------------------------------------------------------------- 2

Outcome bit_probabilities() {
  double err = 0.0;
  const auto uniform = class_probabilities(std::vector<double>{0, 0, 0, 0});
  for (double p : uniform) err = std::max(err, std::abs(p - 1.0 / 16.0));
  const auto mid = class_probabilities(std::vector<double>{1, 1, 1, 0});
  for (std::size_t y = 0; y < mid.size(); ++y) {
    err = std::max(err, std::abs(mid[y] - ((y == 0b1110 || y == 0b1111) ? 0.5 : 0.0)));
  }
  return {uniform.size() == 16 && err <= kTolProbability, "max abs error " + fmt(err)};
}

// ---------------------------------------------------------------- 3

Outcome input_scaling() {
  double worst = 0.0;
  const NoiseSchedule base(1.0);
  for (double b : {0.02, 0.05, 0.1, 0.5, 1.0}) {
    const NoiseSchedule s(b);
    for (int i = 1; i <= 99; ++i) {
      const double t = i / 100.0;
      worst = std::max(worst, std::abs(s.snr(t) / (b * base.snr(t)) - 1.0));
    }
  }
  return {worst <= kTolSnrRelative, "max relative error " + fmt(worst)};
}

// ---------------------------------------------------------------- 4

Outcome parameterization_algebra() {
  Rng rng(404);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::normal_distribution<float> nd;
  std::bernoulli_distribution coin;
  const NoiseSchedule sched(0.1);
  double eps_err = 0.0, v_err = 0.0;
  int draws = 0;
  // 100 times x 100 values each.
  for (int k = 0; k < 100; ++k) {
    const double t = ut(rng);
    Tensor<float> x0(1, 4, 5, 5), e(1, 4, 5, 5);
    for (float& v : x0.values()) v = coin(rng) ? 1.0f : -1.0f;
    for (float& v : e.values()) v = nd(rng);
    const auto xt = forward_sample(x0, e, t, sched);
    const auto from_v = x_from_v(xt, v_target(x0, e, t, sched), t, sched);
    const double alpha = sched.coefficients(t).alpha;
    for (std::size_t i = 0; i < x0.size(); ++i) v_err = std::max(v_err, std::abs(static_cast<double>(from_v[i]) - x0[i]));
    if (alpha >= 1e-3) {
      const auto from_eps = x_from_eps(xt, e, t, sched);
      // Float rounding of x_t is amplified by 1/alpha, so the error is compared after scaling back.
      for (std::size_t i = 0; i < x0.size(); ++i) eps_err = std::max(eps_err, alpha * std::abs(static_cast<double>(from_eps[i]) - x0[i]));
    }
    draws += static_cast<int>(x0.size());
  }
  const Tensor<float> x0(1, 1, 1, 1, 0.7f), e(1, 1, 1, 1, -0.3f);
  const bool ends = v_target(x0, e, 0.0, sched)[0] == e[0] && v_target(x0, e, 1.0, sched)[0] == -x0[0];
  const bool ok = v_err <= kTolRecovery && eps_err <= kTolRecovery && ends;
  return {ok, std::to_string(draws) + " values; v max err " + fmt(v_err) + ", alpha-scaled eps max err " +
                  fmt(eps_err) + ", v endpoints " + (ends ? "exact" : "wrong")};
}

// ---------------------------------------------------------------- 5

Outcome codec_round_trips() {
  long checked = 0;
  for (int n = 1; n <= kMaxBits; ++n) {
    for (int c = 0; c < (1 << n); ++c, ++checked) {
      if (decode_bits(encode_bits(c, n)) != c) return {false, "bits n=" + std::to_string(n) + " c=" + std::to_string(c)};
    }
  }
  for (int k = 2; k <= kRgbPaletteSize; ++k) {
    for (int c = 0; c < k; ++c, checked += 2) {
      if (decode_onehot(encode_onehot(c, k)) != c) return {false, "onehot k=" + std::to_string(k)};
      const auto rgb = encode_rgb(c, k);
      if (decode_rgb(std::vector<double>(rgb.begin(), rgb.end()), k) != c) return {false, "rgb k=" + std::to_string(k)};
    }
  }
  return {true, std::to_string(checked) + " class round trips exact"};
}

// ---------------------------------------------------------------- 6

std::optional<double> ari_by_pairs(const LabelMap& g, const LabelMap& p) {
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

double best_by_enumeration(const std::vector<double>& v, int rows, int cols) {
  const bool tr = rows > cols;
  const int r = tr ? cols : rows, c = tr ? rows : cols;
  std::vector<int> perm(static_cast<std::size_t>(c));
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  // Permutations of all columns; the first r entries are the row assignment.
  do {
    double s = 0.0;
    for (int i = 0; i < r; ++i) {
      const int j = perm[static_cast<std::size_t>(i)];
      s += tr ? v[static_cast<std::size_t>(j) * cols + i] : v[static_cast<std::size_t>(i) * cols + j];
    }
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Outcome metric_oracles() {
  Rng rng(606);
  double ari_err = 0.0;
  for (int k = 0; k < 200; ++k) {
    std::uniform_int_distribution<int> dg(0, k % 5), dp(0, (k / 5) % 5);
    LabelMap g(8, 8), p(8, 8);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = dg(rng);
      p[i] = dp(rng);
    }
    const auto want = ari_by_pairs(g, p);
    ari_err = std::max(ari_err, std::abs(ari(g, p) - want.value_or(1.0)));
  }
  double asg_err = 0.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 7);
  for (int k = 0; k < 100; ++k) {
    const int rows = dim(rng), cols = dim(rng);
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = u(rng);
    asg_err = std::max(asg_err, std::abs(solve_assignment(v, rows, cols).total - best_by_enumeration(v, rows, cols)));
  }
  const LabelMap a(2, 2, std::vector<std::int32_t>{0, 0, 1, 1}), b(2, 2, std::vector<std::int32_t>{0, 1, 0, 1});
  const double worked = ari(a, b);
  const bool ok = ari_err <= kTolAriOracle && asg_err <= kTolAssignment && std::abs(worked + 0.5) <= 1e-15;
  return {ok, "ARI oracle err " + fmt(ari_err) + ", assignment err " + fmt(asg_err) + ", worked example " + fmt(worked)};
}

// ---------------------------------------------------------------- 7

Outcome gradient_check() {
  NetConfig cfg;
  cfg.base_width = 4;
  cfg.channel_mult = {1, 2};
  cfg.time_embed_dim = 8;
  cfg.groups = 2;
  Rng rng(707);
  std::uniform_real_distribution<double> u(-0.5, 0.5), ux(-1.0, 1.0);
  int checked = 0;
  double worst = 0.0;
  for (auto type : {PredictionType::X, PredictionType::Eps, PredictionType::V}) {
    UNet<double> net(cfg, 2, type, 7);
    for (auto* p : net.parameters()) {
      for (auto& v : p->value) v = u(rng);
    }
    Tensor<double> x0(2, 2, 4, 4), xt(2, 2, 4, 4), img(2, 3, 4, 4);
    for (auto* t : {&x0, &xt, &img}) {
      for (auto& v : t->values()) v = ux(rng);
    }
    const std::vector<float> t{0.3f, 0.7f};
    const NoiseSchedule sched(0.5);
    const LossWeighting w{WeightingKind::SigmoidBias, -2.0};
    auto loss = [&] { return weighted_x_loss<double>(type, xt, net.forward(xt, img, t), x0, t, sched, w, false).loss; };
    net.zero_grad();
    const auto out = net.forward_train(xt, img, t);
    net.backward(weighted_x_loss<double>(type, xt, out, x0, t, sched, w, true).grad_output);
    const auto& params = net.parameters();
    for (int k = 0; k < 30; ++k) {
      auto* p = params[static_cast<std::size_t>(k * 7) % params.size()];
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p->size() - 1)(rng);
      const double saved = p->value[i], h = 1e-5;
      p->value[i] = saved + h;
      const double up = loss();
      p->value[i] = saved - h;
      const double dn = loss();
      p->value[i] = saved;
      const double fd = (up - dn) / (2 * h), an = p->grad[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
      ++checked;
    }
  }
  return {worst <= kTolGradient && checked >= 20,
          std::to_string(checked) + " parameters, max relative error " + fmt(worst)};
}

// ---------------------------------------------------------------- 8

class CountingOracle : public Denoiser {
 public:
  explicit CountingOracle(Tensor<float> target) : target_(std::move(target)) {}
  PredictionType prediction_type() const override { return PredictionType::X; }
  int state_channels() const override { return target_.channels(); }
  Tensor<float> predict(const Tensor<float>&, const Tensor<float>& image, std::span<const float>) const override {
    bool blank = std::all_of(image.values().begin(), image.values().end(), [](float v) { return v == 0.0f; });
    (blank ? uncond : cond)++;
    return target_;
  }
  mutable std::atomic<int> cond{0}, uncond{0};

 private:
  Tensor<float> target_;
};

// Sampler loop written without any guidance code: x-space estimate, clamp, step.
LabelMap unguided_reference(const Denoiser& net, const Tensor<float>& image, int steps, std::uint64_t seed,
                            const NoiseSchedule& sched, const Encoding& enc) {
  const int c = net.state_channels(), h = image.height(), w = image.width();
  Rng rng = make_stream(seed, 0);
  auto noise = [&] {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    Tensor<float> z(1, c, h, w);
    for (float& v : z.values()) v = normal(rng);
    return z;
  };
  Tensor<float> x = noise();
  Tensor<float> xh;
  for (int k = 0; k < steps; ++k) {
    const double s = 1.0 - static_cast<double>(k) / steps;
    const double tn = k + 1 == steps ? 0.0 : 1.0 - static_cast<double>(k + 1) / steps;
    const std::vector<float> ts{static_cast<float>(s)};
    xh = prediction_to_x<float>(net.prediction_type(), x, net.predict(x, image, ts), ts, sched);
    for (float& v : xh.values()) v = std::clamp(v, enc.min_value(), enc.max_value());
    if (tn == 0.0) break;
    x = ancestral_step(x, xh, s, tn, sched, true, noise());
  }
  return decode_map(xh, enc);
}

Outcome sampler_contracts() {
  const Encoding enc{EncodingKind::AnalogBits, 16};
  const NoiseSchedule sched(0.1);
  LabelMap truth(8, 8);
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = static_cast<std::int32_t>((i * 5 + i / 8) % 16);
  const Tensor<float> image(1, 3, 8, 8, 0.25f);
  CountingOracle oracle(encode_map(truth, enc));
  const bool exact = sample(oracle, image, {1, 1.0, true, 3}, sched, enc).labels[0] == truth;

  NetConfig nc;
  nc.base_width = 8;
  nc.channel_mult = {1, 2};
  nc.time_embed_dim = 16;
  nc.groups = 4;
  UNet<float> net(nc, 4, PredictionType::X, 1);
  Rng rng(808);
  std::uniform_real_distribution<float> u(-0.3f, 0.3f);
  for (auto* p : net.parameters()) {
    for (auto& v : p->value) v = u(rng);
  }
  Tensor<float> img(1, 3, 8, 8);
  for (float& v : img.values()) v = u(rng);
  const SamplerConfig no_gw{8, 0.0, true, 21};
  const auto a = sample(net, img, no_gw, sched, enc);
  const auto b = sample(net, img, no_gw, sched, enc);
  const bool same_as_reference = a.labels[0] == unguided_reference(net, img, 8, 21, sched, enc);
  const bool reproducible = a.labels == b.labels && a.state == b.state;

  CountingOracle counter(encode_map(truth, enc));
  sample(counter, image, {8, 0.0, true, 1}, sched, enc);
  const bool no_uncond = counter.uncond == 0 && counter.cond == 8;

  return {exact && same_as_reference && reproducible && no_uncond,
          std::string("steps=1 oracle ") + (exact ? "exact" : "WRONG") + ", gw=0 vs guidance-free loop " +
              (same_as_reference ? "bitwise equal" : "DIFFERENT") + ", unconditional calls at gw=0: " +
              std::to_string(counter.uncond.load()) + ", reruns " + (reproducible ? "identical" : "DIFFER")};
}

// ---------------------------------------------------------------- 9, 10

struct DeskScale {
  fs::path work;
  std::int64_t iterations = 20000;
  int seeds = 3;
  int eval_images = 200;
  int train_count = 2000;
  int base_width = 64;
  bool pilot = false;
};

struct ArmSpec {
  std::string name;
  LapMode lap;
  double b;
};

cli::ExperimentConfig desk_config(const DeskScale& d) {
  cli::ExperimentConfig c;
  c.n_bits = 4;
  c.scene = SceneConfig{};  // 32x32, 2-12 entities, 16 classes
  c.net = NetConfig{};
  c.net.base_width = d.base_width;
  c.train.iterations = d.iterations;
  c.train.batch_size = 16;
  c.train.warmup_iters = std::min<std::int64_t>(1000, d.iterations / 4);
  c.train.decay_tail_iters = std::min<std::int64_t>(5000, d.iterations / 4);
  c.train.eval_every = std::max<std::int64_t>(1, d.iterations / 20);
  c.train.eval_images = 16;
  c.sampler = SamplerConfig{8, 1.0, true, 0};
  c.splits = {{0, static_cast<std::uint64_t>(d.train_count)}, {1'000'000, 16}, {2'000'000, static_cast<std::uint64_t>(d.eval_images)}};
  c.dataset = d.work / "data";
  return c;
}

std::optional<std::int64_t> latest_step(const fs::path& dir) {
  std::optional<std::int64_t> best;
  if (!fs::is_directory(dir / "checkpoints")) return best;
  for (const auto& e : fs::directory_iterator(dir / "checkpoints")) {
    const std::string n = e.path().filename().string();
    if (n.rfind("step_", 0) != 0) continue;
    const std::int64_t s = std::stoll(n.substr(5, 8));
    if (!best || s > *best) best = s;
  }
  return best;
}

void run_desk_scale(const DeskScale& d) {
  const auto t0 = std::chrono::steady_clock::now();
  cli::ExperimentConfig base = desk_config(d);
  if (!fs::exists(base.dataset / "meta.json") || read_dataset_meta(base.dataset).splits != base.splits) {
    cli::cmd_datagen(base, base.dataset);
  }
  const auto train = load_split(base.dataset, "train");
  const auto val = load_split(base.dataset, "val");
  const auto test = load_split(base.dataset, "test");

  const std::vector<ArmSpec> arms = {{"similar_b0.1", LapMode::Similar, 0.1},
                                     {"none_b0.1", LapMode::None, 0.1},
                                     {"similar_b1.0", LapMode::Similar, 1.0},
                                     {"random_b0.1", LapMode::Random, 0.1}};
  std::vector<std::vector<double>> ari_by_arm(arms.size());
  std::vector<double> bo1, bo8;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (int s = 0; s < d.seeds; ++s) {
      cli::ExperimentConfig cfg = base;
      cfg.lap_mode = arms[a].lap;
      cfg.input_scale = arms[a].b;
      cfg.train.seed = static_cast<std::uint64_t>(s);
      cfg.palette_seed = static_cast<std::uint64_t>(s);
      const fs::path dir = d.work / arms[a].name / ("seed_" + std::to_string(s));
      cfg.out = dir;
      const fs::path final_path = dir / "final.sgdf";
      bool done = false;
      if (fs::exists(final_path)) {
        const Checkpoint ck = load_checkpoint(final_path);
        done = ck.iteration == cfg.train.iterations && ck.spec == cfg.model_spec();
      }
      if (!done) {
        std::optional<fs::path> resume;
        if (const auto step = latest_step(dir); step && *step < cfg.train.iterations) resume = checkpoint_path(dir, *step);
        std::cerr << "training " << arms[a].name << " seed " << s << (resume ? " (resuming)" : "") << std::endl;
        cli::run_training(cfg, train, val, dir, resume, [&](const LogRow& r) {
          std::cerr << "  " << arms[a].name << "/" << s << " iter " << r.iter << " loss " << r.loss << " val ari "
                    << r.ari << std::endl;
        });
      }
      const auto net = restore_network(load_checkpoint(final_path));
      const NoiseSchedule sched(arms[a].b);
      const Encoding enc = cfg.encoding_spec();
      const EvalScores sc = evaluate_segmentation(*net, test, cfg.sampler, sched, enc);
      ari_by_arm[a].push_back(sc.ari);
      std::cerr << "  " << arms[a].name << " seed " << s << ": test ari " << sc.ari << " iou " << sc.iou << std::endl;
      if (a == 0) {
        const auto curve = cli::best_of_n_curve(*net, test, cfg.sampler, sched, enc, 8);
        bo1.push_back(curve[0].ari);
        bo8.push_back(curve[7].ari);
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double sim = cli::median(ari_by_arm[0]), none = cli::median(ari_by_arm[1]);
  const double b1 = cli::median(ari_by_arm[2]), rnd = cli::median(ari_by_arm[3]);
  const bool pa = sim >= kMinSimilarAri;
  const bool pb = sim - none >= kMinLapGain;
  const bool pc = sim - b1 >= kMinScaleGain;
  const bool pd = sim >= rnd && rnd >= none;
  std::ostringstream det;
  det << "median ARI similar/b0.1 " << fmt(sim) << " (a " << (pa ? "ok" : "no") << "), none " << fmt(none) << " (b "
      << (pb ? "ok" : "no") << "), similar/b1.0 " << fmt(b1) << " (c " << (pc ? "ok" : "no") << "), random "
      << fmt(rnd) << " (d " << (pd ? "ok" : "no") << "); " << d.seeds << " seeds x " << d.iterations << " iters, "
      << d.eval_images << " test scenes";
  const Status s9 = d.pilot ? Status::Pilot : (pa && pb && pc && pd ? Status::Pass : Status::Fail);
  report(9, "desk-scale directional experiment", s9, det.str(), secs);

  const double m1 = cli::median(bo1), m8 = cli::median(bo8);
  const Status s10 = d.pilot ? Status::Pilot : (m8 >= m1 ? Status::Pass : Status::Fail);
  report(10, "best-of-N monotonicity", s10, "median best-of-1 ARI " + fmt(m1) + ", best-of-8 " + fmt(m8), -1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  bool desk = false;
  DeskScale d;
  d.work = "acceptance_work";
  std::optional<std::int64_t> iterations;
  std::optional<int> seeds, eval_images, train_count, width;
  app.add_flag("--desk-scale", desk, "Also run the desk-scale experiment (criteria 9 and 10)");
  app.add_option("--work-dir", d.work, "Dataset and checkpoints for the desk-scale run (resumable)");
  app.add_option("--iterations", iterations, "PILOT override: training iterations");
  app.add_option("--seeds", seeds, "PILOT override: seeds per configuration");
  app.add_option("--eval-images", eval_images, "PILOT override: held-out scenes");
  app.add_option("--train-count", train_count, "PILOT override: training scenes");
  app.add_option("--width", width, "PILOT override: base channel width");
  CLI11_PARSE(app, argc, argv);

  if (iterations) d.iterations = *iterations;
  if (seeds) d.seeds = *seeds;
  if (eval_images) d.eval_images = *eval_images;
  if (train_count) d.train_count = *train_count;
  if (width) d.base_width = *width;
  d.pilot = iterations || seeds || eval_images || train_count || width;

  struct Fast {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Fast> fast = {
      {1, "gray-code adjacency", gray_adjacency},
      {2, "independent-bit class probabilities", bit_probabilities},
      {3, "input-scaling SNR identity", input_scaling},
      {4, "parameterization algebra", parameterization_algebra},
      {5, "codec round trips", codec_round_trips},
      {6, "metric oracles", metric_oracles},
      {7, "gradient check", gradient_check},
      {8, "sampler contracts", sampler_contracts},
  };
  bool all_ok = true;
  for (const auto& f : fast) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= kBudget[f.id];
    if (!in_time) o.detail += "; over the " + fmt(kBudget[f.id]) + " s budget";
    const bool ok = o.pass && in_time;
    all_ok = all_ok && ok;
    report(f.id, f.name, ok ? Status::Pass : Status::Fail, o.detail, secs);
  }

  if (!desk) {
    report(9, "desk-scale directional experiment", Status::Skip, "run with --desk-scale", -1);
    report(10, "best-of-N monotonicity", Status::Skip, "run with --desk-scale", -1);
    return all_ok ? 0 : 1;
  }
  try {
    run_desk_scale(d);
  } catch (const std::exception& e) {
    report(9, "desk-scale directional experiment", Status::Fail, std::string("threw: ") + e.what(), -1);
    report(10, "best-of-N monotonicity", Status::Fail, "not reached", -1);
    return 1;
  }
  return all_ok ? 0 : 1;
}
