#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "mglab/eval.hpp"

using namespace mglab;
namespace fs = std::filesystem;

namespace {

TrainConfig small_cfg() {
  TrainConfig c;
  c.network.grid = 32;
  c.network.rotations = 8;
  c.network.trunk_channels = 8;
  c.network.velocity_channels = 4;
  c.cell_size = 0.01;
  return c;
}

GeneratorState random_state(const TrainConfig& cfg, std::uint64_t seed) {
  GeneratorState g(cfg.network);
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 0.2);
  for (auto* s : {&g.perception1, &g.static_head, &g.perception2, &g.moving_head, &g.dynamic_head})
    for (auto* p : s->params())
      for (auto& v : p->value.values()) v = static_cast<float>(nd(rng));
  return g;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mglab_eval_" + name);
  fs::remove_all(d);
  return d;
}

struct ThreadGuard {
  int saved = num_threads();
  ~ThreadGuard() { set_num_threads(saved); }
};

}  // namespace

TEST(Mpph, TableFigures) {
  EXPECT_EQ(mpph(33.7), 106);
  EXPECT_EQ(mpph(22.5), 160);
  EXPECT_EQ(mpph(19.7), 182);
  EXPECT_EQ(mpph(17.7), 203);
  EXPECT_EQ(mpph(3600.0), 1);
  EXPECT_DOUBLE_EQ(mpph_exact(22.5), 160.0);
}

TEST(Mpph, RejectsNonPositiveTime) {
  EXPECT_THROW(mpph(0.0), std::invalid_argument);
  EXPECT_THROW(mpph(-1.0), std::invalid_argument);
  EXPECT_THROW(mpph(std::nan("")), std::invalid_argument);
}

TEST(Mpph, HalvingTimeDoublesRate) {
  for (double t : {7.0, 22.5, 33.7, 101.3}) EXPECT_NEAR(mpph_exact(t / 2), 2 * mpph_exact(t), 1e-9);
}

TEST(CollectionTime, MovingAndStopping) {
  const TimingConfig t;
  const double moving = collection_time(0.10, t.approach_distance, t.grasp_overhead);
  const double stop = stop_collection_time(0.10, t);
  EXPECT_NEAR(moving, 22.5, 1e-12);
  EXPECT_NEAR(stop, 33.7, 1e-12);
  EXPECT_NEAR(stop / moving, 1.5, 0.01);
  EXPECT_LT(collection_time(0.20, t.approach_distance, t.grasp_overhead), moving);
  EXPECT_THROW(collection_time(0.0, 1.0, 1.0), std::invalid_argument);
}

TEST(ResidualStats, Example) {
  const auto s = residual_stats({0.002, 0.006});
  EXPECT_EQ(s.n, 2u);
  EXPECT_NEAR(s.mean, 0.004, 1e-15);
  EXPECT_NEAR(s.std, 0.0028284271247, 1e-12);
}

TEST(ResidualStats, MatchesOnePassFormula) {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> xs(2 + rng() % 50);
    for (auto& x : xs) x = uniform(rng, -0.02, 0.03);
    long double sum = 0, sq = 0;
    for (double x : xs) {
      sum += x;
      sq += static_cast<long double>(x) * x;
    }
    const long double n = xs.size();
    const double var = static_cast<double>((sq - sum * sum / n) / (n - 1));
    const auto s = residual_stats(xs);
    EXPECT_NEAR(s.mean, static_cast<double>(sum / n), 1e-15);
    EXPECT_NEAR(s.std, std::sqrt(var), 1e-10);
  }
}

TEST(ResidualStats, NeedsTwoValues) {
  EXPECT_THROW(residual_stats({}), EvalError);
  EXPECT_THROW(residual_stats({0.01}), EvalError);
}

TEST(Velocities, ParseAndLabel) {
  const auto v = parse_velocities("0.10, 0.15,0.2,rv");
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].label(), "0.10");
  EXPECT_EQ(v[2].label(), "0.20");
  EXPECT_TRUE(v[3].random);
  EXPECT_EQ(v[3].label(), "rv");
  EXPECT_EQ(table_velocities().size(), 4u);
  EXPECT_THROW(parse_velocities(""), std::invalid_argument);
  EXPECT_THROW(parse_velocities("fast"), std::invalid_argument);
  EXPECT_THROW(parse_velocities("0.1x"), std::invalid_argument);
  EXPECT_THROW(parse_velocities("-0.1"), std::invalid_argument);
}

TEST(OraclePolicy, CompensatedSetpointHitsTarget) {
  const VelocityErrorModel e;
  for (double v : {0.10, 0.15, 0.22}) {
    const double u = compensated_velocity(v, e);
    EXPECT_NEAR(u + e.drift(u), v, 1e-14);
    EXPECT_NEAR(u, (v - 0.005) / 0.9, 1e-14);  // linear drift solved by hand
  }
}

TEST(EvalTrials, RandomVelocityDrawsFromTestSet) {
  const TrainConfig cfg = small_cfg();
  EvalConfig ec;
  std::set<double> seen;
  for (std::size_t t = 0; t < 400; ++t) {
    const auto e = eval_trial(cfg, ec, t);
    EXPECT_NE(std::find(cfg.test_velocities.begin(), cfg.test_velocities.end(), e.v_random),
              cfg.test_velocities.end());
    seen.insert(e.v_random);
    EXPECT_EQ(e.n_objects, cfg.objects_in(t % cfg.workspaces));
  }
  EXPECT_EQ(seen.size(), cfg.test_velocities.size());
}

TEST(EvalTrials, OracleSucceedsWithoutNoise) {
  TrainConfig cfg = small_cfg();
  cfg.error.noise_std = 0.0;
  EvalConfig ec;
  ec.trials = 60;
  ec.seed = 11;
  ec.velocities = parse_velocities("0.10,0.20,rv");
  const auto rep = run_policies({{"oracle", oracle_policy()}}, cfg, ec);
  for (const auto& c : rep.cells) EXPECT_GE(c.success_rate, 98.0) << c.velocity;
}

// The random policy's success rate is compared with an independent
// Monte-Carlo estimate: same trials, many uniformly drawn pixels each.
TEST(EvalTrials, RandomPolicyMatchesBaseRate) {
  const TrainConfig cfg = small_cfg();
  EvalConfig ec;
  ec.trials = 300;
  ec.seed = 2;
  ec.velocities = parse_velocities("0.15");
  const auto rep = run_policies({{"random", random_policy()}}, cfg, ec);

  const std::size_t r = cfg.network.rotations, n = cfg.network.grid;
  Rng pick(99);
  double expected = 0.0;
  for (std::size_t t = 0; t < ec.trials; ++t) {
    const auto e = eval_trial(cfg, ec, t);
    const SceneSpec scene = sample_trial_scene(e.scene_seed, cfg, e.n_objects);
    int hits = 0;
    constexpr int kDraws = 200;
    for (int d = 0; d < kDraws; ++d) {
      const std::size_t idx = pick() % (r * n * n);
      const GraspPrimitive g = grasp_at({(idx / n) % n, idx % n, idx / (n * n)}, r, cfg.frame());
      Rng sim(e.sim_seed);
      hits += simulate_mobile_grasp(scene, {0.15, 0.15}, g, cfg.error, cfg.gripper, cfg.timing, sim).success;
    }
    expected += static_cast<double>(hits) / kDraws;
  }
  expected = 100.0 * expected / static_cast<double>(ec.trials);
  const double p = expected / 100.0;
  const double sigma = 100.0 * std::sqrt(p * (1 - p) / static_cast<double>(ec.trials));
  EXPECT_NEAR(rep.cells[0].success_rate, expected, 4 * sigma + 0.5);
}

TEST(EvalTrials, ThreadCountDoesNotChangeResults) {
  ThreadGuard guard;
  const TrainConfig cfg = small_cfg();
  const GeneratorState g = random_state(cfg, 4);
  EvalConfig ec;
  ec.trials = 24;
  ec.velocities = parse_velocities("0.10,rv");
  set_num_threads(1);
  const auto a = run_ablation({{MethodVariant::PP, &g}, {MethodVariant::BL, &g}}, cfg, ec);
  set_num_threads(4);
  const auto b = run_ablation({{MethodVariant::PP, &g}, {MethodVariant::BL, &g}}, cfg, ec);
  const auto da = scratch("threads_a"), db = scratch("threads_b");
  render_report(a, da);
  render_report(b, db);
  for (const char* f : {"table_success.csv", "table_timing.csv", "residuals.csv", "summary.json"})
    EXPECT_EQ(slurp(da / f), slurp(db / f)) << f;
}

TEST(Ablation, RejectsMissingOrMismatchedCheckpoint) {
  const TrainConfig cfg = small_cfg();
  EvalConfig ec;
  ec.trials = 2;
  EXPECT_THROW(run_ablation({{MethodVariant::PP, nullptr}}, cfg, ec), EvalError);
  NetworkConfig other = cfg.network;
  other.rotations = 4;
  const GeneratorState g(other);
  EXPECT_THROW(run_ablation({{MethodVariant::PP, &g}}, cfg, ec), EvalError);
}

TEST(Ablation, BaselineCommandsUserVelocity) {
  const TrainConfig cfg = small_cfg();
  const GeneratorState g = random_state(cfg, 8);
  EvalConfig ec;
  ec.trials = 8;
  const auto policy = generator_policy(g, MethodVariant::BL);
  const auto rs = run_trials(policy, cfg, ec, {false, 0.15});
  for (const auto& r : rs) {
    EXPECT_DOUBLE_EQ(r.v_hat, 0.15);
    EXPECT_EQ(r.delta, 0.0);
  }
  // PP with random weights does move the setpoint, within the clamp band.
  const auto pp = run_trials(generator_policy(g, MethodVariant::PP), cfg, ec, {false, 0.15});
  for (const auto& r : pp) {
    EXPECT_NEAR(r.v_hat, 0.15 + r.delta, 1e-7);
    EXPECT_LE(std::abs(r.delta), cfg.network.residual_clamp + 1e-7);
  }
}

TEST(Report, TablesHaveOneRowPerCell) {
  const TrainConfig cfg = small_cfg();
  const GeneratorState g = random_state(cfg, 6);
  EvalConfig ec;
  ec.trials = 10;
  ec.velocities = parse_velocities("0.10,0.20,rv");
  const auto rep = run_ablation({{MethodVariant::PP, &g}, {MethodVariant::WO_M, &g}, {MethodVariant::BL, &g}}, cfg, ec);
  ASSERT_EQ(rep.cells.size(), 9u);
  const auto dir = scratch("report");
  render_report(rep, dir);

  const auto csv = lines(dir / "table_success.csv");
  ASSERT_EQ(csv.size(), 10u);
  EXPECT_EQ(csv[0], "method,velocity,trials,successes,success_rate");
  EXPECT_EQ(csv[1].rfind("PP,0.10,10,", 0), 0u);

  const auto md = lines(dir / "table_success.md");
  ASSERT_EQ(md.size(), 2u + 3u + 1u);
  EXPECT_EQ(md[0], "| v (m/s) | PP | WO_M | BL |");
  EXPECT_EQ(md[5].rfind("| mean |", 0), 0u);

  const auto rows = lines(dir / "table_methods.md");
  ASSERT_EQ(rows.size(), 2u + 3u);
  EXPECT_EQ(rows[0], "| method | 0.10 | 0.20 | rv | mean |");
  EXPECT_EQ(rows[4].rfind("| BL |", 0), 0u);

  const auto tim = lines(dir / "table_timing.csv");
  ASSERT_EQ(tim.size(), 11u);
  EXPECT_EQ(tim[1].rfind("stop-and-grasp,0.00,33.700,106,", 0), 0u);

  const auto js = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(js["cells"].size(), 9u);
  EXPECT_NEAR(js["mean_success"]["PP"].get<double>(), rep.method_mean("PP"), 1e-12);

  for (const auto& c : rep.cells) {
    EXPECT_NEAR(c.success_mpph, c.mpph * c.success_rate / 100.0, 1e-9);
    EXPECT_LE(c.success_mpph, c.mpph);
  }

  const auto again = scratch("report_again");
  render_report(rep, again);
  for (const auto& e : fs::directory_iterator(dir)) EXPECT_EQ(slurp(e.path()), slurp(again / e.path().filename()));
}

TEST(Report, EmptyReportWritesHeadersOnly) {
  const auto dir = scratch("empty");
  render_report(EvalReport{}, dir);
  EXPECT_EQ(slurp(dir / "table_success.csv"), "method,velocity,trials,successes,success_rate\n");
  EXPECT_EQ(slurp(dir / "table_timing.csv"), "method,velocity,mean_time_s,mpph,mpph_exact,success_mpph\n");
  EXPECT_EQ(slurp(dir / "residuals.csv"), "method,velocity,n,mean,std,positive\n");
  EXPECT_EQ(lines(dir / "table_success.md").size(), 2u);
  const auto js = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_TRUE(js["cells"].empty());
}

TEST(Report, ResidualRowsNeedTwoSuccesses) {
  const std::vector<TrialResult> one = {{0, 0.1, 0.1, 0.1, 0.003, {}, true, 20.0}, {1, 0.1, 0.1, 0.1, 0.0, {}, false, 20.0}};
  const auto c = summarize("PP", "0.10", one);
  EXPECT_FALSE(c.residual.has_value());
  EXPECT_DOUBLE_EQ(c.success_rate, 50.0);
  EXPECT_DOUBLE_EQ(c.mean_time, 20.0);
  EXPECT_DOUBLE_EQ(c.mpph, 180.0);
  EXPECT_DOUBLE_EQ(c.success_mpph, 90.0);
}

TEST(Render, AffordanceMapsPerRotation) {
  const TrainConfig cfg = small_cfg();
  const GeneratorState g = random_state(cfg, 3);
  const SceneSpec scene = sample_trial_scene(17, cfg, 3);
  const auto dir = scratch("maps");
  const auto files = render_maps(g, MethodVariant::PP, scene, 0.15, cfg.frame(), dir);
  EXPECT_EQ(files.size(), 2u + 3u * cfg.network.rotations);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;
  const std::string ppm = slurp(dir / "residual_k3.ppm");
  EXPECT_EQ(ppm.rfind("P6\n32 32\n255\n", 0), 0u);
  EXPECT_EQ(ppm.size(), std::string("P6\n32 32\n255\n").size() + 32u * 32u * 3u);
}

TEST(Render, CurvePlotSize) {
  const RgbImage img = plot_curves({{"PP", {0.0, 0.5, 1.0}}, {"BL", {0.2, 0.2}}}, 100, 200);
  EXPECT_EQ(img.height, 100u);
  EXPECT_EQ(img.width, 200u);
  EXPECT_EQ(img.pixels.size(), 100u * 200u * 3u);
}
