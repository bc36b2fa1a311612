#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "mpd/env/dataset.hpp"
#include "mpd/env/demos.hpp"
#include "mpd/env/lattice.hpp"
#include "mpd/env/obstacle.hpp"

using namespace mpd;
using namespace mpd::env;

namespace {

Eigen::Vector4d attachments_of(const LatticeState& s) {
  Eigen::Vector4d c;
  c << s.pos.row(s.attach[0]).transpose(), s.pos.row(s.attach[1]).transpose();
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpd_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Lattice, EquilibriumPreserved) {
  const LatticeState s = make_lattice(LatticeParams{}, {-0.3, 0.3});
  const LatticeState next = lattice_step(s, attachments_of(s), s.params.dt_sim);
  EXPECT_EQ(next.pos, s.pos);
  EXPECT_EQ(next.vel, s.vel);
}

TEST(Lattice, EnergyNonIncreasingWithStaticAttachments) {
  LatticeState s = make_lattice(LatticeParams{}, {-0.3, 0.3});
  s.pos.row(12) += Eigen::RowVector2d(0.06, -0.05);
  s.pos.row(21) += Eigen::RowVector2d(-0.03, 0.02);
  const Eigen::Vector4d c = attachments_of(s);
  double e = lattice_energy(s);
  const double e0 = e;
  for (int i = 0; i < 3000; ++i) {
    s = lattice_step(s, c, s.params.dt_sim);
    const double next = lattice_energy(s);
    ASSERT_LE(next, e * (1.0 + 1e-12) + 1e-300) << "step " << i;
    e = next;
  }
  EXPECT_LT(e, 1e-6 * e0);
}

TEST(Lattice, RefinedStepSelfConsistency) {
  // 3x3 sheet, attachments driven along a fixed script; compare against the
  // same script simulated with a ten times smaller step.
  auto run = [](double dt) {
    LatticeParams p;
    p.rows = p.cols = 3;
    p.dt_sim = dt;
    LatticeState s = make_lattice(p, {-0.15, 0.15});
    const Eigen::Vector4d c0 = attachments_of(s);
    const int steps = static_cast<int>(std::lround(2.0 / dt));
    for (int i = 0; i < steps; ++i) {
      const double t = i * dt;
      const double u = std::min(t, 1.0);
      Eigen::Vector4d c = c0;
      c(0) += 0.1 * std::sin(M_PI * u);
      c(1) -= 0.15 * u;
      c(2) += 0.05 * u;
      c(3) -= 0.1 * u;
      s = lattice_step(s, c, dt);
    }
    Eigen::Vector4d m;
    m << s.pos.row(s.marker[0]).transpose(), s.pos.row(s.marker[1]).transpose();
    return m;
  };
  const Eigen::Vector4d coarse = run(0.005);
  const Eigen::Vector4d fine = run(0.0005);
  EXPECT_LE((coarse - fine).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Lattice, Errors) {
  LatticeState s = make_lattice(LatticeParams{}, {-0.3, 0.3});
  EXPECT_THROW(lattice_step(s, attachments_of(s), 0.01), ContractError);
  EXPECT_THROW(lattice_step(s, Eigen::Vector4d::Constant(NAN), s.params.dt_sim), ContractError);
  s.pos(7, 0) = NAN;
  EXPECT_THROW(lattice_step(s, attachments_of(s), s.params.dt_sim), SimulationError);
  LatticeState dup = make_lattice(LatticeParams{}, {-0.3, 0.3});
  dup.marker[1] = dup.attach[0];
  EXPECT_THROW(dup.validate(), ContractError);
}

TEST(Lattice, ServoClampsDisplacement) {
  LatticeState s = make_lattice(LatticeParams{}, {-0.3, 0.3});
  Eigen::Vector4d c = attachments_of(s);
  c(0) += 5.0;
  const LatticeState next = lattice_step(s, c, s.params.dt_sim);
  const double moved = (next.pos.row(s.attach[0]) - s.pos.row(s.attach[0])).norm();
  EXPECT_LE(moved, s.params.max_speed * s.params.dt_sim * (1 + 1e-12));
  EXPECT_GT(moved, 0.0);
}

TEST(LatticeEnv, ObservationLayout) {
  LatticeEnv env;
  Rng rng(5);
  env.reset(rng);
  const Eigen::VectorXd o = env.observe();
  ASSERT_EQ(o.size(), 12);
  EXPECT_EQ(env.obs_dim(), 12);
  EXPECT_EQ(o.head(4), env.command_pose());
  EXPECT_EQ(o.segment(4, 4), env.tracked_points());

  // Markers placed on their targets.
  auto& st = env.mutable_state();
  for (int m = 0; m < 2; ++m) st.pos.row(st.marker[m]) = st.target[m].transpose();
  const Eigen::VectorXd aligned = env.observe();
  EXPECT_EQ(aligned.segment(4, 4), aligned.segment(8, 4));
  EXPECT_TRUE(env.success(1e-12));

  LatticeEnv copy = env;
  EXPECT_EQ(copy.observe(), env.observe());
}

TEST(LatticeEnv, SuccessThresholdEdge) {
  LatticeEnv env;
  Rng rng(6);
  env.reset(rng);
  auto& st = env.mutable_state();
  const double thr = 0.05, eps = 1e-6;
  st.pos.row(st.marker[0]) = (st.target[0] + Eigen::Vector2d(thr + eps, 0.0)).transpose();
  st.pos.row(st.marker[1]) = st.target[1].transpose();
  EXPECT_FALSE(env.success(thr));
  EXPECT_TRUE(env.success(thr + 2 * eps));
}

TEST(LatticeEnv, TargetsAreEquilibriumOfGoal) {
  LatticeEnv env;
  Rng rng(7);
  env.reset(rng);
  const Eigen::Vector4d goal = env.goal_attachments();
  EXPECT_FALSE(env.success(0.05));
  // Driving the real sheet to the goal placement and waiting brings the markers onto the targets.
  LatticeEnv driven = env;
  for (int i = 0; i < 4000; ++i) driven.step(goal);
  EXPECT_TRUE(driven.success(1e-3));
}

TEST(Obstacle, ControlAtPositionDoesNotMove) {
  ObstacleParams p;
  ObstacleState s;
  s.pos = Eigen::Vector2d(-0.5, 0.3);
  const ObstacleState next = obstacle_step(p, s, s.pos, p.dt_sim);
  EXPECT_EQ(next.pos, s.pos);
  EXPECT_EQ(next.vel, s.vel);
  EXPECT_FALSE(next.collided);
}

TEST(Obstacle, StraightLineThroughCenterCollides) {
  ObstacleEnv env;
  Rng rng(1);
  env.reset(rng);
  const Eigen::Vector2d a(-0.7, 0.0), b(0.7, 0.0);
  env.mutable_state().pos = a;
  for (int i = 0; i <= 600; ++i) {
    const double s = min_jerk(i / 600.0);
    env.step(Eigen::VectorXd(a + s * (b - a)));
  }
  EXPECT_TRUE(env.state().collided);
  EXPECT_GE((env.state().pos - env.params().center).norm(), env.params().radius - 1e-12);
  env.mutable_state().goal = env.state().pos;
  EXPECT_FALSE(env.success(1.0));
}

TEST(Obstacle, PathAroundAtDoubleRadiusIsClear) {
  ObstacleEnv env;
  const double r = env.params().radius;
  env.mutable_state().pos = Eigen::Vector2d(-2 * r, 0.0);
  // Half circle of radius 2r around the obstacle.
  for (int i = 0; i <= 800; ++i) {
    const double th = M_PI * (1.0 - min_jerk(i / 800.0));
    env.step(Eigen::VectorXd(Eigen::Vector2d(2 * r * std::cos(th), 2 * r * std::sin(th))));
  }
  EXPECT_FALSE(env.state().collided);
  EXPECT_NEAR(env.state().pos.x(), 2 * r, 1e-3);
}

TEST(Obstacle, ObservationAndSuccess) {
  ObstacleEnv env;
  Rng rng(2);
  env.reset(rng);
  EXPECT_EQ(env.observe().size(), 4);
  env.mutable_state().pos = env.state().goal;
  EXPECT_TRUE(env.success(1e-9));
  env.mutable_state().pos.x() += 0.05 + 1e-9;
  EXPECT_FALSE(env.success(0.05));
}

TEST(Demos, EveryEpisodeSucceeds) {
  for (const std::string task : {"lattice", "obstacle"}) {
    const auto demos = generate_demos(task, 12, 3);
    ASSERT_EQ(demos.size(), 12u);
    for (size_t i = 0; i < demos.size(); ++i) {
      const auto& e = demos[i].episode;
      EXPECT_TRUE(e.success);
      EXPECT_EQ(e.mode, i % 2 == 0 ? DemoMode::kA : DemoMode::kB);
      EXPECT_EQ(e.actions.cols(), task == "lattice" ? 4 : 2);
      EXPECT_EQ(demos[i].trace.size(), e.steps() * 20);
      // Actions start at the controlled pose.
      EXPECT_LE((e.actions.row(0) - e.observations.row(0).head(e.actions.cols())).cwiseAbs().maxCoeff(), 1e-15);
      // Final low-rate action is the last commanded position held at rest.
      Eigen::VectorXd last = demos[i].trace.commands.bottomRows(1).transpose();
      EXPECT_LE((e.actions.bottomRows(1).transpose() - last).norm(), 1e-12);
    }
  }
}

TEST(Demos, ObstacleModesPassOnOppositeSides) {
  ObstacleParams p;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    double lateral[2];
    for (int m = 0; m < 2; ++m) {
      const auto r = scripted_demo("obstacle", m == 0 ? DemoMode::kA : DemoMode::kB, seed);
      // Lateral offset of the executed path where it crosses the obstacle's x coordinate.
      const Eigen::MatrixXd& pos = r.trace.tracked;
      Eigen::Index cross = -1;
      for (Eigen::Index h = 1; h < pos.rows(); ++h)
        if (pos(h - 1, 0) < p.center.x() && pos(h, 0) >= p.center.x()) cross = h;
      ASSERT_GE(cross, 0);
      lateral[m] = pos(cross, 1) - p.center.y();
      EXPECT_GT(std::abs(lateral[m]), p.radius);
    }
    EXPECT_GT(lateral[0], 0.0) << "seed " << seed;
    EXPECT_LT(lateral[1], 0.0) << "seed " << seed;
  }
}

TEST(Demos, Deterministic) {
  const auto a = generate_demos("lattice", 4, 11);
  const auto b = generate_demos("lattice", 4, 11);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].episode == b[i].episode);
    EXPECT_EQ(a[i].trace.commands, b[i].trace.commands);
    EXPECT_EQ(a[i].trace.tracked, b[i].trace.tracked);
  }
  const auto c = generate_demos("lattice", 4, 12);
  EXPECT_FALSE(a[0].episode == c[0].episode);
}

TEST(Dataset, RoundTripIsBitExact) {
  const auto demos = generate_demos("obstacle", 5, 21);
  Dataset ds = make_dataset("obstacle", demos, 0.1);
  ds.episodes[1].observations(0, 0) = 0.1 + 1e-17;  // awkward value for decimal text
  ds.episodes[2].actions(3, 1) = -5e-324;
  const auto dir = temp_dir("roundtrip");
  write_dataset(dir, ds);
  const Dataset back = read_dataset(dir);
  EXPECT_TRUE(back == ds);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ManifestReportsEpisodeCount) {
  const auto demos = generate_demos("lattice", 150, 0);
  const Dataset ds = make_dataset("lattice", demos, 0.1);
  const auto dir = temp_dir("count");
  write_dataset(dir, ds);
  std::ifstream in(dir / "manifest.json");
  nlohmann::json m;
  in >> m;
  EXPECT_EQ(m["episodes"].size(), 150u);
  EXPECT_EQ(m["episode_count"].get<int>(), 150);
  EXPECT_EQ(m["dof"].get<int>(), 4);
  EXPECT_EQ(m["obs_dim"].get<int>(), 12);
  EXPECT_EQ(read_dataset(dir).size(), 150);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, CsvHeader) {
  const Dataset ds = make_dataset("obstacle", generate_demos("obstacle", 1, 2), 0.1);
  const auto dir = temp_dir("header");
  write_dataset(dir, ds);
  std::ifstream in(dir / "episode_0000.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "time,obs_0,obs_1,obs_2,obs_3,act_0,act_1");
  std::filesystem::remove_all(dir);
}

TEST(Dataset, MismatchedLengthsRejected) {
  Dataset ds = make_dataset("obstacle", generate_demos("obstacle", 2, 4), 0.1);
  ds.episodes[0].actions.conservativeResize(ds.episodes[0].actions.rows() - 1, Eigen::NoChange);
  const auto dir = temp_dir("mismatch");
  EXPECT_THROW(write_dataset(dir, ds), DatasetError);
  EXPECT_FALSE(std::filesystem::exists(dir / "manifest.json"));
}

TEST(Dataset, PrefixesAreNested) {
  const Dataset ds = make_dataset("obstacle", generate_demos("obstacle", 6, 8), 0.1);
  const Dataset small = ds.prefix(2), large = ds.prefix(4);
  for (int i = 0; i < small.size(); ++i) EXPECT_TRUE(small.episodes[i] == large.episodes[i]);
  EXPECT_THROW(ds.prefix(7), DatasetError);
}
