#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "mpd/harness/run.hpp"

using namespace mpd;
using namespace mpd::harness;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpd_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

const env::Dataset& smoke_data() {
  static const env::Dataset ds = [] {
    const RunConfig c = preset("smoke");
    return env::make_dataset(c.task, generate_demonstrations(c), c.demos.dt_low);
  }();
  return ds;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(RunConfigJson, RoundTripsThroughOverlay) {
  RunConfig c = preset("desk");
  c.task = "obstacle";
  c.seeds = {3, 9};
  c.sweep.variants = {Variant::kRegression};
  c.eval.thresholds = {0.01, 0.2};
  RunConfig d;
  overlay_json(to_json(c), d);
  EXPECT_EQ(to_json(d), to_json(c));
}

TEST(RunConfigJson, UnknownKeysRejected) {
  RunConfig c;
  EXPECT_THROW(overlay_json(Json{{"epochz", 3}}, c), ConfigError);
  EXPECT_THROW(overlay_json(Json{{"train", {{"learning_rate", 1e-3}}}}, c), ConfigError);
  EXPECT_THROW(overlay_json(Json{{"prodmp", {{"dof", 3}}}}, c), ConfigError);
  EXPECT_THROW(overlay_json(Json{{"variant", "gan"}}, c), ConfigError);
}

TEST(RunConfigJson, PresetsAndValidation) {
  EXPECT_EQ(preset("default").train.epochs, 3000);
  EXPECT_EQ(preset("default").seeds.size(), 5u);
  EXPECT_EQ(preset("smoke").seeds.size(), 2u);
  EXPECT_EQ(preset("smoke").train.epochs, 200);
  EXPECT_THROW(preset("huge"), ConfigError);
  EXPECT_THROW(resolve_config("", Json{{"seeds", Json::array()}}), ConfigError);
  EXPECT_THROW(resolve_config("", Json{{"train", {{"epochs", 50}}}}), ConfigError);
  EXPECT_EQ(resolve_config("", Json{{"preset", "smoke"}}).demo_count, 12);
}

TEST(Training, SmokeRunLearnsAndWritesCheckpoints) {
  const RunConfig c = preset("smoke");
  const auto root = temp_dir("smoke_train");
  const auto runs = train_seeds(smoke_data(), c, root);
  ASSERT_EQ(runs.size(), 2u);
  for (const auto& r : runs) {
    ASSERT_EQ(r.result.log.size(), 200u);
    EXPECT_LT(r.result.log.back().loss, r.result.log.front().loss);
    EXPECT_TRUE(std::filesystem::exists(seed_dir(root, r.seed) / "best.ckpt"));
    EXPECT_TRUE(std::filesystem::exists(seed_dir(root, r.seed) / "last.ckpt"));
    EXPECT_TRUE(r.result.log[99].success.has_value());
    EXPECT_FALSE(r.result.log[98].success.has_value());
  }
}

TEST(Training, ResumeReplaysTheLossStream) {
  RunConfig c = preset("smoke");
  c.seeds = {4};
  c.train.checkpoint_every = 50;
  c.train.ema_decay = 0.99;
  const auto straight = train(smoke_data(), c.model, c.train, 4);

  std::optional<Checkpoint> saved;
  TrainHooks hooks;
  hooks.on_snapshot = [&](const Checkpoint& ck) {
    const auto file = temp_dir("resume") / "snap.ckpt";
    std::filesystem::create_directories(file.parent_path());
    denoiser::save_checkpoint(file, ck);
    saved = denoiser::load_checkpoint(file);
  };
  hooks.on_epoch = [](const EpochLog& l) { return l.epoch < 120; };
  train(smoke_data(), c.model, c.train, 4, std::nullopt, hooks);
  ASSERT_TRUE(saved.has_value());
  ASSERT_EQ(saved->epoch, 100);
  ASSERT_TRUE(saved->training_parameters.has_value());

  const auto resumed = train(smoke_data(), c.model, c.train, 4, saved);
  ASSERT_EQ(resumed.log.size(), 100u);
  for (size_t i = 0; i < resumed.log.size(); ++i) {
    EXPECT_EQ(resumed.log[i].epoch, straight.log[100 + i].epoch);
    EXPECT_EQ(resumed.log[i].loss, straight.log[100 + i].loss) << i;
    EXPECT_EQ(resumed.log[i].success, straight.log[100 + i].success);
  }
  EXPECT_EQ(resumed.last.params.net.parameters(), straight.last.params.net.parameters());
  EXPECT_EQ(resumed.best_epoch, straight.best_epoch);
}

TEST(Training, ResumeThroughRunDirectoryMatchesUninterruptedLog) {
  RunConfig c = preset("smoke");
  c.seeds = {2};
  c.train.checkpoint_every = 50;
  c.train.ema_decay = 0.99;
  const auto full = temp_dir("resume_full"), part = temp_dir("resume_part");
  train_seeds(smoke_data(), c, full);
  RunConfig shorter = c;
  shorter.train.epochs = 100;
  train_seeds(smoke_data(), shorter, part);
  train_seeds(smoke_data(), c, part, true);
  EXPECT_EQ(slurp(seed_dir(full, 2) / "train_log.csv"), slurp(seed_dir(part, 2) / "train_log.csv"));
}

TEST(Sweep, PrefixesAreNestedAndRowsPerCount) {
  const env::Dataset order = shuffled_once(smoke_data(), 0);
  std::set<std::uint64_t> all;
  for (const auto& e : smoke_data().episodes) all.insert(e.seed);
  std::set<std::uint64_t> shuffled;
  for (const auto& e : order.episodes) shuffled.insert(e.seed);
  EXPECT_EQ(all, shuffled);
  EXPECT_NE(order.episodes.front().seed, smoke_data().episodes.front().seed);
  const env::Dataset small = order.prefix(4), large = order.prefix(8);
  for (int i = 0; i < small.size(); ++i) EXPECT_EQ(small.episodes[i], large.episodes[i]);

  RunConfig c = preset("smoke");
  c.seeds = {0};
  c.train.epochs = 20;
  c.train.eval_every = 20;
  c.train.eval_rollouts = 2;
  c.eval.n_rollouts = 2;
  c.sweep.counts = {4, 8};
  const auto rows = sweep_demos(smoke_data(), c);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].count, 4);
  EXPECT_EQ(rows[1].count, 8);
  EXPECT_EQ(rows[2].variant, Variant::kBaseline);
  c.sweep.counts = {13};
  EXPECT_THROW(sweep_demos(smoke_data(), c), ConfigError);
}

TEST(Demonstrator, ReplayReproducesStoredEpisodes) {
  const RunConfig c = preset("smoke");
  const auto demos = replay_demonstrator(smoke_data(), c.demos);
  ASSERT_EQ(demos.size(), 12u);
  const auto reports = demonstration_metrics(demos);
  const auto ref = metrics::aggregate(reports).mean;
  for (double v : metrics::normalize_report(ref, ref).ratio.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  env::Dataset tampered = smoke_data();
  tampered.episodes[3].actions(2, 1) += 1e-9;
  EXPECT_THROW(replay_demonstrator(tampered, c.demos), DatasetError);
}

TEST(Evaluation, CsvExportsAreDeterministic) {
  RunConfig c = preset("smoke");
  c.seeds = {1};
  c.train.epochs = 20;
  c.train.eval_every = 20;
  c.eval.n_rollouts = 3;
  const auto ck = train_seeds(smoke_data(), c).front().result.best;
  const auto dir = temp_dir("eval_csv");
  std::filesystem::create_directories(dir);
  const metrics::MetricsReport ref = metrics::aggregate(demonstration_metrics(replay_demonstrator(smoke_data(), c.demos))).mean;
  for (const char* name : {"a", "b"}) {
    const auto e = evaluate_checkpoint(ck, c, "mpd_0");
    write_success_curve_csv(dir / (std::string(name) + "_curve.csv"), {e});
    write_comparison_csv(dir / (std::string(name) + "_cmp.csv"), {e}, ref);
  }
  EXPECT_EQ(slurp(dir / "a_curve.csv"), slurp(dir / "b_curve.csv"));
  EXPECT_EQ(slurp(dir / "a_cmp.csv"), slurp(dir / "b_cmp.csv"));
  std::ifstream in(dir / "a_curve.csv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(c.eval.thresholds.size()));
}

TEST(ParallelFor, CoversEveryIndexAndRethrowsFirstFailure) {
  std::vector<int> hit(37, 0);
  parallel_for(37, 4, [&](int i) { hit[static_cast<size_t>(i)] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](int i) {
                              if (i == 6) throw ConfigError("six");
                            }),
               ConfigError);
}
