#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "exrec/error.hpp"
#include "exrec/eval.hpp"

using namespace exrec;

TEST(TopK, HandExample) {
  // Targets sit at ranks 1, 4 and 7.
  const std::vector<std::vector<std::size_t>> rankings{
      {5, 1, 2, 3, 4, 0, 6, 7, 8, 9},
      {1, 2, 3, 5, 4, 0, 6, 7, 8, 9},
      {1, 2, 3, 4, 0, 6, 5, 7, 8, 9},
  };
  const std::vector<std::size_t> targets{5, 5, 5};
  EXPECT_DOUBLE_EQ(topk_accuracy(rankings, targets, 1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(rankings, targets, 5), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(rankings, targets, 10), 1.0);
}

TEST(TopK, MonotoneInK) {
  std::mt19937_64 rng(3);
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::size_t> targets;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::size_t> r(20);
    std::iota(r.begin(), r.end(), 0);
    std::shuffle(r.begin(), r.end(), rng);
    rankings.push_back(r);
    targets.push_back(rng() % 20);
  }
  double prev = 0.0;
  for (std::size_t k = 1; k <= 20; ++k) {
    const double a = topk_accuracy(rankings, targets, k);
    EXPECT_GE(a, prev);
    prev = a;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(TopK, Errors) {
  const std::vector<std::vector<std::size_t>> r{{1}};
  const std::vector<std::size_t> t{1, 2};
  EXPECT_THROW(topk_accuracy(r, t, 1), InputError);
  EXPECT_THROW(topk_accuracy(r, std::span(t).first(1), 0), InputError);
  EXPECT_THROW(topk_accuracy({}, {}, 1), InputError);
}

TEST(Config, TableRowsAndJson) {
  EXPECT_THROW(ExperimentConfig::table1_row(0), ConfigError);
  EXPECT_THROW(ExperimentConfig::table1_row(10), ConfigError);
  const auto r9 = ExperimentConfig::table1_row(9);
  EXPECT_EQ(r9.augmentation, Augmentation::expert);
  EXPECT_TRUE(r9.coldstart);
  EXPECT_TRUE(r9.active);
  EXPECT_EQ(ExperimentConfig::table1_row(2).schema, ProfileSchema::full);
  EXPECT_EQ(ExperimentConfig::table1_row(4).augmentation, Augmentation::rules);
  auto c = ExperimentConfig::table1_row(7);
  c.theta_override = 0.02;
  c.budget = 4;
  const auto back = ExperimentConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(ExperimentConfig::from_json({{"augmentation", "magic"}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"epochs", "many"}}), ConfigError);
}

namespace {

Corpus small_corpus(std::uint64_t seed = 2) {
  SynthOptions o;
  o.users = 24;
  o.seed = seed;
  return synth_generate(o).corpus;
}

ExperimentConfig quick(int row) {
  auto c = ExperimentConfig::table1_row(row);
  c.epochs = 30;
  c.seeds = {1};
  return c;
}

}  // namespace

TEST(Loocv, ZeroThresholdEqualsBaselineExactly) {
  const Corpus c = small_corpus();
  const auto base = loocv_run(c, quick(1));
  auto active = quick(5);
  active.theta_override = 0.0;
  const auto a = loocv_run(c, active);
  ASSERT_EQ(a.per_fold.size(), base.per_fold.size());
  for (std::size_t i = 0; i < a.per_fold.size(); ++i) {
    EXPECT_EQ(a.per_fold[i].metrics.hit1, base.per_fold[i].metrics.hit1);
    EXPECT_EQ(a.per_fold[i].metrics.hit5, base.per_fold[i].metrics.hit5);
    EXPECT_EQ(a.per_fold[i].metrics.hit10, base.per_fold[i].metrics.hit10);
  }
  EXPECT_EQ(a.mean.top1, base.mean.top1);
  EXPECT_EQ(a.mean.top10, base.mean.top10);
  EXPECT_EQ(a.mean.query_rate, 0.0);
}

TEST(Loocv, AuditHasNoLeakageAndCoversEveryUser) {
  const Corpus c = small_corpus();
  auto cfg = quick(3);
  cfg.seeds = {1, 2};
  const auto r = loocv_run(c, cfg);
  ASSERT_EQ(r.audit.size(), 2 * c.users.size());
  std::set<std::string> held;
  for (const FoldAudit& a : r.audit) {
    EXPECT_EQ(a.held_out_in_train, 0u) << a.held_out;
    EXPECT_EQ(a.train_users, c.users.size() - 1);
    EXPECT_GT(a.test_windows, 0u);
    held.insert(a.held_out);
  }
  EXPECT_EQ(held.size(), c.users.size());
  std::size_t cases = 0;
  for (const auto& u : c.users) cases += u.sequence().size() - 1;
  EXPECT_EQ(r.per_seed[0].cases, cases);
}

TEST(Loocv, DeterministicAndCacheTransparent) {
  const Corpus c = small_corpus();
  ModelCache cache;
  const auto a = loocv_run(c, quick(5), &cache);
  EXPECT_EQ(cache.size(), c.users.size());
  const auto b = loocv_run(c, quick(5), &cache);
  const auto fresh = loocv_run(c, quick(5));
  EXPECT_EQ(a.to_json()["per_fold"], b.to_json()["per_fold"]);
  EXPECT_EQ(a.to_json()["per_fold"], fresh.to_json()["per_fold"]);
  // Row 1 shares the trained model with row 5.
  loocv_run(c, quick(1), &cache);
  EXPECT_EQ(cache.size(), c.users.size());
}

TEST(Loocv, QueryRateIsQueriesOverSteps) {
  const Corpus c = small_corpus();
  auto cfg = quick(5);
  cfg.theta_override = 0.05;
  const auto r = loocv_run(c, cfg);
  const Metrics& m = r.per_seed[0];
  EXPECT_GT(m.queries, 0u);
  EXPECT_EQ(m.steps, m.cases);
  EXPECT_DOUBLE_EQ(r.mean.query_rate, static_cast<double>(m.queries) / m.steps);
  for (const auto& f : r.per_fold) EXPECT_DOUBLE_EQ(f.theta, 0.05);
}

TEST(Loocv, CorrectedScoringNeverLowersAccuracy) {
  const Corpus c = small_corpus();
  auto cfg = quick(5);
  cfg.theta_override = 0.05;
  const auto pre = loocv_run(c, cfg);
  cfg.scoring = Scoring::corrected;
  const auto post = loocv_run(c, cfg);
  EXPECT_GE(post.mean.top1, pre.mean.top1);
}

TEST(Loocv, SeedSpreadIsSampleStd) {
  const Corpus c = small_corpus();
  auto cfg = quick(1);
  cfg.seeds = {1};
  const auto one = loocv_run(c, cfg);
  EXPECT_EQ(one.std.top1, 0.0);
  cfg.seeds = {1, 1};
  const auto twice = loocv_run(c, cfg);
  EXPECT_DOUBLE_EQ(twice.mean.top1, one.mean.top1);
  EXPECT_EQ(twice.std.top1, 0.0);
}

TEST(Loocv, ExpertNeedsTaxonomy) {
  Corpus c = small_corpus();
  c.items[3].path.clear();
  EXPECT_THROW(loocv_run(c, quick(3)), ConfigError);
  EXPECT_NO_THROW(loocv_run(c, quick(1)));
}

TEST(Loocv, SingleUserRejected) {
  Corpus c = small_corpus();
  c.users.resize(1);
  EXPECT_THROW(loocv_run(c, quick(1)), InputError);
}

TEST(Holdout, TrainAtLeastTestAndPopularity) {
  SynthOptions o;
  o.users = 20;
  o.seed = 4;
  const Corpus c = synth_generate(o).corpus;
  auto cfg = quick(1);
  cfg.epochs = 30;
  const auto r = holdout_run(c, cfg, 0.8, true);
  ASSERT_TRUE(r.train_metrics);
  EXPECT_GE(r.train_metrics->top10(), r.mean.top10);
  EXPECT_EQ(r.protocol, "holdout");
  const Metrics pop = popularity_baseline(c, 3, Padding::leading, 0.8);
  EXPECT_EQ(pop.cases, r.per_seed[0].cases);
  EXPECT_GE(pop.top5(), pop.top1());
}

TEST(Holdout, EmptyTestSplitRejected) {
  Corpus c = small_corpus();
  EXPECT_THROW(holdout_run(c, quick(1), 1.0), InputError);
  EXPECT_THROW(popularity_baseline(c, 3, Padding::leading, 1.0), InputError);
}

TEST(Table, HasOneLinePerRow) {
  const Corpus c = small_corpus();
  std::vector<RunResult> rs{loocv_run(c, quick(1)), loocv_run(c, quick(6))};
  const std::string t = render_table(rs);
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 3);
  EXPECT_NE(t.find("New user Init"), std::string::npos);
}
