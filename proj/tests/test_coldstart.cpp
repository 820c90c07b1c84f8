#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "exrec/coldstart.hpp"
#include "exrec/error.hpp"

using namespace exrec;

namespace {

std::vector<std::string> names(const std::vector<Neighbor>& n) {
  std::vector<std::string> out;
  for (const auto& x : n) out.push_back(x.id);
  return out;
}

}  // namespace

TEST(SimilarUsers, HandExample) {
  const ProfileIndex idx({"A", "B", "C"}, {{0, 0}, {1, 0}, {3, 0}});
  EXPECT_EQ(names(idx.similar_users({0.9, 0}, 3)), (std::vector<std::string>{"B", "A", "C"}));
}

TEST(SimilarUsers, ExactMatchFirstAndSelfExcluded) {
  const ProfileIndex idx({"A", "B", "C", "D"}, {{0, 1}, {5, 2}, {1, 1}, {2, 7}});
  const auto n = idx.similar_users({5, 2}, 3);
  EXPECT_EQ(n[0].id, "B");
  EXPECT_DOUBLE_EQ(n[0].distance, 0.0);
  const auto ex = idx.similar_users({5, 2}, 3, std::string("B"));
  const auto ex_names = names(ex);
  EXPECT_EQ(std::count(ex_names.begin(), ex_names.end(), "B"), 0);
  EXPECT_EQ(ex.size(), 3u);
  EXPECT_THROW(idx.similar_users({5, 2}, 4, std::string("B")), InputError);
  EXPECT_THROW(idx.similar_users({5, 2}, 0), InputError);
}

TEST(SimilarUsers, TiesByIdAndDefaultK) {
  const ProfileIndex idx({"z", "b", "m", "a"}, {{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
  const auto n = idx.similar_users({0, 0});
  ASSERT_EQ(n.size(), 3u);
  EXPECT_EQ(names(n), (std::vector<std::string>{"a", "b", "m"}));
}

TEST(SimilarUsers, PermutationAndTranslationInvariantProperty) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng() % 10;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("u" + std::to_string(i));
      rows.push_back({g(rng), g(rng) * 10, g(rng) * 100});
    }
    const std::vector<double> q{g(rng), g(rng) * 10, g(rng) * 100};
    const auto base = names(ProfileIndex(ids, rows).similar_users(q, 3));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> pids;
    std::vector<std::vector<double>> prows;
    for (std::size_t i : perm) {
      pids.push_back(ids[i]);
      prows.push_back(rows[i]);
    }
    EXPECT_EQ(names(ProfileIndex(pids, prows).similar_users(q, 3)), base);

    const std::vector<double> shift{3.0, -7.0, 50.0};
    auto srows = rows;
    for (auto& r : srows) {
      for (std::size_t c = 0; c < 3; ++c) r[c] += shift[c];
    }
    auto sq = q;
    for (std::size_t c = 0; c < 3; ++c) sq[c] += shift[c];
    EXPECT_EQ(names(ProfileIndex(ids, srows).similar_users(sq, 3)), base);
  }
}

TEST(SimilarUsers, StandardizationBalancesUnits) {
  // Raw distance would be dominated by the second feature.
  const ProfileIndex idx({"A", "B"}, {{0, 0}, {1, 1000}, });
  const auto n = idx.similar_users({1, 400}, 2);
  EXPECT_EQ(n[0].id, "B");
}

TEST(SimilarUsers, MissingValuesImputed) {
  const ProfileIndex idx({"A", "B", "C"}, {{0, kMissing}, {2, 2}, {4, 4}});
  EXPECT_DOUBLE_EQ(idx.standardizer().mean[1], 3.0);
  EXPECT_EQ(idx.similar_users({kMissing, 3}, 1)[0].id, "B");
}

TEST(ProfileIndex, RejectsDuplicatesAndRagged) {
  EXPECT_THROW(ProfileIndex({"A", "A"}, {{0}, {1}}), InputError);
  EXPECT_THROW(ProfileIndex({"A", "B"}, {{0}, {1, 2}}), InputError);
  EXPECT_THROW(ProfileIndex({"A"}, {{0}, {1}}), InputError);
}

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab = 6;
  c.window = 2;
  c.item_embed = 4;
  c.user_embed = 3;
  c.item_profile_embed = 2;
  c.attention = 3;
  c.hidden = 4;
  c.user_features = 2;
  c.item_features = 1;
  return c;
}

WindowSample sample(std::size_t a, std::size_t b, std::size_t target, double u) {
  Window w;
  w.items = {a, b};
  for (std::size_t i : w.items) w.item_profiles.push_back(Vector::Constant(1, i == 5 ? 0.0 : 1.0));
  w.user_profile = (Vector(2) << u, 1.0 - u).finished();
  return {w, target, 0, 0};
}

}  // namespace

TEST(InitForNewUser, ZeroLearningRateIsIdentity) {
  const ModelParams g = ModelParams::initialize(tiny(), 1);
  ColdstartOptions o;
  o.learning_rate = 0.0;
  const auto r = init_for_new_user(g, {sample(0, 1, 2, 0.5)}, o);
  EXPECT_TRUE(r.params == g);
  EXPECT_FALSE(r.used_global);
}

TEST(InitForNewUser, EmptyPoolFallsBack) {
  const ModelParams g = ModelParams::initialize(tiny(), 1);
  const auto r = init_for_new_user(g, {});
  EXPECT_TRUE(r.used_global);
  EXPECT_TRUE(r.params == g);
}

TEST(InitForNewUser, NoAliasingAndDeterminism) {
  ModelParams g = ModelParams::initialize(tiny(), 2);
  const ModelParams g0 = g;
  const std::vector<WindowSample> pool{sample(0, 1, 2, 0.1), sample(1, 2, 3, 0.2)};
  auto a = init_for_new_user(g, pool);
  auto b = init_for_new_user(g, pool);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_FALSE(a.params == g);
  a.params.decoder(0, 0) += 1.0;
  EXPECT_TRUE(g == g0);
}

TEST(InitForNewUser, SimilarUsersTransferPattern) {
  // Two cohorts with opposite transitions 0 -> 1 (profile u=0) and 0 -> 2 (u=1).
  std::vector<WindowSample> all;
  for (int i = 0; i < 40; ++i) {
    all.push_back(sample(5, 0, 1, 0.0));
    all.push_back(sample(5, 0, 2, 1.0));
  }
  TrainOptions t;
  t.epochs = 5;
  t.seed = 3;
  const ModelParams global = train(all, tiny(), t).params;
  // Pool from three "similar" users of cohort u=0.
  std::vector<WindowSample> pool(9, sample(5, 0, 1, 0.0));
  ColdstartOptions o;
  o.learning_rate = 1e-3;
  o.epochs = 1;
  o.batch_size = 1;
  const auto personal = init_for_new_user(global, pool, o).params;
  const auto query = sample(5, 0, 1, 0.0).input;
  EXPECT_GT(predict_proba(personal, query)[1], predict_proba(global, query)[1]);
}
