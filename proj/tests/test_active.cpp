#include <gtest/gtest.h>

#include "exrec/active.hpp"
#include "exrec/error.hpp"

using namespace exrec;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab = 7;  // 6 exercises + pad
  c.window = 3;
  c.item_embed = 4;
  c.user_embed = 3;
  c.item_profile_embed = 2;
  c.attention = 3;
  c.hidden = 5;
  c.user_features = 2;
  c.item_features = 2;
  return c;
}

std::shared_ptr<const WindowBuilder> builder() {
  std::vector<Vector> profiles;
  for (int i = 0; i < 6; ++i) profiles.push_back((Vector(2) << i / 5.0, 1.0).finished());
  profiles.push_back(Vector::Zero(2));
  return std::make_shared<const WindowBuilder>(3, 6, profiles);
}

std::shared_ptr<const MarginalDistribution> dist() {
  static const auto d =
      std::make_shared<const MarginalDistribution>(MarginalDistribution::tabulate({{1.59, 0.42, 0.31}}, 201, 201));
  return d;
}

Session make_session(double theta, std::size_t budget = std::numeric_limits<std::size_t>::max(),
                     std::uint64_t seed = 5) {
  SessionOptions o;
  o.budget = budget;
  o.topk = 10;
  return Session("u1", ModelParams::initialize(tiny(), seed), Vector::Constant(2, 0.3),
                 {builder(), dist(), theta}, o, {0, 1});
}

}  // namespace

TEST(Session, AutoWhenMarginAboveThreshold) {
  Session s = make_session(0.0);
  const Decision d = s.step();
  EXPECT_FALSE(d.queried());
  EXPECT_GE(d.z, 0.0);
  EXPECT_LT(d.recommendation, 6u);
  EXPECT_EQ(s.steps(), 1u);
  EXPECT_EQ(s.queries(), 0u);
}

TEST(Session, QueriedWhenMarginBelowThreshold) {
  Session s = make_session(2.0);  // every z < 2
  const Decision d = s.step();
  ASSERT_TRUE(d.queried());
  ASSERT_TRUE(d.ticket);
  EXPECT_EQ(d.ticket->topk.size(), 6u);  // min(10, exercises)
  EXPECT_EQ(d.ticket->history, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(d.ticket->step, 2u);
  EXPECT_DOUBLE_EQ(d.ticket->z, d.z);
  EXPECT_EQ(d.recommendation, d.ticket->topk.front().id);
  // Pending ticket is returned again without a new step.
  const Decision again = s.step();
  EXPECT_EQ(again.ticket->id, d.ticket->id);
  EXPECT_EQ(s.steps(), 1u);
  EXPECT_EQ(s.queries(), 1u);
}

TEST(Session, ThresholdRuleExamples) {
  const double theta = 0.18;
  const std::size_t unlimited = std::numeric_limits<std::size_t>::max();
  EXPECT_FALSE(should_query(0.25, theta, 0, unlimited));
  EXPECT_TRUE(should_query(0.05, theta, 0, unlimited));
  EXPECT_FALSE(should_query(0.05, theta, 0, 0));
  EXPECT_FALSE(should_query(0.18, theta, 0, unlimited));
  EXPECT_FALSE(should_query(0.0, 0.0, 0, unlimited));
  Session s = make_session(theta);
  const Decision d = s.step();
  EXPECT_EQ(d.queried(), d.z < theta);
}

TEST(Session, BudgetExhaustionFallsBackToTopOne) {
  Session s = make_session(2.0, 1);
  const Decision first = s.step();
  ASSERT_TRUE(first.queried());
  s.resolve(first.ticket->id, 3);
  const Decision second = s.step();
  EXPECT_FALSE(second.queried());
  EXPECT_EQ(s.queries(), 1u);
  Session none = make_session(2.0, 0);
  EXPECT_FALSE(none.step().queried());
}

TEST(Session, ResolveFinetunesTowardsCorrection) {
  for (std::size_t corrected = 0; corrected < 6; ++corrected) {
    Session s = make_session(2.0);
    const Decision d = s.step();
    const Window w = builder()->build(s.history(), s.user_profile());
    const double before = predict_proba(s.params(), w)[static_cast<Eigen::Index>(corrected)];
    s.resolve(d.ticket->id, corrected);
    const double after = predict_proba(s.params(), w)[static_cast<Eigen::Index>(corrected)];
    EXPECT_GT(after, before) << corrected;
    EXPECT_EQ(s.history().back(), corrected);
    EXPECT_EQ(s.corrections(), 1u);
    EXPECT_FALSE(s.pending());
  }
}

TEST(Session, ResolvingWithOwnTopOneStillUpdates) {
  Session s = make_session(2.0);
  const ModelParams before = s.params();
  const Decision d = s.step();
  s.resolve(d.ticket->id, d.recommendation);
  EXPECT_FALSE(s.params() == before);
}

TEST(Session, ResolveErrors) {
  Session s = make_session(2.0);
  const Decision d = s.step();
  EXPECT_THROW(s.resolve(d.ticket->id, 6), InputError);  // pad id
  EXPECT_THROW(s.resolve(d.ticket->id + 1, 0), StateError);
  EXPECT_THROW(s.observe(0), StateError);
  s.resolve(d.ticket->id, 0);
  EXPECT_THROW(s.resolve(d.ticket->id, 0), StateError);
}

TEST(Session, NoDistributionIsStateError) {
  Session s("u", ModelParams::initialize(tiny(), 1), Vector::Zero(2), {builder(), nullptr, 0.1});
  EXPECT_THROW(s.step(), StateError);
}

TEST(Session, SessionsAreIsolated) {
  Session a = make_session(2.0, std::numeric_limits<std::size_t>::max(), 5);
  Session b = make_session(2.0, std::numeric_limits<std::size_t>::max(), 5);
  const ModelParams b0 = b.params();
  const Decision d = a.step();
  a.resolve(d.ticket->id, 4);
  EXPECT_TRUE(b.params() == b0);
  EXPECT_FALSE(a.params() == b0);
}

TEST(Session, QueriedStepsMatchThresholdRule) {
  // Replay a sequence; every step is queried iff z < theta.
  const std::vector<std::size_t> truth{0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5};
  for (double theta : {0.0, 0.005, 0.02, 0.1, 1.1}) {
    SessionOptions o;
    Session s("u", ModelParams::initialize(tiny(), 9), Vector::Constant(2, 0.3),
              {builder(), dist(), theta}, o, {truth[0], truth[1]});
    ReplayOracle oracle(truth);
    std::vector<std::size_t> expected;
    for (std::size_t t = 2; t < truth.size(); ++t) {
      const Decision d = s.step();
      if (d.z < theta) expected.push_back(t);
      if (d.queried()) {
        s.resolve(d.ticket->id, oracle.correct(*d.ticket));
      } else {
        s.observe(truth[t]);
      }
    }
    EXPECT_EQ(s.queried_steps(), expected) << theta;
    EXPECT_EQ(s.history(), truth);
    if (theta == 0.0) EXPECT_EQ(s.queries(), 0u);
    EXPECT_LE(s.queries(), s.steps());
  }
}

TEST(ReplayOracle, ReturnsTruthAndRejectsBeyond) {
  ReplayOracle o({4, 3, 2, 1, 0, 5, 1});
  ReviewTicket t;
  t.step = 5;
  EXPECT_EQ(o.correct(t), 5u);
  t.step = 7;
  EXPECT_THROW(o.correct(t), InputError);
}

TEST(Session, JsonRoundTripPreservesState) {
  Session s = make_session(2.0);
  s.resolve(s.step().ticket->id, 2);
  const Decision pending = s.step();
  const auto j = nlohmann::json::parse(s.to_json().dump());
  Session r = Session::from_json(j, {builder(), dist(), 2.0});
  EXPECT_TRUE(r.params() == s.params());
  EXPECT_EQ(r.history(), s.history());
  EXPECT_EQ(r.queries(), s.queries());
  ASSERT_TRUE(r.pending());
  EXPECT_EQ(r.pending()->id, pending.ticket->id);
  EXPECT_EQ(r.step().ticket->topk, pending.ticket->topk);
}
