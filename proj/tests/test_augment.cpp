#include <algorithm>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "exrec/augment.hpp"
#include "exrec/error.hpp"

using namespace exrec;

namespace {

// Leaves: {0,1,2} "a", {3,4} "b", {5} "c".
std::vector<ItemInfo> taxonomy() {
  std::vector<ItemInfo> t(6);
  const char* leaf[] = {"a", "a", "a", "b", "b", "c"};
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i].key = std::to_string(i);
    t[i].path = {"root", leaf[i]};
  }
  return t;
}

// Exhaustive oracle: enumerate every pair of items and count directly.
std::vector<AssociationRule> brute_force_rules(const std::vector<std::vector<std::size_t>>& tx,
                                               std::size_t n_items, double min_support,
                                               double min_confidence) {
  const double total = static_cast<double>(tx.size());
  auto contains = [](const std::vector<std::size_t>& t, std::size_t x) {
    return std::find(t.begin(), t.end(), x) != t.end();
  };
  std::vector<AssociationRule> out;
  for (std::size_t a = 0; a < n_items; ++a) {
    for (std::size_t b = 0; b < n_items; ++b) {
      if (a == b) continue;
      double ca = 0, cab = 0;
      for (const auto& t : tx) {
        if (contains(t, a)) {
          ++ca;
          if (contains(t, b)) ++cab;
        }
      }
      if (ca == 0) continue;
      if (cab / total + 1e-12 >= min_support && ca / total + 1e-12 >= min_support &&
          cab / ca + 1e-12 >= min_confidence) {
        out.push_back({a, b, cab / total, cab / ca});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return std::tie(x.antecedent, x.consequent) < std::tie(y.antecedent, y.consequent);
  });
  return out;
}

// Exhaustive frequent itemsets via bitmask enumeration.
std::vector<std::vector<std::size_t>> brute_force_itemsets(
    const std::vector<std::vector<std::size_t>>& tx, std::size_t n_items, double min_support) {
  std::vector<std::vector<std::size_t>> out;
  for (unsigned mask = 1; mask < (1u << n_items); ++mask) {
    std::vector<std::size_t> set;
    for (std::size_t i = 0; i < n_items; ++i) {
      if (mask & (1u << i)) set.push_back(i);
    }
    std::size_t count = 0;
    for (const auto& t : tx) {
      bool all = true;
      for (std::size_t x : set) all = all && std::find(t.begin(), t.end(), x) != t.end();
      count += all;
    }
    if (static_cast<double>(count) >= min_support * static_cast<double>(tx.size()) - 1e-9) {
      out.push_back(set);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(AugmentExpert, ZeroRateIsIdentity) {
  const std::vector<Sequence> seqs{{0, 1, 3, 5}, {4, 4, 2}};
  EXPECT_EQ(augment_expert(seqs, taxonomy(), 0.0, 1), seqs);
}

TEST(AugmentExpert, TenPercentOfTenChangesOneWithinLeaf) {
  const auto tax = taxonomy();
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const std::vector<Sequence> seqs{{0, 1, 2, 3, 4, 0, 1, 2, 3, 4}};
    const auto out = augment_expert(seqs, tax, 0.10, seed);
    ASSERT_EQ(out.size(), 1u);
    ASSERT_EQ(out[0].size(), 10u);
    int diffs = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      if (out[0][i] != seqs[0][i]) {
        ++diffs;
        EXPECT_EQ(tax[out[0][i]].leaf(), tax[seqs[0][i]].leaf());
      }
    }
    EXPECT_EQ(diffs, 1) << "seed " << seed;
  }
}

TEST(AugmentExpert, SingletonLeavesAreSkipped) {
  const std::vector<Sequence> seqs{{5, 5, 5, 5, 5}};
  EXPECT_EQ(augment_expert(seqs, taxonomy(), 1.0, 3), seqs);
}

TEST(AugmentExpert, DeterministicAndSeedSensitive) {
  std::vector<Sequence> seqs;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    Sequence s(30);
    for (auto& v : s) v = rng() % 6;
    seqs.push_back(s);
  }
  EXPECT_EQ(augment_expert(seqs, taxonomy(), 0.3, 9), augment_expert(seqs, taxonomy(), 0.3, 9));
  EXPECT_NE(augment_expert(seqs, taxonomy(), 0.3, 9), augment_expert(seqs, taxonomy(), 0.3, 10));
}

TEST(AugmentExpert, InvariantsProperty) {
  const auto tax = taxonomy();
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Sequence s(rng() % 25);
    for (auto& v : s) v = rng() % 6;
    const double rate = static_cast<double>(rng() % 101) / 100.0;
    const std::vector<Sequence> in{s};
    const auto out = augment_expert(in, tax, rate, trial);
    ASSERT_EQ(out[0].size(), s.size());
    std::size_t diffs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_LT(out[0][i], tax.size());
      EXPECT_EQ(tax[out[0][i]].leaf(), tax[s[i]].leaf());
      diffs += out[0][i] != s[i];
    }
    EXPECT_LE(diffs, augment_count(rate, s.size()));
  }
}

TEST(AugmentExpert, Errors) {
  const std::vector<Sequence> bad{{0, 9}};
  EXPECT_THROW(augment_expert(bad, taxonomy(), 0.1, 1), InputError);
  const std::vector<Sequence> ok{{0, 1}};
  EXPECT_THROW(augment_expert(ok, taxonomy(), 1.5, 1), InputError);
}

TEST(AugmentCount, CeilingOfRateTimesLength) {
  EXPECT_EQ(augment_count(0.1, 10), 1u);
  EXPECT_EQ(augment_count(0.1, 11), 2u);
  EXPECT_EQ(augment_count(0.1, 1), 1u);
  EXPECT_EQ(augment_count(0.0, 100), 0u);
  EXPECT_EQ(augment_count(0.3, 10), 3u);  // 0.3 * 10 is 3.0000000000000004
}

TEST(MineRules, AllTransactionsShareAB) {
  const std::vector<std::vector<std::size_t>> tx(10, {0, 1});
  const auto rules = mine_rules(tx);
  ASSERT_EQ(rules.size(), 2u);
  EXPECT_EQ(rules[0].antecedent, 0u);
  EXPECT_EQ(rules[0].consequent, 1u);
  EXPECT_DOUBLE_EQ(rules[0].support, 1.0);
  EXPECT_DOUBLE_EQ(rules[0].confidence, 1.0);
}

TEST(MineRules, HandCorpusMatchesBruteForce) {
  const std::vector<std::vector<std::size_t>> tx{
      {0, 1, 2}, {0, 1}, {0, 2, 3}, {1, 2}, {0, 1, 2, 3}, {3, 4}};
  auto rules = mine_rules(tx, 0.3, 0.6);
  std::sort(rules.begin(), rules.end(), [](const auto& x, const auto& y) {
    return std::tie(x.antecedent, x.consequent) < std::tie(y.antecedent, y.consequent);
  });
  const auto oracle = brute_force_rules(tx, 5, 0.3, 0.6);
  ASSERT_EQ(rules.size(), oracle.size());
  for (std::size_t i = 0; i < rules.size(); ++i) {
    EXPECT_EQ(rules[i].antecedent, oracle[i].antecedent);
    EXPECT_EQ(rules[i].consequent, oracle[i].consequent);
    EXPECT_DOUBLE_EQ(rules[i].support, oracle[i].support);
    EXPECT_DOUBLE_EQ(rules[i].confidence, oracle[i].confidence);
  }
  // e.g. {3} appears 3 times, {0,3} twice: 3 -> 0 has confidence 2/3.
  EXPECT_TRUE(std::any_of(rules.begin(), rules.end(), [](const auto& r) {
    return r.antecedent == 3 && r.consequent == 0 && std::abs(r.confidence - 2.0 / 3.0) < 1e-15;
  }));
}

TEST(MineRules, RandomCorporaMatchBruteForceProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n_items = 2 + rng() % 9;
    std::vector<std::vector<std::size_t>> tx(1 + rng() % 30);
    for (auto& t : tx) {
      const std::size_t len = 1 + rng() % 5;
      for (std::size_t k = 0; k < len; ++k) t.push_back(rng() % n_items);
    }
    const double sup = 0.05 + 0.3 * static_cast<double>(rng() % 100) / 100.0;
    const double conf = 0.3 + 0.7 * static_cast<double>(rng() % 100) / 100.0;

    auto rules = mine_rules(tx, sup, conf);
    EXPECT_TRUE(std::is_sorted(rules.begin(), rules.end(), [](const auto& x, const auto& y) {
      return x.confidence > y.confidence;
    }));
    std::sort(rules.begin(), rules.end(), [](const auto& x, const auto& y) {
      return std::tie(x.antecedent, x.consequent) < std::tie(y.antecedent, y.consequent);
    });
    const auto oracle = brute_force_rules(tx, n_items, sup, conf);
    ASSERT_EQ(rules.size(), oracle.size()) << "trial " << trial;
    for (std::size_t i = 0; i < rules.size(); ++i) {
      EXPECT_EQ(rules[i].antecedent, oracle[i].antecedent);
      EXPECT_EQ(rules[i].consequent, oracle[i].consequent);
    }

    std::vector<std::vector<std::size_t>> sets;
    for (const auto& s : frequent_itemsets(tx, sup)) sets.push_back(s.items);
    std::sort(sets.begin(), sets.end());
    EXPECT_EQ(sets, brute_force_itemsets(tx, n_items, sup)) << "trial " << trial;
  }
}

TEST(MineRules, EdgeCases) {
  EXPECT_TRUE(mine_rules(std::vector<std::vector<std::size_t>>{}).empty());
  const std::vector<std::vector<std::size_t>> varied{{0, 1}, {1, 2}, {0, 2}, {3}};
  EXPECT_TRUE(mine_rules(varied, 1.0, 0.5).empty());
  EXPECT_THROW(mine_rules(varied, 0.0, 0.5), InputError);
  EXPECT_THROW(mine_rules(varied, 0.5, 1.5), InputError);
}

TEST(AugmentRules, NoRulesIsIdentity) {
  const std::vector<Sequence> seqs{{0, 1, 2, 3}};
  EXPECT_EQ(augment_rules(seqs, {}, 6, 0.5, 1), seqs);
}

TEST(AugmentRules, ForcedSubstitution) {
  const std::vector<Sequence> seqs{Sequence(10, 0)};
  const std::vector<AssociationRule> rules{{0, 1, 0.5, 0.9}};
  const auto out = augment_rules(seqs, rules, 2, 0.1, 4);
  EXPECT_EQ(std::count(out[0].begin(), out[0].end(), 1u), 1);
  EXPECT_EQ(std::count(out[0].begin(), out[0].end(), 0u), 9);
  EXPECT_EQ(out, augment_rules(seqs, rules, 2, 0.1, 4));
  // Only the antecedent side is rewritten.
  const std::vector<Sequence> reverse{Sequence(10, 1)};
  EXPECT_EQ(augment_rules(reverse, rules, 2, 1.0, 4), reverse);
}

TEST(RuleTransactions, UserDaysAndFallback) {
  Corpus c;
  c.items.resize(4);
  UserRecord a;
  a.id = "a";
  a.events = {{0, 0, 0, true}, {1, 0, 1, true}, {2, 2, 0, true}, {3, 2, 1, false}};
  UserRecord b;
  b.id = "b";
  b.events = {{0, 0, 0, true}, {1, 0, 0, true}, {2, 0, 0, true}, {3, 0, 0, true}};
  c.users = {a, b};
  const auto tx = rule_transactions(c);
  ASSERT_EQ(tx.size(), 4u);
  EXPECT_EQ(tx[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(tx[1], (std::vector<std::size_t>{2}));
  EXPECT_EQ(tx[2], (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(tx[3], (std::vector<std::size_t>{3}));
}

TEST(RulesCsv, Format) {
  std::vector<ItemInfo> items(2);
  items[0].key = "10";
  items[1].key = "20";
  const std::vector<AssociationRule> rules{{0, 1, 0.25, 0.75}};
  EXPECT_EQ(rules_to_csv(rules, items), "antecedent,consequent,support,confidence\n10,20,0.25,0.75\n");
}
