#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "exrec/dataio.hpp"

namespace exrec {

using Sequence = std::vector<std::size_t>;

/// Number of positions augmentation touches in a sequence of length `len`.
std::size_t augment_count(double rate, std::size_t len);

/// Returns one augmented copy per input sequence. In each, augment_count
/// positions are drawn without replacement and replaced by a different
/// exercise from the same leaf category; positions whose leaf has no other
/// member are left as they are. Throws InputError on ids outside `taxonomy`
/// or rate outside [0, 1].
std::vector<Sequence> augment_expert(std::span<const Sequence> sequences,
                                     const std::vector<ItemInfo>& taxonomy, double rate = 0.10,
                                     std::uint64_t seed = 1);

/// Transactions for rule mining: one per (user, day) over completed events;
/// users whose events all share a day are cut into consecutive groups of 3.
std::vector<std::vector<std::size_t>> rule_transactions(const Corpus& corpus);

/// Consecutive groups of `group` items, for sequences without day boundaries.
std::vector<std::vector<std::size_t>> chunk_transactions(std::span<const Sequence> sequences,
                                                         std::size_t group = 3);

struct Itemset {
  std::vector<std::size_t> items;  // ascending
  std::size_t count = 0;
  double support = 0.0;
};

/// Apriori: every itemset contained in at least min_support of transactions,
/// ordered by size then lexicographically.
std::vector<Itemset> frequent_itemsets(std::span<const std::vector<std::size_t>> transactions,
                                       double min_support);

struct AssociationRule {
  std::size_t antecedent = 0;
  std::size_t consequent = 0;
  double support = 0.0;     // of {antecedent, consequent}
  double confidence = 0.0;  // support / support(antecedent)
};

/// Single-item rules A -> B meeting both thresholds, ordered by confidence
/// descending, then support descending, then ids. Empty input gives no rules.
/// Throws InputError unless both thresholds lie in (0, 1].
std::vector<AssociationRule> mine_rules(std::span<const std::vector<std::size_t>> transactions,
                                        double min_support = 0.05, double min_confidence = 0.6);

/// Like augment_expert, but a chosen item A becomes a uniformly drawn B from
/// the rules A -> B; items with no rule are left unchanged.
std::vector<Sequence> augment_rules(std::span<const Sequence> sequences,
                                    std::span<const AssociationRule> rules,
                                    std::size_t vocabulary, double rate = 0.10,
                                    std::uint64_t seed = 1);

/// antecedent,consequent,support,confidence with external item keys.
std::string rules_to_csv(std::span<const AssociationRule> rules,
                         const std::vector<ItemInfo>& items);

}  // namespace exrec
