#include "exrec/augment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "exrec/error.hpp"

namespace exrec {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InputError("augment: rate must be in [0, 1]");
}

void check_ids(std::span<const Sequence> sequences, std::size_t vocabulary) {
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (std::size_t id : sequences[s]) {
      if (id >= vocabulary) {
        throw InputError("augment: sequence " + std::to_string(s) + " has unknown id " +
                         std::to_string(id));
      }
    }
  }
}

// Shared driver: pick positions per sequence, ask `replace` for a substitute.
template <class Replace>
std::vector<Sequence> substitute(std::span<const Sequence> sequences, double rate,
                                 std::uint64_t seed, Replace replace) {
  std::vector<Sequence> out;
  out.reserve(sequences.size());
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    Sequence seq = sequences[s];
    const std::size_t n = augment_count(rate, seq.size());
    if (n > 0) {
      std::mt19937_64 rng(splitmix64(seed ^ splitmix64(s)));
      std::vector<std::size_t> pos(seq.size());
      std::iota(pos.begin(), pos.end(), 0);
      std::shuffle(pos.begin(), pos.end(), rng);
      for (std::size_t i = 0; i < n; ++i) seq[pos[i]] = replace(seq[pos[i]], rng);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::size_t draw(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

std::size_t augment_count(double rate, std::size_t len) {
  check_rate(rate);
  const double x = rate * static_cast<double>(len);
  return std::min(len, static_cast<std::size_t>(std::ceil(x - 1e-9)));
}

std::vector<Sequence> augment_expert(std::span<const Sequence> sequences,
                                     const std::vector<ItemInfo>& taxonomy, double rate,
                                     std::uint64_t seed) {
  check_rate(rate);
  check_ids(sequences, taxonomy.size());
  std::map<std::string, std::vector<std::size_t>> by_leaf;
  for (std::size_t i = 0; i < taxonomy.size(); ++i) {
    if (!taxonomy[i].path.empty()) by_leaf[taxonomy[i].leaf()].push_back(i);
  }
  return substitute(sequences, rate, seed, [&](std::size_t id, std::mt19937_64& rng) {
    if (taxonomy[id].path.empty()) return id;
    const auto& members = by_leaf.at(taxonomy[id].leaf());
    if (members.size() < 2) return id;
    std::size_t pick = draw(members.size() - 1, rng);
    if (members[pick] >= id) ++pick;  // skip the original (members are ascending)
    return members[pick];
  });
}

std::vector<std::vector<std::size_t>> rule_transactions(const Corpus& corpus) {
  std::vector<std::vector<std::size_t>> out;
  for (const UserRecord& u : corpus.users) {
    bool one_day = !u.events.empty();
    for (const Event& e : u.events) one_day = one_day && e.day == u.events.front().day;
    if (one_day) {
      const Sequence seq = u.sequence();
      const auto chunks = chunk_transactions(std::span<const Sequence>(&seq, 1), 3);
      out.insert(out.end(), chunks.begin(), chunks.end());
      continue;
    }
    std::vector<std::size_t> current;
    std::int64_t day = 0;
    bool open = false;
    for (const Event& e : u.events) {
      if (!e.completed) continue;
      if (open && e.day != day) {
        out.push_back(std::move(current));
        current.clear();
      }
      day = e.day;
      open = true;
      current.push_back(e.item);
    }
    if (open) out.push_back(std::move(current));
  }
  return out;
}

std::vector<std::vector<std::size_t>> chunk_transactions(std::span<const Sequence> sequences,
                                                         std::size_t group) {
  if (group == 0) throw InputError("chunk_transactions: group must be >= 1");
  std::vector<std::vector<std::size_t>> out;
  for (const Sequence& s : sequences) {
    for (std::size_t i = 0; i < s.size(); i += group) {
      out.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(i),
                       s.begin() + static_cast<std::ptrdiff_t>(std::min(s.size(), i + group)));
    }
  }
  return out;
}

namespace {

void check_threshold(double t, const char* name) {
  if (!(t > 0.0 && t <= 1.0)) throw InputError(std::string("mine_rules: ") + name + " must be in (0, 1]");
}

bool meets(std::size_t count, std::size_t total, double min_support) {
  return static_cast<double>(count) >= min_support * static_cast<double>(total) - 1e-9;
}

}  // namespace

std::vector<Itemset> frequent_itemsets(std::span<const std::vector<std::size_t>> transactions,
                                       double min_support) {
  check_threshold(min_support, "min_support");
  std::vector<std::vector<std::size_t>> sets;
  for (const auto& t : transactions) {
    std::vector<std::size_t> s(t.begin(), t.end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    sets.push_back(std::move(s));
  }
  const std::size_t total = sets.size();
  std::vector<Itemset> out;
  if (total == 0) return out;

  std::map<std::size_t, std::size_t> singles;
  for (const auto& s : sets) {
    for (std::size_t id : s) ++singles[id];
  }
  std::vector<std::vector<std::size_t>> level;
  for (const auto& [id, c] : singles) {
    if (meets(c, total, min_support)) {
      out.push_back({{id}, c, static_cast<double>(c) / static_cast<double>(total)});
      level.push_back({id});
    }
  }
  while (!level.empty()) {
    // Join step: extend sets sharing all but the last item; prune on subsets.
    const std::set<std::vector<std::size_t>> known(level.begin(), level.end());
    std::vector<std::vector<std::size_t>> candidates;
    for (std::size_t a = 0; a < level.size(); ++a) {
      for (std::size_t b = a + 1; b < level.size(); ++b) {
        if (!std::equal(level[a].begin(), level[a].end() - 1, level[b].begin())) break;
        std::vector<std::size_t> c = level[a];
        c.push_back(level[b].back());
        bool ok = true;
        for (std::size_t drop = 0; drop + 2 < c.size() && ok; ++drop) {
          std::vector<std::size_t> sub;
          for (std::size_t k = 0; k < c.size(); ++k) {
            if (k != drop) sub.push_back(c[k]);
          }
          ok = known.count(sub) > 0;
        }
        if (ok) candidates.push_back(std::move(c));
      }
    }
    std::vector<std::vector<std::size_t>> next;
    for (auto& c : candidates) {
      std::size_t count = 0;
      for (const auto& s : sets) {
        if (std::includes(s.begin(), s.end(), c.begin(), c.end())) ++count;
      }
      if (meets(count, total, min_support)) {
        out.push_back({c, count, static_cast<double>(count) / static_cast<double>(total)});
        next.push_back(std::move(c));
      }
    }
    level = std::move(next);
  }
  return out;
}

std::vector<AssociationRule> mine_rules(std::span<const std::vector<std::size_t>> transactions,
                                        double min_support, double min_confidence) {
  check_threshold(min_support, "min_support");
  check_threshold(min_confidence, "min_confidence");
  std::vector<AssociationRule> rules;
  const auto frequent = frequent_itemsets(transactions, min_support);
  std::map<std::size_t, std::size_t> single_count;
  for (const Itemset& s : frequent) {
    if (s.items.size() == 1) single_count[s.items[0]] = s.count;
  }
  for (const Itemset& s : frequent) {
    if (s.items.size() != 2) continue;
    for (int dir = 0; dir < 2; ++dir) {
      const std::size_t a = s.items[dir];
      const std::size_t b = s.items[1 - dir];
      const double conf = static_cast<double>(s.count) / static_cast<double>(single_count.at(a));
      if (conf >= min_confidence - 1e-12) rules.push_back({a, b, s.support, conf});
    }
  }
  std::sort(rules.begin(), rules.end(), [](const AssociationRule& x, const AssociationRule& y) {
    if (x.confidence != y.confidence) return x.confidence > y.confidence;
    if (x.support != y.support) return x.support > y.support;
    if (x.antecedent != y.antecedent) return x.antecedent < y.antecedent;
    return x.consequent < y.consequent;
  });
  return rules;
}

std::vector<Sequence> augment_rules(std::span<const Sequence> sequences,
                                    std::span<const AssociationRule> rules,
                                    std::size_t vocabulary, double rate, std::uint64_t seed) {
  check_rate(rate);
  check_ids(sequences, vocabulary);
  std::map<std::size_t, std::vector<std::size_t>> targets;
  for (const AssociationRule& r : rules) targets[r.antecedent].push_back(r.consequent);
  for (auto& [_, v] : targets) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return substitute(sequences, rate, seed, [&](std::size_t id, std::mt19937_64& rng) {
    const auto it = targets.find(id);
    if (it == targets.end()) return id;
    return it->second[draw(it->second.size(), rng)];
  });
}

std::string rules_to_csv(std::span<const AssociationRule> rules,
                         const std::vector<ItemInfo>& items) {
  std::ostringstream os;
  os.precision(10);
  os << "antecedent,consequent,support,confidence\n";
  for (const AssociationRule& r : rules) {
    os << items.at(r.antecedent).key << ',' << items.at(r.consequent).key << ',' << r.support
       << ',' << r.confidence << '\n';
  }
  return os.str();
}

}  // namespace exrec
