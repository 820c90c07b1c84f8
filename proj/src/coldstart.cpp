#include "exrec/coldstart.hpp"

#include <algorithm>
#include <set>

#include "exrec/error.hpp"

namespace exrec {

ProfileIndex::ProfileIndex(std::vector<std::string> ids,
                           const std::vector<std::vector<double>>& rows)
    : ids_(std::move(ids)), standardizer_(Standardizer::fit(rows)) {
  insert_all(rows);
}

ProfileIndex::ProfileIndex(std::vector<std::string> ids,
                           const std::vector<std::vector<double>>& rows,
                           Standardizer standardizer)
    : ids_(std::move(ids)), standardizer_(std::move(standardizer)) {
  insert_all(rows);
}

void ProfileIndex::insert_all(const std::vector<std::vector<double>>& rows) {
  if (ids_.size() != rows.size()) throw InputError("profile index: one row per id required");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!seen.insert(ids_[i]).second) throw InputError("profile index: duplicate id " + ids_[i]);
    if (rows[i].size() != standardizer_.mean.size()) {
      throw InputError("profile index: row for " + ids_[i] + " has the wrong length");
    }
    profiles_.push_back(standardizer_.apply(rows[i]));
  }
}

std::vector<Neighbor> ProfileIndex::similar_users(const std::vector<double>& raw_query,
                                                  std::size_t k,
                                                  std::optional<std::string> exclude) const {
  const Vector q = standardizer_.apply(raw_query);
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (exclude && ids_[i] == *exclude) continue;
    all.push_back({ids_[i], (profiles_[i] - q).norm()});
  }
  if (k == 0 || k > all.size()) {
    throw InputError("similar_users: k=" + std::to_string(k) + " but " +
                     std::to_string(all.size()) + " candidates");
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  all.resize(k);
  return all;
}

ColdstartResult init_for_new_user(const ModelParams& global,
                                  const std::vector<WindowSample>& pooled,
                                  const ColdstartOptions& options) {
  ColdstartResult r{global, pooled.size(), pooled.empty()};
  if (pooled.empty()) return r;
  FinetuneOptions f;
  f.learning_rate = options.learning_rate;
  f.epochs = options.epochs;
  f.batch_size = options.batch_size;
  f.seed = options.seed;
  r.params = finetune(global, pooled, f);
  return r;
}

}  // namespace exrec
