#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exrec/dataio.hpp"
#include "exrec/model.hpp"

namespace exrec {

struct Neighbor {
  std::string id;
  double distance = 0.0;
};

/// Existing users' profiles in a shared standardized space.
class ProfileIndex {
 public:
  ProfileIndex() = default;
  /// Fits standardization on `rows` (missing values allowed) and indexes them.
  /// Throws InputError on duplicate ids, ragged rows or size mismatch.
  ProfileIndex(std::vector<std::string> ids, const std::vector<std::vector<double>>& rows);
  /// Indexes rows under an existing standardization (e.g. restored from disk).
  ProfileIndex(std::vector<std::string> ids, const std::vector<std::vector<double>>& rows,
               Standardizer standardizer);

  /// The k nearest users by Euclidean distance of standardized profiles,
  /// ascending, ties by id; `exclude` (the querying user) is never returned.
  /// Throws InputError unless 1 <= k <= number of candidates.
  std::vector<Neighbor> similar_users(const std::vector<double>& raw_query, std::size_t k = 3,
                                      std::optional<std::string> exclude = std::nullopt) const;

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Standardizer& standardizer() const noexcept { return standardizer_; }
  Vector standardize(const std::vector<double>& raw) const { return standardizer_.apply(raw); }

 private:
  void insert_all(const std::vector<std::vector<double>>& rows);

  std::vector<std::string> ids_;
  std::vector<Vector> profiles_;
  Standardizer standardizer_;
};

struct ColdstartOptions {
  double learning_rate = 1e-4;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct ColdstartResult {
  ModelParams params;
  std::size_t windows = 0;
  bool used_global = false;  // no pooled data: params are an unchanged copy
};

/// Fine-tunes a copy of `global` on the pooled windows of the selected users.
ColdstartResult init_for_new_user(const ModelParams& global,
                                  const std::vector<WindowSample>& pooled,
                                  const ColdstartOptions& options = {});

}  // namespace exrec
