#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exrec/active.hpp"
#include "exrec/dataio.hpp"
#include "exrec/model.hpp"
#include "exrec/uncertainty.hpp"

namespace exrec {

/// Fraction of cases whose target is among the first k ids of its ranking.
/// Throws InputError on length mismatch, k == 0 or no cases.
double topk_accuracy(std::span<const std::vector<std::size_t>> rankings,
                     std::span<const std::size_t> targets, std::size_t k);

enum class Augmentation { none, expert, rules };
enum class Scoring {
  pre_correction,  // queried steps are scored on the model's own ranking
  corrected,       // queried steps count as hits (the expert supplied the answer)
};

struct ExperimentConfig {
  std::string name = "baseline";
  Augmentation augmentation = Augmentation::none;
  bool coldstart = false;
  bool active = false;
  ProfileSchema schema = ProfileSchema::demographic;
  std::size_t window = 3;
  std::string dims = "coaching";  // or "movies"
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double level = 0.01;
  std::optional<double> theta_override;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  Padding padding = Padding::leading;

  double augment_rate = 0.10;
  double min_support = 0.05;
  double min_confidence = 0.6;

  std::size_t coldstart_k = 3;
  double coldstart_lr = 1e-4;
  std::size_t coldstart_epochs = 1;

  double finetune_lr = 1e-4;
  std::size_t finetune_steps = 5;
  std::size_t budget = std::numeric_limits<std::size_t>::max();
  Scoring scoring = Scoring::pre_correction;

  /// Rows 1-9 of the ablation table. Throws ConfigError for other rows.
  static ExperimentConfig table1_row(int row);

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// Hit counts; fractions are derived so that pooling stays exact.
struct Metrics {
  std::size_t cases = 0;
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  std::size_t hit10 = 0;
  std::size_t steps = 0;
  std::size_t queries = 0;

  double top1() const;
  double top5() const;
  double top10() const;
  double query_rate() const;
  Metrics& operator+=(const Metrics& o);
  nlohmann::json to_json() const;
};

struct Summary {
  double top1 = 0.0, top5 = 0.0, top10 = 0.0, query_rate = 0.0;
  nlohmann::json to_json() const;
};

struct FoldAudit {
  std::uint64_t seed = 0;
  std::string held_out;
  std::size_t train_users = 0;
  std::size_t train_windows = 0;      // including augmented copies
  std::size_t held_out_in_train = 0;  // windows owned by the held-out user
  std::size_t test_windows = 0;
  nlohmann::json to_json() const;
};

struct FoldResult {
  std::uint64_t seed = 0;
  std::string user;
  Metrics metrics;
  double theta = 0.0;
};

struct RunResult {
  ExperimentConfig config;
  std::string protocol;  // "loocv" or "holdout"
  std::vector<FoldResult> per_fold;
  std::vector<Metrics> per_seed;  // pooled over folds
  Summary mean, std;              // across seeds
  std::vector<FoldAudit> audit;
  std::optional<DirichletParams> last_dirichlet;
  std::optional<Metrics> train_metrics;  // holdout only, seed 0
  double runtime_seconds = 0.0;

  nlohmann::json to_json(bool include_folds = true) const;
};

/// Trained global models keyed by everything that determines them, so rows
/// that differ only in evaluation need not retrain.
class ModelCache {
 public:
  const ModelParams* find(const std::string& key) const;
  void put(const std::string& key, ModelParams params);
  std::size_t size() const noexcept { return models_.size(); }

 private:
  std::map<std::string, ModelParams> models_;
};

/// Leave-one-user-out: for each seed and each user, trains on the others
/// and replays the held-out user's sequence. Throws InputError with fewer than
/// two users, ConfigError when the configuration needs data the corpus lacks.
RunResult loocv_run(const Corpus& corpus, const ExperimentConfig& config,
                    ModelCache* cache = nullptr);

/// Chronological split per user; trains once per seed on the leading part and
/// evaluates the rest. Throws InputError when the test part is empty.
RunResult holdout_run(const Corpus& corpus, const ExperimentConfig& config,
                      double train_fraction = 0.8, bool report_train = false);

/// Ranks items by frequency among training targets and scores that fixed
/// ranking on the test part of the same chronological split.
Metrics popularity_baseline(const Corpus& corpus, std::size_t window, Padding padding,
                            double train_fraction = 0.8);

/// A trained global model together with what is needed to build its inputs.
struct GlobalModel {
  ModelParams params;
  Standardizer standardizer;  // fitted on the training users' schema rows
  ProfileSchema schema = ProfileSchema::demographic;
  std::size_t window = 3;
  Padding padding = Padding::leading;
  std::size_t train_windows = 0;
  std::uint64_t seed = 1;

  /// {format_version, config_hash, schema, window, padding, standardizer, checkpoint, ...}
  nlohmann::json to_json() const;
  static GlobalModel from_json(const nlohmann::json& j);
};

/// Trains on every user of `corpus` with the settings of `config`
/// (augmentation included) and seed `seed`.
GlobalModel train_global(const Corpus& corpus, const ExperimentConfig& config, std::uint64_t seed);

/// Sorted (top, second, rest) triples of the model's outputs on its own
/// training windows: the sample the threshold distribution is fitted to.
std::vector<SortedTriple> training_triples(const Corpus& corpus, const GlobalModel& model);

/// Fixed-width text table, one row per result.
std::string render_table(std::span<const RunResult> results);

}  // namespace exrec
