#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exrec/model.hpp"

namespace exrec {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// One vocabulary entry: names, expert difficulty rating and category path.
struct ItemInfo {
  std::string key;   // external id as it appears in data files
  std::string name;
  double difficulty = kMissing;
  std::vector<std::string> path;  // supercategory ... leaf
  std::string alt_group;
  std::optional<std::vector<double>> profile;  // explicit profile vector, overrides the default

  /// Joined category path; items sharing it are interchangeable.
  std::string leaf() const;
};

struct Event {
  std::size_t item = 0;  // dense index into Corpus::items
  std::int64_t day = 0;
  std::size_t slot = 0;
  bool completed = true;
};

struct UserRecord {
  std::string id;
  std::vector<double> profile;  // aligned with Corpus::profile_columns; kMissing when absent
  std::vector<Event> events;    // sorted by (day, slot)

  /// Completed events only, in time order.
  std::vector<std::size_t> sequence() const;
};

enum class ProfileSchema { demographic, full };

struct Corpus {
  std::vector<ItemInfo> items;
  std::vector<std::string> profile_columns;
  std::vector<std::string> demographic_columns;
  std::vector<std::string> excluded_columns;  // never fed to the model (e.g. latent audit fields)
  std::vector<UserRecord> users;

  std::size_t vocab_with_pad() const noexcept { return items.size() + 1; }
  std::size_t pad_id() const noexcept { return items.size(); }

  /// Column indices selected by a schema, in profile_columns order.
  std::vector<std::size_t> schema_columns(ProfileSchema schema) const;
  /// Throws InputError on unknown ids, unsorted events or ragged profiles.
  void validate() const;
  std::optional<std::size_t> find_item(const std::string& key) const;
  std::optional<std::size_t> find_user(const std::string& id) const;
};

/// Per-feature mean/std over a population, used to impute and z-score profiles.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // std, or 1 when the feature is constant

  static Standardizer fit(std::span<const std::vector<double>> rows);
  /// Missing entries become the mean, then every entry is z-scored.
  Vector apply(const std::vector<double>& row) const;

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

/// Selects `schema` columns for one user (missing values kept as kMissing).
std::vector<double> select_profile(const Corpus& corpus, const UserRecord& user,
                                   ProfileSchema schema);

/// Per-item profile vectors: explicit profiles when every item has one,
/// otherwise [normalized difficulty, leaf one-hot]. The padding profile is zeros.
std::vector<Vector> item_profile_vectors(const Corpus& corpus);

enum class Padding {
  none,     // only full-length windows
  leading,  // every event after the first is a target; short histories left-padded
  full,     // every event is a target, the first from an all-padding window
};

/// Builds network inputs from an item history.
class WindowBuilder {
 public:
  WindowBuilder(std::size_t window, std::size_t pad_id, std::vector<Vector> item_profiles);

  /// Window over the last `window` entries of `history`, left-padded.
  Window build(std::span<const std::size_t> history, const Vector& user_profile) const;

  /// Samples whose targets are sequence[t] for t in [first_target, end_target).
  std::vector<WindowSample> samples(std::span<const std::size_t> sequence,
                                    const Vector& user_profile, std::size_t first_target,
                                    std::size_t end_target, std::size_t user_index) const;

  std::size_t window() const noexcept { return window_; }
  std::size_t pad_id() const noexcept { return pad_; }
  const std::vector<Vector>& item_profiles() const noexcept { return profiles_; }

 private:
  std::size_t window_;
  std::size_t pad_;
  std::vector<Vector> profiles_;  // indexed by item id, pad entry included
  Vector pad_profile_;
};

/// First target index for a padding mode.
std::size_t first_target(Padding padding, std::size_t window);

/// Windows for every user; user_profiles[u] is the model input for user u.
/// Throws InputError on an empty corpus.
std::vector<WindowSample> make_windows(const Corpus& corpus, std::size_t window, Padding padding,
                                       std::span<const Vector> user_profiles);

/// Same, with profiles from `schema` standardized over the whole corpus.
std::vector<WindowSample> make_windows(const Corpus& corpus, std::size_t window,
                                       Padding padding = Padding::leading,
                                       ProfileSchema schema = ProfileSchema::demographic);

// MovieLens ---------------------------------------------------------------

struct MovieLensOptions {
  std::size_t top_items = 100;
  std::string users_path;  // optional u.user for demographics
  std::string items_path;  // optional u.item for titles
};

/// Reads a u.data file (user \t item \t rating \t timestamp), keeps the
/// `top_items` most-rated items (ties by ascending item id) and orders each
/// user's events by (timestamp, item id). Throws ParseError naming the line.
Corpus movielens_prepare(const std::string& ratings_path, const MovieLensOptions& options = {});

/// Number of leading events per user that belong to the training part of a
/// chronological split.
std::vector<std::size_t> chronological_split(const Corpus& corpus, double train_fraction);

// Window-length selection --------------------------------------------------

/// Difficulty value per item (rank of the item id when no rating is known).
std::vector<double> item_difficulty_values(const Corpus& corpus);

/// Autocorrelation at lags 1..max_lag, averaged over users with at least
/// max_lag + 2 events and non-constant difficulty. Returns {acf, mean length}.
std::pair<std::vector<double>, double> average_acf(const Corpus& corpus, std::size_t max_lag);

/// Suggests the window length: the lag of the strongest positive
/// autocorrelation among lags above the 1.96/sqrt(T) band, 1 when none is.
std::size_t acf_window(const Corpus& corpus, std::size_t max_lag = 10);

// Synthetic adaptive-coaching data ----------------------------------------

struct SynthOptions {
  std::size_t users = 72;
  std::size_t days = 28;
  std::size_t exercises = 44;
  std::size_t levels = 5;
  std::uint64_t seed = 1;
  double preference = 0.8;       // chance of picking the user's favourite in a cell
  double falloff = 5.0;          // completion = exp(-falloff * (level - fitness)) above fitness
  std::vector<double> fitness;   // optional per-user override, in [0, levels-1]
};

struct SynthResult {
  Corpus corpus;
  std::vector<std::vector<std::size_t>> level_trace;  // level on each exercise day
  std::vector<std::vector<bool>> day_success;         // all three completed on that day
};

/// Simulates the adaptive coaching policy: three exercises per exercise day
/// (Mon/Wed/Fri) at the user's level, one per body-region slot; a fully
/// completed day advances a level, any miss regresses one (clamped).
SynthResult synth_generate(const SynthOptions& options);

// Files ------------------------------------------------------------------

/// exercises.json: {id -> {name, difficulty, path, alt_group[, profile]}}
nlohmann::json taxonomy_to_json(const std::vector<ItemInfo>& items);
std::vector<ItemInfo> taxonomy_from_json(const nlohmann::json& j);

/// Directory with history.csv, users.csv, manifest.json, exercises.json.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace exrec
