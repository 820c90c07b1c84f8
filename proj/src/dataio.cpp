#include "exrec/dataio.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "exrec/error.hpp"

namespace exrec {

std::string ItemInfo::leaf() const {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += '/';
    out += path[i];
  }
  return out;
}

std::vector<std::size_t> UserRecord::sequence() const {
  std::vector<std::size_t> seq;
  seq.reserve(events.size());
  for (const Event& e : events) {
    if (e.completed) seq.push_back(e.item);
  }
  return seq;
}

std::vector<std::size_t> Corpus::schema_columns(ProfileSchema schema) const {
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < profile_columns.size(); ++c) {
    const std::string& name = profile_columns[c];
    const auto has = [&](const std::vector<std::string>& v) {
      return std::find(v.begin(), v.end(), name) != v.end();
    };
    if (has(excluded_columns)) continue;
    if (schema == ProfileSchema::demographic && !has(demographic_columns)) continue;
    cols.push_back(c);
  }
  return cols;
}

void Corpus::validate() const {
  for (const UserRecord& u : users) {
    if (u.profile.size() != profile_columns.size()) {
      throw InputError("corpus: user " + u.id + " has " + std::to_string(u.profile.size()) +
                       " profile values, expected " + std::to_string(profile_columns.size()));
    }
    for (std::size_t i = 0; i < u.events.size(); ++i) {
      const Event& e = u.events[i];
      if (e.item >= items.size()) {
        throw InputError("corpus: user " + u.id + " references unknown item " +
                         std::to_string(e.item));
      }
      if (i > 0) {
        const Event& p = u.events[i - 1];
        if (e.day < p.day || (e.day == p.day && e.slot < p.slot)) {
          throw InputError("corpus: events of user " + u.id + " are not sorted by time");
        }
      }
    }
  }
}

std::optional<std::size_t> Corpus::find_item(const std::string& key) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].key == key) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Corpus::find_user(const std::string& id) const {
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (users[i].id == id) return i;
  }
  return std::nullopt;
}

Standardizer Standardizer::fit(std::span<const std::vector<double>> rows) {
  Standardizer s;
  if (rows.empty()) return s;
  const std::size_t d = rows.front().size();
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  for (std::size_t c = 0; c < d; ++c) {
    double sum = 0.0;
    double n = 0.0;
    for (const auto& r : rows) {
      if (r.size() != d) throw InputError("standardizer: ragged rows");
      if (std::isfinite(r[c])) {
        sum += r[c];
        n += 1.0;
      }
    }
    if (n == 0.0) continue;
    const double m = sum / n;
    double ss = 0.0;
    for (const auto& r : rows) {
      if (std::isfinite(r[c])) ss += (r[c] - m) * (r[c] - m);
    }
    const double sd = std::sqrt(ss / n);
    s.mean[c] = m;
    s.scale[c] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Vector Standardizer::apply(const std::vector<double>& row) const {
  if (row.size() != mean.size()) {
    throw InputError("standardizer: expected " + std::to_string(mean.size()) + " values, got " +
                     std::to_string(row.size()));
  }
  Vector out(static_cast<Eigen::Index>(row.size()));
  for (std::size_t c = 0; c < row.size(); ++c) {
    const double v = std::isfinite(row[c]) ? row[c] : mean[c];
    out[static_cast<Eigen::Index>(c)] = (v - mean[c]) / scale[c];
  }
  return out;
}

nlohmann::json Standardizer::to_json() const { return {{"mean", mean}, {"scale", scale}}; }

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  try {
    Standardizer s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.scale = j.at("scale").get<std::vector<double>>();
    if (s.mean.size() != s.scale.size()) throw ConfigError("standardizer: size mismatch");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("standardizer: ") + e.what());
  }
}

std::vector<double> select_profile(const Corpus& corpus, const UserRecord& user,
                                   ProfileSchema schema) {
  std::vector<double> out;
  for (std::size_t c : corpus.schema_columns(schema)) out.push_back(user.profile.at(c));
  return out;
}

std::vector<Vector> item_profile_vectors(const Corpus& corpus) {
  const auto& items = corpus.items;
  std::vector<Vector> out;
  out.reserve(items.size() + 1);
  const bool explicit_profiles =
      !items.empty() && std::all_of(items.begin(), items.end(), [&](const ItemInfo& it) {
        return it.profile && it.profile->size() == items.front().profile->size();
      });
  if (explicit_profiles) {
    for (const ItemInfo& it : items) {
      out.push_back(Eigen::Map<const Vector>(it.profile->data(),
                                             static_cast<Eigen::Index>(it.profile->size())));
    }
  } else {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    std::set<std::string> leaves;
    for (const ItemInfo& it : items) {
      if (std::isfinite(it.difficulty)) {
        lo = std::min(lo, it.difficulty);
        hi = std::max(hi, it.difficulty);
      }
      if (!it.path.empty()) leaves.insert(it.leaf());
    }
    const std::vector<std::string> leaf_list(leaves.begin(), leaves.end());
    const auto dim = static_cast<Eigen::Index>(1 + leaf_list.size());
    for (const ItemInfo& it : items) {
      Vector v = Vector::Zero(dim);
      if (std::isfinite(it.difficulty) && hi > lo) v[0] = (it.difficulty - lo) / (hi - lo);
      if (!it.path.empty()) {
        const auto pos = std::lower_bound(leaf_list.begin(), leaf_list.end(), it.leaf());
        v[1 + (pos - leaf_list.begin())] = 1.0;
      }
      out.push_back(std::move(v));
    }
  }
  const Eigen::Index dim = out.empty() ? 1 : out.front().size();
  out.push_back(Vector::Zero(dim));
  return out;
}

WindowBuilder::WindowBuilder(std::size_t window, std::size_t pad_id,
                             std::vector<Vector> item_profiles)
    : window_(window), pad_(pad_id), profiles_(std::move(item_profiles)) {
  if (window_ == 0) throw InputError("window length must be >= 1");
  if (profiles_.size() != pad_ + 1) {
    throw InputError("window builder: expected " + std::to_string(pad_ + 1) +
                     " item profiles, got " + std::to_string(profiles_.size()));
  }
  pad_profile_ = profiles_.back();
}

Window WindowBuilder::build(std::span<const std::size_t> history,
                            const Vector& user_profile) const {
  Window w;
  w.items.assign(window_, pad_);
  w.item_profiles.assign(window_, pad_profile_);
  w.user_profile = user_profile;
  const std::size_t take = std::min(window_, history.size());
  const std::size_t offset = window_ - take;
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t id = history[history.size() - take + i];
    if (id >= pad_) throw InputError("window builder: item id " + std::to_string(id) + " out of range");
    w.items[offset + i] = id;
    w.item_profiles[offset + i] = profiles_[id];
  }
  return w;
}

std::vector<WindowSample> WindowBuilder::samples(std::span<const std::size_t> sequence,
                                                 const Vector& user_profile,
                                                 std::size_t first_target, std::size_t end_target,
                                                 std::size_t user_index) const {
  std::vector<WindowSample> out;
  end_target = std::min(end_target, sequence.size());
  for (std::size_t t = first_target; t < end_target; ++t) {
    out.push_back({build(sequence.first(t), user_profile), sequence[t], user_index, t});
  }
  return out;
}

std::size_t first_target(Padding padding, std::size_t window) {
  switch (padding) {
    case Padding::none:
      return window;
    case Padding::leading:
      return 1;
    case Padding::full:
      return 0;
  }
  return 1;
}

std::vector<WindowSample> make_windows(const Corpus& corpus, std::size_t window, Padding padding,
                                       std::span<const Vector> user_profiles) {
  if (corpus.users.empty()) throw InputError("make_windows: empty corpus");
  if (user_profiles.size() != corpus.users.size()) {
    throw InputError("make_windows: one profile per user required");
  }
  const WindowBuilder builder(window, corpus.pad_id(), item_profile_vectors(corpus));
  const std::size_t first = first_target(padding, window);
  std::vector<WindowSample> out;
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    const auto seq = corpus.users[u].sequence();
    auto s = builder.samples(seq, user_profiles[u], first, seq.size(), u);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

std::vector<WindowSample> make_windows(const Corpus& corpus, std::size_t window, Padding padding,
                                       ProfileSchema schema) {
  std::vector<std::vector<double>> rows;
  for (const UserRecord& u : corpus.users) rows.push_back(select_profile(corpus, u, schema));
  const Standardizer st = Standardizer::fit(rows);
  std::vector<Vector> profiles;
  for (const auto& r : rows) profiles.push_back(st.apply(r));
  return make_windows(corpus, window, padding, profiles);
}

// MovieLens ---------------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

long long parse_int(const std::string& s, std::size_t line, const std::string& file) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(file + ": expected an integer, got '" + s + "'", line);
  }
  if (pos != s.size()) throw ParseError(file + ": expected an integer, got '" + s + "'", line);
  return v;
}

double parse_double(const std::string& s, std::size_t line, const std::string& file) {
  if (s.empty()) return kMissing;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(file + ": expected a number, got '" + s + "'", line);
  }
  if (pos != s.size()) throw ParseError(file + ": expected a number, got '" + s + "'", line);
  return v;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return in;
}

}  // namespace

Corpus movielens_prepare(const std::string& ratings_path, const MovieLensOptions& options) {
  struct Rating {
    long long user, item, timestamp;
  };
  std::vector<Rating> ratings;
  {
    std::ifstream in = open_input(ratings_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      std::istringstream is(line);
      std::vector<std::string> f;
      std::string tok;
      while (is >> tok) f.push_back(tok);
      if (f.size() != 4) {
        throw ParseError("u.data: expected 4 fields, got " + std::to_string(f.size()), lineno);
      }
      ratings.push_back({parse_int(f[0], lineno, "u.data"), parse_int(f[1], lineno, "u.data"),
                         parse_int(f[3], lineno, "u.data")});
      parse_int(f[2], lineno, "u.data");
    }
  }
  if (ratings.empty()) throw InputError("movielens: no ratings in " + ratings_path);

  std::map<long long, std::size_t> counts;
  for (const Rating& r : ratings) ++counts[r.item];
  std::vector<std::pair<long long, std::size_t>> by_count(counts.begin(), counts.end());
  std::stable_sort(by_count.begin(), by_count.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(options.top_items, by_count.size());
  std::vector<long long> kept;
  for (std::size_t i = 0; i < keep; ++i) kept.push_back(by_count[i].first);
  std::sort(kept.begin(), kept.end());

  Corpus corpus;
  std::map<long long, std::size_t> item_index;
  for (long long id : kept) {
    item_index[id] = corpus.items.size();
    ItemInfo info;
    info.key = std::to_string(id);
    info.name = "movie " + info.key;
    info.profile = std::vector<double>{1.0, 1.0, 1.0};
    corpus.items.push_back(std::move(info));
  }

  if (!options.items_path.empty()) {
    std::ifstream in = open_input(options.items_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      const auto f = split(line, '|');
      if (f.size() < 2) throw ParseError("u.item: expected id|title|...", lineno);
      const auto it = item_index.find(parse_int(f[0], lineno, "u.item"));
      if (it != item_index.end()) corpus.items[it->second].name = f[1];
    }
  }

  // Demographics: age, gender, occupation one-hot.
  std::map<long long, std::vector<double>> demo;
  if (!options.users_path.empty()) {
    struct Row {
      long long id;
      double age;
      double male;
      std::string occupation;
    };
    std::vector<Row> rows;
    std::set<std::string> occupations;
    std::ifstream in = open_input(options.users_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      const auto f = split(line, '|');
      if (f.size() < 4) throw ParseError("u.user: expected id|age|gender|occupation|zip", lineno);
      if (f[2] != "M" && f[2] != "F") throw ParseError("u.user: gender must be M or F", lineno);
      rows.push_back({parse_int(f[0], lineno, "u.user"),
                      static_cast<double>(parse_int(f[1], lineno, "u.user")),
                      f[2] == "M" ? 1.0 : 0.0, f[3]});
      occupations.insert(f[3]);
    }
    corpus.profile_columns = {"age", "gender"};
    for (const auto& o : occupations) corpus.profile_columns.push_back("occupation_" + o);
    for (const Row& r : rows) {
      std::vector<double> p{r.age, r.male};
      for (const auto& o : occupations) p.push_back(o == r.occupation ? 1.0 : 0.0);
      demo[r.id] = std::move(p);
    }
  } else {
    corpus.profile_columns = {"bias"};
  }
  corpus.demographic_columns = corpus.profile_columns;

  std::map<long long, std::vector<std::pair<long long, long long>>> per_user;
  for (const Rating& r : ratings) {
    if (item_index.count(r.item)) per_user[r.user].push_back({r.timestamp, r.item});
  }
  for (auto& [uid, events] : per_user) {
    std::sort(events.begin(), events.end());
    UserRecord u;
    u.id = std::to_string(uid);
    if (options.users_path.empty()) {
      u.profile = {1.0};
    } else {
      const auto it = demo.find(uid);
      u.profile = it != demo.end()
                      ? it->second
                      : std::vector<double>(corpus.profile_columns.size(), kMissing);
    }
    for (const auto& [ts, item] : events) {
      u.events.push_back({item_index.at(item), ts, 0, true});
    }
    corpus.users.push_back(std::move(u));
  }
  return corpus;
}

std::vector<std::size_t> chronological_split(const Corpus& corpus, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw InputError("chronological_split: fraction must be in (0, 1]");
  }
  std::vector<std::size_t> out;
  for (const UserRecord& u : corpus.users) {
    const std::size_t n = u.sequence().size();
    const auto train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    out.push_back(std::min(n, std::max<std::size_t>(train, n > 0 ? 1 : 0)));
  }
  return out;
}

// Window-length selection --------------------------------------------------

std::vector<double> item_difficulty_values(const Corpus& corpus) {
  std::vector<double> out;
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    const double d = corpus.items[i].difficulty;
    out.push_back(std::isfinite(d) ? d : static_cast<double>(i));
  }
  return out;
}

std::pair<std::vector<double>, double> average_acf(const Corpus& corpus, std::size_t max_lag) {
  if (max_lag == 0) throw InputError("acf: max lag must be >= 1");
  const auto values = item_difficulty_values(corpus);
  std::vector<double> acf(max_lag, 0.0);
  double used = 0.0;
  double total_len = 0.0;
  for (const UserRecord& u : corpus.users) {
    const auto seq = u.sequence();
    if (seq.size() < max_lag + 2) continue;
    std::vector<double> x;
    for (std::size_t id : seq) x.push_back(values[id]);
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double denom = 0.0;
    for (double v : x) denom += (v - mean) * (v - mean);
    if (denom <= 1e-12) continue;
    for (std::size_t lag = 1; lag <= max_lag; ++lag) {
      double num = 0.0;
      for (std::size_t t = 0; t + lag < x.size(); ++t) num += (x[t] - mean) * (x[t + lag] - mean);
      acf[lag - 1] += num / denom;
    }
    used += 1.0;
    total_len += n;
  }
  if (used == 0.0) {
    throw InputError("acf: need a user with at least " + std::to_string(max_lag + 2) +
                     " events and varying difficulty");
  }
  for (double& a : acf) a /= used;
  return {acf, total_len / used};
}

std::size_t acf_window(const Corpus& corpus, std::size_t max_lag) {
  const auto [acf, mean_len] = average_acf(corpus, max_lag);
  const double band = 1.96 / std::sqrt(mean_len);
  std::size_t best = 1;
  double best_value = band;
  for (std::size_t lag = 1; lag <= acf.size(); ++lag) {
    if (acf[lag - 1] > best_value) {
      best_value = acf[lag - 1];
      best = lag;
    }
  }
  return best;
}

// Synthetic adaptive-coaching data ----------------------------------------

namespace {

constexpr std::array<const char*, 3> kRegions{"upper body", "lower body", "core"};
constexpr std::array<std::array<const char*, 4>, 3> kMoves{{
    {"push-up", "shoulder press", "band row", "chest fly"},
    {"squat", "lunge", "step-up", "glute bridge"},
    {"plank", "crunch", "bird dog", "side plank"},
}};
// Slot offsets make the within-day order visible in the difficulty signal.
constexpr std::array<double, 3> kSlotOffset{0.0, 2.5, -2.5};

}  // namespace

SynthResult synth_generate(const SynthOptions& o) {
  if (o.levels < 2) throw InputError("synth: need at least 2 levels");
  const std::size_t cells = o.levels * kRegions.size();
  if (o.exercises < cells) {
    throw InputError("synth: " + std::to_string(o.levels) + " levels need at least " +
                     std::to_string(cells) + " exercises");
  }
  if (!o.fitness.empty() && o.fitness.size() != o.users) {
    throw InputError("synth: fitness override must have one value per user");
  }
  if (o.users == 0 || o.days == 0) throw InputError("synth: need users and days");

  SynthResult result;
  Corpus& corpus = result.corpus;
  // cell_members[level][slot] -> exercise ids
  std::vector<std::array<std::vector<std::size_t>, 3>> cell_members(o.levels);
  for (std::size_t e = 0; e < o.exercises; ++e) {
    const std::size_t cell = e % cells;
    const std::size_t level = cell / 3;
    const std::size_t slot = cell % 3;
    const std::size_t variant = e / cells;
    ItemInfo info;
    info.key = std::to_string(e + 1);
    info.name = std::string(kMoves[slot][variant % 4]) + " (level " + std::to_string(level + 1) +
                (variant >= 4 ? ", v" + std::to_string(variant + 1) : "") + ")";
    info.difficulty = 4.0 + static_cast<double>(level) + kSlotOffset[slot] +
                      0.1 * static_cast<double>(variant);
    info.path = {"resistance", kRegions[slot], "level " + std::to_string(level + 1)};
    info.alt_group = kMoves[slot][variant % 4];
    cell_members[level][slot].push_back(e);
    corpus.items.push_back(std::move(info));
  }

  corpus.profile_columns = {"age",   "gender", "bmi",   "pss",           "dass",
                            "chips", "glteq",  "exse",  "latent_fitness"};
  corpus.demographic_columns = {"age", "gender", "bmi"};
  corpus.excluded_columns = {"latent_fitness"};

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double top = static_cast<double>(o.levels - 1);

  for (std::size_t u = 0; u < o.users; ++u) {
    UserRecord user;
    char id[16];
    std::snprintf(id, sizeof id, "u%03zu", u + 1);
    user.id = id;
    const double fitness = o.fitness.empty() ? unit(rng) * top : o.fitness[u];
    const double gender = unit(rng) < 0.5 ? 0.0 : 1.0;
    const double f = fitness / top;  // in [0, 1]
    user.profile = {
        std::clamp(45.0 - 15.0 * f + 8.0 * noise(rng), 18.0, 70.0),
        gender,
        std::clamp(29.0 - 5.0 * f + 3.0 * noise(rng), 17.0, 45.0),
        std::clamp(20.0 + 6.0 * noise(rng), 0.0, 40.0),
        std::clamp(15.0 + 8.0 * noise(rng), 0.0, 63.0),
        std::clamp(30.0 - 10.0 * f + 6.0 * noise(rng), 0.0, 80.0),
        std::max(0.0, 10.0 + 40.0 * f + 10.0 * noise(rng)),
        std::clamp(40.0 + 40.0 * f + 12.0 * noise(rng), 0.0, 100.0),
        fitness,
    };

    // Favourite variant per cell; one gender-typical variant is more common.
    std::vector<std::array<std::size_t, 3>> favourite(o.levels);
    for (std::size_t l = 0; l < o.levels; ++l) {
      for (std::size_t s = 0; s < 3; ++s) {
        const auto& m = cell_members[l][s];
        if (unit(rng) < 0.6) {
          favourite[l][s] = gender > 0.5 ? m.size() - 1 : 0;
        } else {
          favourite[l][s] = static_cast<std::size_t>(unit(rng) * static_cast<double>(m.size()));
          favourite[l][s] = std::min(favourite[l][s], m.size() - 1);
        }
      }
    }

    std::size_t level = 0;
    std::vector<std::size_t> trace;
    std::vector<bool> success;
    for (std::size_t day = 0; day < o.days; ++day) {
      const std::size_t weekday = day % 7;
      if (weekday != 0 && weekday != 2 && weekday != 4) continue;
      trace.push_back(level);
      const double gap = static_cast<double>(level) - fitness;
      const double p_complete = gap <= 0.0 ? 1.0 : std::exp(-o.falloff * gap);
      bool all = true;
      for (std::size_t s = 0; s < 3; ++s) {
        const auto& m = cell_members[level][s];
        std::size_t v = favourite[level][s];
        if (unit(rng) >= o.preference) {
          v = std::min(static_cast<std::size_t>(unit(rng) * static_cast<double>(m.size())),
                       m.size() - 1);
        }
        const bool done = p_complete >= 1.0 || unit(rng) < p_complete;
        all = all && done;
        user.events.push_back({m[v], static_cast<std::int64_t>(day), s, done});
      }
      success.push_back(all);
      if (all) {
        level = std::min(level + 1, o.levels - 1);
      } else if (level > 0) {
        --level;
      }
    }
    result.level_trace.push_back(std::move(trace));
    result.day_success.push_back(std::move(success));
    corpus.users.push_back(std::move(user));
  }
  return result;
}

// Files ------------------------------------------------------------------

nlohmann::json taxonomy_to_json(const std::vector<ItemInfo>& items) {
  nlohmann::json j = nlohmann::json::object();
  for (const ItemInfo& it : items) {
    nlohmann::json e = {{"name", it.name}, {"path", it.path}, {"alt_group", it.alt_group}};
    e["difficulty"] = std::isfinite(it.difficulty) ? nlohmann::json(it.difficulty) : nlohmann::json(nullptr);
    if (it.profile) e["profile"] = *it.profile;
    j[it.key] = std::move(e);
  }
  return j;
}

namespace {

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

std::vector<ItemInfo> taxonomy_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("taxonomy: expected an object keyed by exercise id");
  std::vector<std::string> keys;
  for (const auto& [k, _] : j.items()) keys.push_back(k);
  // Numeric ids keep their numeric order; otherwise lexicographic.
  if (std::all_of(keys.begin(), keys.end(), all_digits)) {
    std::sort(keys.begin(), keys.end(), [](const std::string& a, const std::string& b) {
      return a.size() != b.size() ? a.size() < b.size() : a < b;
    });
  }
  std::vector<ItemInfo> out;
  for (const auto& k : keys) {
    const auto& e = j.at(k);
    try {
      ItemInfo it;
      it.key = k;
      it.name = e.value("name", k);
      if (e.contains("difficulty") && !e.at("difficulty").is_null()) {
        it.difficulty = e.at("difficulty").get<double>();
      }
      it.path = e.value("path", std::vector<std::string>{});
      it.alt_group = e.value("alt_group", std::string{});
      if (e.contains("profile")) it.profile = e.at("profile").get<std::vector<double>>();
      out.push_back(std::move(it));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError("taxonomy: entry " + k + ": " + ex.what());
    }
  }
  return out;
}

namespace {

std::string format_number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);

  std::ostringstream history;
  history << "user_id,day,slot,exercise_id,completed\n";
  for (const UserRecord& u : corpus.users) {
    for (const Event& e : u.events) {
      history << u.id << ',' << e.day << ',' << e.slot << ',' << corpus.items[e.item].key << ','
              << (e.completed ? 1 : 0) << '\n';
    }
  }
  write_file_atomic((root / "history.csv").string(), history.str());

  std::ostringstream users;
  users << "user_id";
  for (const auto& c : corpus.profile_columns) users << ',' << c;
  users << '\n';
  for (const UserRecord& u : corpus.users) {
    users << u.id;
    for (double v : u.profile) users << ',' << format_number(v);
    users << '\n';
  }
  write_file_atomic((root / "users.csv").string(), users.str());

  const nlohmann::json manifest = {{"demographic", corpus.demographic_columns},
                                   {"exclude", corpus.excluded_columns}};
  write_file_atomic((root / "manifest.json").string(), manifest.dump(2) + "\n");
  write_file_atomic((root / "exercises.json").string(), taxonomy_to_json(corpus.items).dump(2) + "\n");
}

Corpus load_corpus(const std::string& dir) {
  const std::filesystem::path root(dir);
  Corpus corpus;
  try {
    corpus.items = taxonomy_from_json(nlohmann::json::parse(read_file((root / "exercises.json").string())));
    const auto manifest = nlohmann::json::parse(read_file((root / "manifest.json").string()));
    corpus.demographic_columns = manifest.value("demographic", std::vector<std::string>{});
    corpus.excluded_columns = manifest.value("exclude", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw InputError("corpus " + dir + ": " + e.what());
  }
  std::unordered_map<std::string, std::size_t> item_of;
  for (std::size_t i = 0; i < corpus.items.size(); ++i) item_of[corpus.items[i].key] = i;

  std::unordered_map<std::string, std::size_t> user_of;
  {
    std::ifstream in = open_input((root / "users.csv").string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      const auto f = split(line, ',');
      if (lineno == 1) {
        if (f.empty() || f[0] != "user_id") throw ParseError("users.csv: header must start with user_id", 1);
        corpus.profile_columns.assign(f.begin() + 1, f.end());
        continue;
      }
      if (f.size() != corpus.profile_columns.size() + 1) {
        throw ParseError("users.csv: expected " + std::to_string(corpus.profile_columns.size() + 1) +
                             " fields, got " + std::to_string(f.size()),
                         lineno);
      }
      UserRecord u;
      u.id = f[0];
      for (std::size_t c = 1; c < f.size(); ++c) u.profile.push_back(parse_double(f[c], lineno, "users.csv"));
      if (user_of.count(u.id)) throw ParseError("users.csv: duplicate user " + u.id, lineno);
      user_of[u.id] = corpus.users.size();
      corpus.users.push_back(std::move(u));
    }
  }
  for (const auto& c : corpus.demographic_columns) {
    if (std::find(corpus.profile_columns.begin(), corpus.profile_columns.end(), c) ==
        corpus.profile_columns.end()) {
      throw InputError("manifest: demographic column '" + c + "' is not in users.csv");
    }
  }
  {
    std::ifstream in = open_input((root / "history.csv").string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      const auto f = split(line, ',');
      if (lineno == 1) {
        if (f != std::vector<std::string>{"user_id", "day", "slot", "exercise_id", "completed"}) {
          throw ParseError("history.csv: header must be user_id,day,slot,exercise_id,completed", 1);
        }
        continue;
      }
      if (f.size() != 5) throw ParseError("history.csv: expected 5 fields", lineno);
      const auto u = user_of.find(f[0]);
      if (u == user_of.end()) throw ParseError("history.csv: unknown user " + f[0], lineno);
      const auto it = item_of.find(f[3]);
      if (it == item_of.end()) throw ParseError("history.csv: unknown exercise " + f[3], lineno);
      const long long day = parse_int(f[1], lineno, "history.csv");
      const long long slot = parse_int(f[2], lineno, "history.csv");
      const long long done = parse_int(f[4], lineno, "history.csv");
      if (slot < 0 || (done != 0 && done != 1)) throw ParseError("history.csv: bad slot/completed", lineno);
      corpus.users[u->second].events.push_back(
          {it->second, day, static_cast<std::size_t>(slot), done == 1});
    }
  }
  for (UserRecord& u : corpus.users) {
    std::stable_sort(u.events.begin(), u.events.end(), [](const Event& a, const Event& b) {
      return a.day != b.day ? a.day < b.day : a.slot < b.slot;
    });
  }
  corpus.validate();
  return corpus;
}

}  // namespace exrec
