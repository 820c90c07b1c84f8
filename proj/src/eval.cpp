#include "exrec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "exrec/augment.hpp"
#include "exrec/coldstart.hpp"
#include "exrec/error.hpp"
#include "exrec/uncertainty.hpp"

namespace exrec {

double topk_accuracy(std::span<const std::vector<std::size_t>> rankings,
                     std::span<const std::size_t> targets, std::size_t k) {
  if (rankings.size() != targets.size()) {
    throw InputError("topk_accuracy: " + std::to_string(rankings.size()) + " rankings for " +
                     std::to_string(targets.size()) + " targets");
  }
  if (k == 0) throw InputError("topk_accuracy: k must be >= 1");
  if (targets.empty()) throw InputError("topk_accuracy: no cases");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& r = rankings[i];
    const auto end = r.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.size()));
    hits += std::find(r.begin(), end, targets[i]) != end;
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

// Configuration ------------------------------------------------------------

namespace {

const char* to_string(Augmentation a) {
  switch (a) {
    case Augmentation::none:
      return "none";
    case Augmentation::expert:
      return "expert";
    case Augmentation::rules:
      return "rules";
  }
  return "none";
}

Augmentation augmentation_from(const std::string& s) {
  if (s == "none") return Augmentation::none;
  if (s == "expert") return Augmentation::expert;
  if (s == "rules") return Augmentation::rules;
  throw ConfigError("unknown augmentation '" + s + "'");
}

const char* to_string(Padding p) {
  switch (p) {
    case Padding::none:
      return "none";
    case Padding::leading:
      return "leading";
    case Padding::full:
      return "full";
  }
  return "leading";
}

Padding padding_from(const std::string& s) {
  if (s == "none") return Padding::none;
  if (s == "leading") return Padding::leading;
  if (s == "full") return Padding::full;
  throw ConfigError("unknown padding '" + s + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::table1_row(int row) {
  ExperimentConfig c;
  switch (row) {
    case 1:
      c.name = "Baseline (Demographic)";
      break;
    case 2:
      c.name = "Baseline (Full Profile)";
      c.schema = ProfileSchema::full;
      break;
    case 3:
      c.name = "Baseline + Data Augmentation (Expert)";
      c.augmentation = Augmentation::expert;
      break;
    case 4:
      c.name = "Baseline + Data Augmentation (Rule based)";
      c.augmentation = Augmentation::rules;
      break;
    case 5:
      c.name = "Baseline (Demographic) + Active Learning";
      c.active = true;
      break;
    case 6:
      c.name = "Baseline (Demographic) + New user Init";
      c.coldstart = true;
      break;
    case 7:
      c.name = "Baseline + Data Augmentation (Expert) + Active Learning";
      c.augmentation = Augmentation::expert;
      c.active = true;
      break;
    case 8:
      c.name = "Baseline + Data Augmentation (Expert) + New user Init";
      c.augmentation = Augmentation::expert;
      c.coldstart = true;
      break;
    case 9:
      c.name = "Baseline + Data Augmentation (Expert) + New user Init + Active Learning";
      c.augmentation = Augmentation::expert;
      c.coldstart = true;
      c.active = true;
      break;
    default:
      throw ConfigError("table rows are 1..9, got " + std::to_string(row));
  }
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = {
      {"name", name},
      {"augmentation", to_string(augmentation)},
      {"coldstart", coldstart},
      {"active", active},
      {"schema", schema == ProfileSchema::full ? "full" : "demographic"},
      {"window", window},
      {"dims", dims},
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"learning_rate", learning_rate},
      {"level", level},
      {"seeds", seeds},
      {"padding", to_string(padding)},
      {"augment_rate", augment_rate},
      {"min_support", min_support},
      {"min_confidence", min_confidence},
      {"coldstart_k", coldstart_k},
      {"coldstart_lr", coldstart_lr},
      {"coldstart_epochs", coldstart_epochs},
      {"finetune_lr", finetune_lr},
      {"finetune_steps", finetune_steps},
      {"scoring", scoring == Scoring::corrected ? "corrected" : "pre_correction"},
  };
  j["theta_override"] = theta_override ? nlohmann::json(*theta_override) : nlohmann::json(nullptr);
  j["budget"] = budget == std::numeric_limits<std::size_t>::max() ? nlohmann::json(nullptr)
                                                                   : nlohmann::json(budget);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    c.augmentation = augmentation_from(j.value("augmentation", std::string("none")));
    c.coldstart = j.value("coldstart", c.coldstart);
    c.active = j.value("active", c.active);
    const std::string schema = j.value("schema", std::string("demographic"));
    if (schema != "demographic" && schema != "full") throw ConfigError("unknown schema '" + schema + "'");
    c.schema = schema == "full" ? ProfileSchema::full : ProfileSchema::demographic;
    c.window = j.value("window", c.window);
    c.dims = j.value("dims", c.dims);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.level = j.value("level", c.level);
    c.seeds = j.value("seeds", c.seeds);
    c.padding = padding_from(j.value("padding", std::string("leading")));
    c.augment_rate = j.value("augment_rate", c.augment_rate);
    c.min_support = j.value("min_support", c.min_support);
    c.min_confidence = j.value("min_confidence", c.min_confidence);
    c.coldstart_k = j.value("coldstart_k", c.coldstart_k);
    c.coldstart_lr = j.value("coldstart_lr", c.coldstart_lr);
    c.coldstart_epochs = j.value("coldstart_epochs", c.coldstart_epochs);
    c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
    c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
    const std::string scoring = j.value("scoring", std::string("pre_correction"));
    if (scoring != "pre_correction" && scoring != "corrected") {
      throw ConfigError("unknown scoring '" + scoring + "'");
    }
    c.scoring = scoring == "corrected" ? Scoring::corrected : Scoring::pre_correction;
    if (j.contains("theta_override") && !j.at("theta_override").is_null()) {
      c.theta_override = j.at("theta_override").get<double>();
    }
    if (j.contains("budget") && !j.at("budget").is_null()) c.budget = j.at("budget").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  return c;
}

// Metrics ----------------------------------------------------------------

namespace {

double ratio(std::size_t a, std::size_t b) {
  return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}

}  // namespace

double Metrics::top1() const { return ratio(hit1, cases); }
double Metrics::top5() const { return ratio(hit5, cases); }
double Metrics::top10() const { return ratio(hit10, cases); }
double Metrics::query_rate() const { return ratio(queries, steps); }

Metrics& Metrics::operator+=(const Metrics& o) {
  cases += o.cases;
  hit1 += o.hit1;
  hit5 += o.hit5;
  hit10 += o.hit10;
  steps += o.steps;
  queries += o.queries;
  return *this;
}

nlohmann::json Metrics::to_json() const {
  return {{"cases", cases}, {"top1", top1()},   {"top5", top5()},      {"top10", top10()},
          {"steps", steps}, {"queries", queries}, {"query_rate", query_rate()}};
}

nlohmann::json Summary::to_json() const {
  return {{"top1", top1}, {"top5", top5}, {"top10", top10}, {"query_rate", query_rate}};
}

nlohmann::json FoldAudit::to_json() const {
  return {{"seed", seed},
          {"held_out", held_out},
          {"train_users", train_users},
          {"train_windows", train_windows},
          {"held_out_in_train", held_out_in_train},
          {"test_windows", test_windows}};
}

nlohmann::json RunResult::to_json(bool include_folds) const {
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t i = 0; i < per_seed.size(); ++i) {
    auto m = per_seed[i].to_json();
    m["seed"] = config.seeds.at(i);
    seeds.push_back(std::move(m));
  }
  nlohmann::json j = {{"config", config.to_json()},
                      {"protocol", protocol},
                      {"per_seed", seeds},
                      {"mean", mean.to_json()},
                      {"std", std.to_json()},
                      {"runtime", runtime_seconds}};
  if (include_folds) {
    nlohmann::json folds = nlohmann::json::array();
    for (const FoldResult& f : per_fold) {
      auto m = f.metrics.to_json();
      m["seed"] = f.seed;
      m["user"] = f.user;
      m["theta"] = f.theta;
      folds.push_back(std::move(m));
    }
    j["per_fold"] = std::move(folds);
    nlohmann::json audit_log = nlohmann::json::array();
    for (const FoldAudit& a : audit) audit_log.push_back(a.to_json());
    j["audit"] = std::move(audit_log);
  }
  if (last_dirichlet) j["dirichlet_alpha"] = last_dirichlet->alpha;
  if (train_metrics) j["train_metrics"] = train_metrics->to_json();
  return j;
}

const ModelParams* ModelCache::find(const std::string& key) const {
  const auto it = models_.find(key);
  return it == models_.end() ? nullptr : &it->second;
}

void ModelCache::put(const std::string& key, ModelParams params) {
  models_.insert_or_assign(key, std::move(params));
}

// Runs ---------------------------------------------------------------------

namespace {

constexpr std::size_t kRankDepth = 10;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void score(Metrics& m, const std::vector<Ranked>& ranked, std::size_t target, bool corrected_hit) {
  ++m.cases;
  if (corrected_hit) {
    ++m.hit1;
    ++m.hit5;
    ++m.hit10;
    return;
  }
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (ranked[r].id != target) continue;
    if (r < 1) ++m.hit1;
    if (r < 5) ++m.hit5;
    if (r < 10) ++m.hit10;
    break;
  }
}

// Everything a fold needs to train and to evaluate one or more users.
struct Fold {
  std::vector<std::size_t> train_users;
  std::vector<std::vector<std::size_t>> sequences;  // completed events per user
  std::vector<std::size_t> train_end;               // targets below this index are training data
  std::vector<std::vector<double>> raw_profiles;
  std::vector<Vector> profiles;                     // standardized on train_users
  std::shared_ptr<const WindowBuilder> builder;
};

ModelConfig model_config(const Corpus& corpus, const ExperimentConfig& ec,
                         std::size_t user_features, std::size_t item_features) {
  if (ec.dims == "coaching") {
    return ModelConfig::coaching(corpus.items.size(), user_features, item_features, ec.window);
  }
  if (ec.dims == "movies") {
    return ModelConfig::movies(corpus.items.size(), user_features, item_features, ec.window);
  }
  throw ConfigError("unknown model dims '" + ec.dims + "' (coaching or movies)");
}

Fold prepare_fold(const Corpus& corpus, const ExperimentConfig& ec,
                  std::vector<std::size_t> train_users, std::vector<std::size_t> train_end,
                  const std::vector<Vector>& item_profiles) {
  Fold f;
  f.train_users = std::move(train_users);
  f.train_end = std::move(train_end);
  for (const UserRecord& u : corpus.users) {
    f.sequences.push_back(u.sequence());
    f.raw_profiles.push_back(select_profile(corpus, u, ec.schema));
  }
  std::vector<std::vector<double>> train_rows;
  for (std::size_t u : f.train_users) train_rows.push_back(f.raw_profiles[u]);
  const Standardizer st = Standardizer::fit(train_rows);
  for (const auto& r : f.raw_profiles) f.profiles.push_back(st.apply(r));
  f.builder = std::make_shared<const WindowBuilder>(ec.window, corpus.pad_id(), item_profiles);
  return f;
}

std::vector<WindowSample> user_train_windows(const Fold& f, const ExperimentConfig& ec,
                                             std::size_t u) {
  return f.builder->samples(f.sequences[u], f.profiles[u], first_target(ec.padding, ec.window),
                            f.train_end[u], u);
}

void require_taxonomy(const Corpus& corpus) {
  for (const ItemInfo& it : corpus.items) {
    if (it.path.empty()) {
      throw ConfigError("expert augmentation needs a taxonomy; item " + it.key + " has no category");
    }
  }
}

// Augmented copies of the training prefixes, as windows owned by their users.
std::vector<WindowSample> augmented_windows(const Corpus& corpus, const Fold& f,
                                            const ExperimentConfig& ec, std::uint64_t seed) {
  if (ec.augmentation == Augmentation::none) return {};
  std::vector<Sequence> prefixes;
  for (std::size_t u : f.train_users) {
    const auto& s = f.sequences[u];
    prefixes.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(f.train_end[u]));
  }
  std::vector<Sequence> copies;
  if (ec.augmentation == Augmentation::expert) {
    require_taxonomy(corpus);
    copies = augment_expert(prefixes, corpus.items, ec.augment_rate, seed);
  } else {
    // Transactions from training users only: user-days when days are known.
    Corpus train;
    train.items = corpus.items;
    for (std::size_t k = 0; k < f.train_users.size(); ++k) {
      UserRecord r;
      std::size_t seen = 0;
      for (const Event& e : corpus.users[f.train_users[k]].events) {
        if (seen >= prefixes[k].size()) break;
        r.events.push_back(e);
        seen += e.completed;
      }
      train.users.push_back(std::move(r));
    }
    const auto rules = mine_rules(rule_transactions(train), ec.min_support, ec.min_confidence);
    copies = augment_rules(prefixes, rules, corpus.items.size(), ec.augment_rate, seed);
  }
  std::vector<WindowSample> out;
  for (std::size_t k = 0; k < f.train_users.size(); ++k) {
    const std::size_t u = f.train_users[k];
    auto w = f.builder->samples(copies[k], f.profiles[u], first_target(ec.padding, ec.window),
                                copies[k].size(), u);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

std::string cache_key(const ExperimentConfig& ec, std::uint64_t seed, const std::string& fold) {
  nlohmann::json k = {{"augmentation", to_string(ec.augmentation)},
                      {"schema", ec.schema == ProfileSchema::full ? "full" : "demographic"},
                      {"window", ec.window},
                      {"dims", ec.dims},
                      {"epochs", ec.epochs},
                      {"batch_size", ec.batch_size},
                      {"learning_rate", ec.learning_rate},
                      {"padding", to_string(ec.padding)},
                      {"seed", seed},
                      {"fold", fold}};
  if (ec.augmentation != Augmentation::none) k["augment_rate"] = ec.augment_rate;
  if (ec.augmentation == Augmentation::rules) {
    k["min_support"] = ec.min_support;
    k["min_confidence"] = ec.min_confidence;
  }
  return k.dump();
}

struct Trained {
  ModelParams params;
  std::vector<WindowSample> train;  // un-augmented training windows
  std::size_t total_windows = 0;
  std::size_t held_out_windows = 0;  // owned by `excluded`, for the audit
};

Trained train_fold(const Corpus& corpus, const Fold& f, const ExperimentConfig& ec,
                   std::uint64_t seed, const std::string& fold_name,
                   std::optional<std::size_t> excluded, ModelCache* cache) {
  Trained t{ModelParams{}, {}, 0, 0};
  for (std::size_t u : f.train_users) {
    auto w = user_train_windows(f, ec, u);
    t.train.insert(t.train.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  std::vector<WindowSample> all = t.train;
  auto extra = augmented_windows(corpus, f, ec, mix(seed, 0xA11CE));
  all.insert(all.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
  if (all.empty()) throw InputError("no training windows");
  t.total_windows = all.size();
  if (excluded) {
    t.held_out_windows = static_cast<std::size_t>(std::count_if(
        all.begin(), all.end(), [&](const WindowSample& s) { return s.user == *excluded; }));
  }
  const std::string key = cache_key(ec, seed, fold_name);
  if (const ModelParams* p = cache ? cache->find(key) : nullptr) {
    t.params = *p;
    return t;
  }
  const std::size_t item_features = static_cast<std::size_t>(f.builder->item_profiles()[0].size());
  const ModelConfig mc = model_config(corpus, ec, f.profiles[0].size(), item_features);
  TrainOptions opt;
  opt.epochs = ec.epochs;
  opt.batch_size = ec.batch_size;
  opt.adam.learning_rate = ec.learning_rate;
  opt.seed = mix(seed, std::hash<std::string>{}(fold_name));
  t.params = train(all, mc, opt).params;
  if (cache) cache->put(key, t.params);
  return t;
}

struct Threshold {
  std::shared_ptr<const MarginalDistribution> dist;
  double theta = 0.0;
  DirichletParams alpha;
};

Threshold fit_threshold(const ModelParams& params, const std::vector<WindowSample>& train,
                        const ExperimentConfig& ec) {
  std::vector<SortedTriple> triples;
  triples.reserve(train.size());
  const auto real = static_cast<Eigen::Index>(params.config.real_items());
  for (const WindowSample& s : train) {
    triples.push_back(sorted_triple(predict_proba(params, s.input).head(real)));
  }
  Threshold th;
  th.alpha = fit_dirichlet(triples);
  auto d = MarginalDistribution::tabulate(th.alpha);
  d.set_level(ec.level);
  th.theta = ec.theta_override ? *ec.theta_override : d.theta();
  th.dist = std::make_shared<const MarginalDistribution>(std::move(d));
  return th;
}

ModelParams personalize(const Fold& f, const ExperimentConfig& ec, const Corpus& corpus,
                        const ModelParams& global, std::size_t user, std::uint64_t seed) {
  if (!ec.coldstart) return global;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  for (std::size_t u : f.train_users) {
    if (u == user) continue;
    ids.push_back(corpus.users[u].id);
    rows.push_back(f.raw_profiles[u]);
  }
  if (ids.size() < ec.coldstart_k) {
    throw ConfigError("new-user initialization needs " + std::to_string(ec.coldstart_k) +
                      " other training users");
  }
  const ProfileIndex index(ids, rows);
  std::vector<WindowSample> pooled;
  for (const Neighbor& n : index.similar_users(f.raw_profiles[user], ec.coldstart_k)) {
    const std::size_t u = *corpus.find_user(n.id);
    auto w = user_train_windows(f, ec, u);
    pooled.insert(pooled.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  ColdstartOptions o;
  o.learning_rate = ec.coldstart_lr;
  o.epochs = ec.coldstart_epochs;
  o.seed = mix(seed, user);
  return init_for_new_user(global, pooled, o).params;
}

// Replays targets [begin, end) of one user's sequence.
Metrics replay(const Fold& f, const ExperimentConfig& ec, const ModelParams& params,
               const Threshold* th, std::size_t user, std::size_t begin, std::uint64_t seed,
               const std::string& user_id) {
  const auto& seq = f.sequences[user];
  const std::size_t end = seq.size();
  Metrics m;
  if (begin >= end) return m;
  const std::size_t real = params.config.real_items();
  const std::size_t depth = std::min(kRankDepth, real);
  if (!ec.active) {
    for (std::size_t t = begin; t < end; ++t) {
      const Window w = f.builder->build(std::span(seq).first(t), f.profiles[user]);
      const auto ranked = predict_topk(predict_proba(params, w), depth, params.config.pad_id());
      ++m.steps;
      score(m, ranked, seq[t], false);
    }
    return m;
  }
  SessionOptions so;
  so.finetune_lr = ec.finetune_lr;
  so.finetune_steps = ec.finetune_steps;
  so.topk = kRankDepth;
  so.budget = ec.budget;
  so.seed = mix(seed, user);
  Session session(user_id, params, f.profiles[user], {f.builder, th->dist, th->theta}, so,
                  std::vector<std::size_t>(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(begin)));
  ReplayOracle oracle(seq);
  for (std::size_t t = begin; t < end; ++t) {
    const Decision d = session.step();
    score(m, d.ranked, seq[t], d.queried() && ec.scoring == Scoring::corrected);
    if (d.queried()) {
      session.resolve(d.ticket->id, oracle.correct(*d.ticket));
    } else {
      session.observe(seq[t]);
    }
  }
  m.steps = session.steps();
  m.queries = session.queries();
  return m;
}

void summarize(RunResult& r) {
  const double n = static_cast<double>(r.per_seed.size());
  auto stat = [&](auto get, double& mean, double& sd) {
    mean = 0.0;
    for (const Metrics& m : r.per_seed) mean += get(m) / n;
    double ss = 0.0;
    for (const Metrics& m : r.per_seed) ss += (get(m) - mean) * (get(m) - mean);
    sd = r.per_seed.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  };
  stat([](const Metrics& m) { return m.top1(); }, r.mean.top1, r.std.top1);
  stat([](const Metrics& m) { return m.top5(); }, r.mean.top5, r.std.top5);
  stat([](const Metrics& m) { return m.top10(); }, r.mean.top10, r.std.top10);
  stat([](const Metrics& m) { return m.query_rate(); }, r.mean.query_rate, r.std.query_rate);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

RunResult loocv_run(const Corpus& corpus, const ExperimentConfig& ec, ModelCache* cache) {
  const auto t0 = std::chrono::steady_clock::now();
  if (corpus.users.size() < 2) throw InputError("loocv: need at least two users");
  if (ec.seeds.empty()) throw ConfigError("loocv: no seeds");
  if (ec.augmentation == Augmentation::expert) require_taxonomy(corpus);
  corpus.validate();
  const auto item_profiles = item_profile_vectors(corpus);

  RunResult r;
  r.config = ec;
  r.protocol = "loocv";
  for (std::uint64_t seed : ec.seeds) {
    Metrics pooled;
    for (std::size_t h = 0; h < corpus.users.size(); ++h) {
      std::vector<std::size_t> train_users;
      std::vector<std::size_t> train_end;
      for (std::size_t u = 0; u < corpus.users.size(); ++u) {
        if (u != h) train_users.push_back(u);
        // Held-out users contribute no training targets at all.
        train_end.push_back(u == h ? 0 : corpus.users[u].sequence().size());
      }
      const Fold f = prepare_fold(corpus, ec, train_users, train_end, item_profiles);
      const std::string& uid = corpus.users[h].id;
      const Trained t = train_fold(corpus, f, ec, seed, "loo:" + uid, h, cache);

      std::optional<Threshold> th;
      if (ec.active) {
        th = fit_threshold(t.params, t.train, ec);
        r.last_dirichlet = th->alpha;
      }
      const ModelParams personal = personalize(f, ec, corpus, t.params, h, seed);
      const std::size_t begin = first_target(ec.padding, ec.window);
      const Metrics m = replay(f, ec, personal, th ? &*th : nullptr, h, begin, seed, uid);

      FoldAudit a;
      a.seed = seed;
      a.held_out = uid;
      a.train_users = train_users.size();
      a.train_windows = t.total_windows;
      a.held_out_in_train = t.held_out_windows;
      a.test_windows = m.cases;
      r.audit.push_back(a);
      r.per_fold.push_back({seed, uid, m, th ? th->theta : 0.0});
      pooled += m;
    }
    r.per_seed.push_back(pooled);
  }
  summarize(r);
  r.runtime_seconds = seconds_since(t0);
  return r;
}

RunResult holdout_run(const Corpus& corpus, const ExperimentConfig& ec, double train_fraction,
                      bool report_train) {
  const auto t0 = std::chrono::steady_clock::now();
  if (ec.seeds.empty()) throw ConfigError("holdout: no seeds");
  if (ec.augmentation == Augmentation::expert) require_taxonomy(corpus);
  corpus.validate();
  const auto split = chronological_split(corpus, train_fraction);
  const std::size_t first = first_target(ec.padding, ec.window);
  std::size_t test_cases = 0;
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    const std::size_t n = corpus.users[u].sequence().size();
    const std::size_t begin = std::max(split[u], first);
    test_cases += n > begin ? n - begin : 0;
  }
  if (test_cases == 0) throw InputError("holdout: empty test split");

  std::vector<std::size_t> all_users(corpus.users.size());
  std::iota(all_users.begin(), all_users.end(), 0);
  const Fold f = prepare_fold(corpus, ec, all_users, split, item_profile_vectors(corpus));

  RunResult r;
  r.config = ec;
  r.protocol = "holdout";
  for (std::uint64_t seed : ec.seeds) {
    const Trained t = train_fold(corpus, f, ec, seed, "holdout", std::nullopt, nullptr);
    std::optional<Threshold> th;
    if (ec.active) {
      th = fit_threshold(t.params, t.train, ec);
      r.last_dirichlet = th->alpha;
    }
    Metrics pooled;
    for (std::size_t u = 0; u < corpus.users.size(); ++u) {
      const ModelParams personal = personalize(f, ec, corpus, t.params, u, seed);
      const Metrics m = replay(f, ec, personal, th ? &*th : nullptr, u, std::max(split[u], first),
                               seed, corpus.users[u].id);
      pooled += m;
    }
    r.per_seed.push_back(pooled);
    FoldAudit a;
    a.seed = seed;
    a.train_users = corpus.users.size();
    a.train_windows = t.total_windows;
    a.test_windows = pooled.cases;
    r.audit.push_back(a);
    if (report_train && !r.train_metrics) {
      Metrics tm;
      const std::size_t depth = std::min(kRankDepth, t.params.config.real_items());
      for (const WindowSample& s : t.train) {
        score(tm, predict_topk(predict_proba(t.params, s.input), depth, t.params.config.pad_id()),
              s.target, false);
      }
      r.train_metrics = tm;
    }
  }
  summarize(r);
  r.runtime_seconds = seconds_since(t0);
  return r;
}

Metrics popularity_baseline(const Corpus& corpus, std::size_t window, Padding padding,
                            double train_fraction) {
  const auto split = chronological_split(corpus, train_fraction);
  const std::size_t first = first_target(padding, window);
  std::vector<std::size_t> counts(corpus.items.size(), 0);
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    const auto seq = corpus.users[u].sequence();
    for (std::size_t t = first; t < split[u]; ++t) ++counts[seq[t]];
  }
  std::vector<Ranked> ranking;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    ranking.push_back({i, static_cast<double>(counts[i])});
  }
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const Ranked& a, const Ranked& b) { return a.probability > b.probability; });
  ranking.resize(std::min(kRankDepth, ranking.size()));
  Metrics m;
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    const auto seq = corpus.users[u].sequence();
    for (std::size_t t = std::max(split[u], first); t < seq.size(); ++t) score(m, ranking, seq[t], false);
  }
  if (m.cases == 0) throw InputError("popularity: empty test split");
  return m;
}

nlohmann::json GlobalModel::to_json() const {
  return {{"format_version", kCheckpointFormatVersion},
          {"config_hash", config_hash(params.config)},
          {"schema", schema == ProfileSchema::full ? "full" : "demographic"},
          {"window", window},
          {"padding", to_string(padding)},
          {"train_windows", train_windows},
          {"seed", seed},
          {"standardizer", standardizer.to_json()},
          {"checkpoint", checkpoint_to_json(params)}};
}

GlobalModel GlobalModel::from_json(const nlohmann::json& j) {
  try {
    GlobalModel g;
    g.params = checkpoint_from_json(j.at("checkpoint"));
    if (j.at("config_hash").get<std::string>() != config_hash(g.params.config)) {
      throw ConfigError("global model: config_hash does not match the checkpoint");
    }
    g.standardizer = Standardizer::from_json(j.at("standardizer"));
    const std::string schema = j.at("schema").get<std::string>();
    g.schema = schema == "full" ? ProfileSchema::full : ProfileSchema::demographic;
    g.window = j.at("window").get<std::size_t>();
    g.padding = padding_from(j.at("padding").get<std::string>());
    g.train_windows = j.value("train_windows", std::size_t{0});
    g.seed = j.value("seed", std::uint64_t{1});
    if (g.window != g.params.config.window) throw ConfigError("global model: window mismatch");
    if (g.standardizer.mean.size() != g.params.config.user_features) {
      throw ConfigError("global model: standardizer width does not match user_features");
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("global model: ") + e.what());
  }
}

namespace {

Fold whole_corpus_fold(const Corpus& corpus, const ExperimentConfig& ec) {
  std::vector<std::size_t> users(corpus.users.size());
  std::iota(users.begin(), users.end(), 0);
  std::vector<std::size_t> ends;
  for (const UserRecord& u : corpus.users) ends.push_back(u.sequence().size());
  return prepare_fold(corpus, ec, users, ends, item_profile_vectors(corpus));
}

}  // namespace

GlobalModel train_global(const Corpus& corpus, const ExperimentConfig& ec, std::uint64_t seed) {
  corpus.validate();
  if (ec.augmentation == Augmentation::expert) require_taxonomy(corpus);
  const Fold f = whole_corpus_fold(corpus, ec);
  const Trained t = train_fold(corpus, f, ec, seed, "global", std::nullopt, nullptr);
  std::vector<std::vector<double>> rows;
  for (std::size_t u : f.train_users) rows.push_back(f.raw_profiles[u]);
  GlobalModel g;
  g.params = t.params;
  g.standardizer = Standardizer::fit(rows);
  g.schema = ec.schema;
  g.window = ec.window;
  g.padding = ec.padding;
  g.train_windows = t.total_windows;
  g.seed = seed;
  return g;
}

std::vector<SortedTriple> training_triples(const Corpus& corpus, const GlobalModel& model) {
  const WindowBuilder b(model.window, corpus.pad_id(), item_profile_vectors(corpus));
  const auto real = static_cast<Eigen::Index>(model.params.config.real_items());
  const std::size_t first = first_target(model.padding, model.window);
  std::vector<SortedTriple> out;
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    const Vector profile = model.standardizer.apply(select_profile(corpus, corpus.users[u], model.schema));
    const auto seq = corpus.users[u].sequence();
    for (const WindowSample& s : b.samples(seq, profile, first, seq.size(), u)) {
      out.push_back(sorted_triple(predict_proba(model.params, s.input).head(real)));
    }
  }
  return out;
}

std::string render_table(std::span<const RunResult> results) {
  std::size_t width = 6;
  for (const RunResult& r : results) width = std::max(width, r.config.name.size());
  std::ostringstream os;
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v << "%";
    return s.str();
  };
  os << std::left << std::setw(static_cast<int>(width)) << "Method" << std::right
     << std::setw(10) << "top-1" << std::setw(10) << "top-5" << std::setw(10) << "top-10"
     << std::setw(10) << "queries" << "\n";
  for (const RunResult& r : results) {
    os << std::left << std::setw(static_cast<int>(width)) << r.config.name << std::right
       << std::setw(10) << pct(r.mean.top1) << std::setw(10) << pct(r.mean.top5)
       << std::setw(10) << pct(r.mean.top10) << std::setw(10) << pct(r.mean.query_rate) << "\n";
  }
  return os.str();
}

}  // namespace exrec
