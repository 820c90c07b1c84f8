#include "exrec/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "exrec/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace exrec {

// Configuration ------------------------------------------------------------

json ServiceConfig::to_json() const {
  return {{"host", host},
          {"port", port},
          {"data_dir", data_dir},
          {"corpus_dir", corpus_dir},
          {"checkpoint_path", checkpoint_path},
          {"distribution_path", distribution_path},
          {"alpha_level", alpha_level},
          {"theta", theta ? json(*theta) : json(nullptr)},
          {"finetune_lr", finetune_lr},
          {"finetune_steps", finetune_steps},
          {"budget", budget == std::numeric_limits<std::size_t>::max() ? json(nullptr) : json(budget)},
          {"coldstart_k", coldstart_k},
          {"retrain_epochs", retrain_epochs},
          {"token", token}};
}

ServiceConfig ServiceConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("service config must be a JSON object");
  const ServiceConfig defaults;
  const json known = defaults.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("service config: unknown key '" + key + "'");
  }
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.corpus_dir = j.value("corpus_dir", c.corpus_dir);
    c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
    c.distribution_path = j.value("distribution_path", c.distribution_path);
    c.alpha_level = j.value("alpha_level", c.alpha_level);
    if (j.contains("theta") && !j.at("theta").is_null()) c.theta = j.at("theta").get<double>();
    c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
    c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
    if (j.contains("budget") && !j.at("budget").is_null()) c.budget = j.at("budget").get<std::size_t>();
    c.coldstart_k = j.value("coldstart_k", c.coldstart_k);
    c.retrain_epochs = j.value("retrain_epochs", c.retrain_epochs);
    c.token = j.value("token", c.token);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("service config: ") + e.what());
  }
  return c;
}

void ServiceConfig::apply_env(const std::function<const char*(const char*)>& getenv) {
  json j = to_json();
  for (auto& [key, value] : j.items()) {
    std::string name = "EXREC_";
    for (char ch : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    const char* raw = getenv(name.c_str());
    if (!raw) continue;
    const std::string text(raw);
    if (value.is_string() || (value.is_null() && key != "budget" && key != "theta")) {
      value = text;
      continue;
    }
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      throw ConfigError(name + ": cannot parse '" + text + "'");
    }
  }
  *this = from_json(j);
}

void ServiceConfig::validate() const {
  if (token.empty()) throw ConfigError("service config: token must be set");
  if (corpus_dir.empty()) throw ConfigError("service config: corpus_dir must be set");
  if (checkpoint_path.empty()) throw ConfigError("service config: checkpoint_path must be set");
  if (distribution_path.empty()) throw ConfigError("service config: distribution_path must be set");
  if (!(alpha_level > 0.0 && alpha_level < 1.0)) throw ConfigError("alpha_level must be in (0, 1)");
  if (port < 0 || port > 65535) throw ConfigError("port out of range");
  if (theta && !(*theta >= 0.0 && *theta <= 1.0)) throw ConfigError("theta must be in [0, 1]");
}

// Internals ----------------------------------------------------------------

struct Service::Deployment {
  std::uint64_t version = 0;
  GlobalModel model;
  std::vector<std::string> ids;                  // population with profiles
  std::vector<std::vector<double>> rows;      // raw schema rows, aligned with ids
  std::vector<std::vector<WindowSample>> windows;  // aligned with ids
  std::unique_ptr<ProfileIndex> index;        // null below coldstart_k users
};

struct Service::UserState {
  std::mutex mu;
  std::string id;
  std::uint64_t number = 0;
  std::uint64_t model_version = 0;
  std::vector<double> profile;  // aligned with corpus profile_columns
  json events = json::array();
  std::unique_ptr<Session> session;
  std::uint64_t seq = 0;  // last applied log record
  std::vector<std::string> reviews;
};

namespace {

constexpr int kStoreFormat = 1;

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms % 1000));
  return out;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Response error(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, std::move(extra)};
}

json profile_to_json(const std::vector<double>& p) {
  json out = json::array();
  for (double v : p) out.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return out;
}

std::vector<double> profile_from_json(const json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(v.is_null() ? kMissing : v.get<double>());
  return out;
}

json review_storage(const ReviewItem& r) {
  return {{"id", r.id},
          {"user", r.user},
          {"created", r.created},
          {"seq", r.seq},
          {"ticket", r.ticket.to_json()},
          {"status", r.status},
          {"corrected", r.corrected ? json(*r.corrected) : json(nullptr)},
          {"resolver", r.resolver},
          {"resolved_at", r.resolved_at}};
}

ReviewItem review_from_storage(const json& j) {
  ReviewItem r;
  r.id = j.at("id").get<std::string>();
  r.user = j.at("user").get<std::string>();
  r.created = j.at("created").get<std::string>();
  r.seq = j.at("seq").get<std::uint64_t>();
  r.ticket = ReviewTicket::from_json(j.at("ticket"));
  r.status = j.at("status").get<std::string>();
  if (!j.at("corrected").is_null()) r.corrected = j.at("corrected").get<std::size_t>();
  r.resolver = j.at("resolver").get<std::string>();
  r.resolved_at = j.at("resolved_at").get<std::string>();
  return r;
}

std::string model_path(const std::string& data_dir, std::uint64_t version) {
  return (fs::path(data_dir) / "models" / ("global-" + std::to_string(version) + ".json")).string();
}

std::string dims_of(const GlobalModel& g) {
  const ModelConfig& c = g.params.config;
  return c == ModelConfig::movies(c.real_items(), c.user_features, c.item_features, c.window)
             ? "movies"
             : "coaching";
}

}  // namespace

// Construction and recovery -------------------------------------------------

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  config_.validate();
  corpus_ = load_corpus(config_.corpus_dir);
  GlobalModel base = GlobalModel::from_json(json::parse(read_file(config_.checkpoint_path)));
  if (base.params.config.real_items() != corpus_.items.size()) {
    throw ConfigError("checkpoint has " + std::to_string(base.params.config.real_items()) +
                      " items but the corpus has " + std::to_string(corpus_.items.size()));
  }
  builder_ = std::make_shared<const WindowBuilder>(base.window, corpus_.pad_id(),
                                                   item_profile_vectors(corpus_));
  auto dist = MarginalDistribution::from_json(json::parse(read_file(config_.distribution_path)));
  dist.set_level(config_.alpha_level);
  theta_ = config_.theta ? *config_.theta : dist.theta();
  distribution_ = std::make_shared<const MarginalDistribution>(std::move(dist));
  deployment_ = make_deployment(std::move(base), 0);

  fs::create_directories(fs::path(config_.data_dir) / "sessions");
  fs::create_directories(fs::path(config_.data_dir) / "models");
  recover();
}

Service::~Service() {
  if (retrain_thread_.joinable()) retrain_thread_.join();
  if (log_fd_ >= 0) ::close(log_fd_);
}

std::shared_ptr<const Service::Deployment> Service::make_deployment(GlobalModel model,
                                                                    std::uint64_t version) const {
  auto d = std::make_shared<Deployment>();
  d->version = version;
  const std::size_t first = first_target(model.padding, model.window);
  for (std::size_t u = 0; u < corpus_.users.size(); ++u) {
    const UserRecord& rec = corpus_.users[u];
    d->ids.push_back(rec.id);
    d->rows.push_back(select_profile(corpus_, rec, model.schema));
    const Vector profile = model.standardizer.apply(d->rows.back());
    const auto seq = rec.sequence();
    d->windows.push_back(builder_->samples(seq, profile, first, seq.size(), u));
  }
  if (d->ids.size() >= config_.coldstart_k && config_.coldstart_k > 0) {
    d->index = std::make_unique<ProfileIndex>(d->ids, d->rows);
  }
  d->model = std::move(model);
  return d;
}

std::shared_ptr<const Service::Deployment> Service::deployment() const {
  std::lock_guard lock(deployment_mu_);
  return deployment_;
}

SessionContext Service::context() const { return {builder_, distribution_, theta_}; }

std::shared_ptr<Service::UserState> Service::find_user(const std::string& id) const {
  std::shared_lock lock(users_mu_);
  const auto it = users_.find(id);
  return it == users_.end() ? nullptr : it->second;
}

std::size_t Service::user_count() const {
  std::shared_lock lock(users_mu_);
  return users_.size();
}

std::unique_ptr<Service::UserState> Service::build_user(const json& record) const {
  auto u = std::make_unique<UserState>();
  u->id = record.at("user").get<std::string>();
  u->number = record.at("number").get<std::uint64_t>();
  u->model_version = record.at("model_version").get<std::uint64_t>();
  u->profile = profile_from_json(record.at("profile"));
  u->seq = record.at("seq").get<std::uint64_t>();

  auto d = deployment();
  if (d->version != u->model_version) {
    d = make_deployment(GlobalModel::from_json(json::parse(read_file(model_path(config_.data_dir, u->model_version)))),
                        u->model_version);
  }
  const GlobalModel& g = d->model;
  UserRecord probe;
  probe.profile = u->profile;
  const std::vector<double> raw = select_profile(corpus_, probe, g.schema);
  ModelParams params = g.params;
  if (d->index) {
    std::vector<WindowSample> pooled;
    for (const Neighbor& n : d->index->similar_users(raw, config_.coldstart_k)) {
      const auto pos = static_cast<std::size_t>(
          std::find(d->ids.begin(), d->ids.end(), n.id) - d->ids.begin());
      pooled.insert(pooled.end(), d->windows[pos].begin(), d->windows[pos].end());
    }
    ColdstartOptions o;
    o.seed = mix(u->number);
    params = init_for_new_user(g.params, pooled, o).params;
  }
  SessionOptions so;
  so.finetune_lr = config_.finetune_lr;
  so.finetune_steps = config_.finetune_steps;
  so.budget = config_.budget;
  so.topk = 10;
  so.seed = mix(u->number ^ 0x5E55);
  u->session = std::make_unique<Session>(u->id, std::move(params), g.standardizer.apply(raw),
                                         context(), so);
  return u;
}

std::uint64_t Service::append_log(json record) {
  std::lock_guard lock(log_mu_);
  const std::uint64_t seq = next_seq_++;
  record["seq"] = seq;
  if (!record.contains("ts")) record["ts"] = now_iso();
  const std::string line = record.dump() + "\n";
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::write(log_fd_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw StateError("log append failed: " + std::string(std::strerror(errno)));
    }
    off += static_cast<std::size_t>(n);
  }
  ::fsync(log_fd_);
  return seq;
}

void Service::publish_review(const UserState& u, const ReviewItem& item) {
  (void)u;
  std::unique_lock lock(reviews_mu_);
  reviews_.insert_or_assign(item.id, item);
}

std::optional<Decision> Service::apply(UserState& u, const json& record) {
  std::optional<Decision> decision;
  const std::string op = record.at("op").get<std::string>();
  const std::uint64_t seq = record.at("seq").get<std::uint64_t>();
  const std::string ts = record.at("ts").get<std::string>();
  if (op == "next") {
    const Decision d = u.session->step();
    decision = d;
    if (d.queried()) {
      ReviewItem item;
      item.id = u.id + "-r" + std::to_string(d.ticket->id);
      item.user = u.id;
      item.created = ts;
      item.seq = seq;
      item.ticket = *d.ticket;
      u.reviews.push_back(item.id);
      publish_review(u, item);
    }
  } else if (op == "resolve") {
    const std::string rid = record.at("review").get<std::string>();
    const std::size_t corrected = record.at("corrected").get<std::size_t>();
    ReviewItem item;
    {
      std::shared_lock lock(reviews_mu_);
      item = reviews_.at(rid);
    }
    u.session->resolve(item.ticket.id, corrected);
    item.status = "resolved";
    item.corrected = corrected;
    item.resolver = record.value("resolver", std::string("expert"));
    item.resolved_at = ts;
    publish_review(u, item);
  } else if (op == "event") {
    const std::string key = record.at("exercise_id").get<std::string>();
    const bool completed = record.at("completed").get<bool>();
    u.events.push_back({{"exercise_id", key},
                        {"day", record.at("day")},
                        {"completed", completed},
                        {"ts", ts}});
    if (completed) u.session->observe(*corpus_.find_item(key));
  } else {
    throw StateError("store: unknown operation '" + op + "'");
  }
  u.seq = seq;
  return decision;
}

void Service::snapshot(const UserState& u) const {
  json reviews = json::array();
  {
    std::shared_lock lock(reviews_mu_);
    for (const auto& id : u.reviews) reviews.push_back(review_storage(reviews_.at(id)));
  }
  const json j = {{"format", kStoreFormat},
                  {"user", u.id},
                  {"number", u.number},
                  {"model_version", u.model_version},
                  {"seq", u.seq},
                  {"profile", profile_to_json(u.profile)},
                  {"events", u.events},
                  {"reviews", reviews},
                  {"session", u.session->to_json()}};
  write_file_atomic((fs::path(config_.data_dir) / "sessions" / (u.id + ".json")).string(), j.dump());
}

void Service::recover() {
  // Snapshots first.
  for (const auto& entry : fs::directory_iterator(fs::path(config_.data_dir) / "sessions")) {
    if (entry.path().extension() != ".json") continue;
    const json j = json::parse(read_file(entry.path().string()));
    if (j.at("format").get<int>() != kStoreFormat) {
      throw ConfigError("snapshot " + entry.path().string() + ": unsupported format");
    }
    auto u = std::make_shared<UserState>();
    u->id = j.at("user").get<std::string>();
    u->number = j.at("number").get<std::uint64_t>();
    u->model_version = j.at("model_version").get<std::uint64_t>();
    u->seq = j.at("seq").get<std::uint64_t>();
    u->profile = profile_from_json(j.at("profile"));
    u->events = j.at("events");
    u->session = std::make_unique<Session>(Session::from_json(j.at("session"), context()));
    for (const auto& r : j.at("reviews")) {
      ReviewItem item = review_from_storage(r);
      u->reviews.push_back(item.id);
      reviews_.insert_or_assign(item.id, std::move(item));
    }
    next_user_ = std::max(next_user_, u->number + 1);
    users_[u->id] = std::move(u);
  }

  // Then every log record the snapshots do not yet reflect.
  const std::string log_path = (fs::path(config_.data_dir) / "log.jsonl").string();
  std::vector<std::shared_ptr<UserState>> touched;
  std::uint64_t current_version = 0;
  if (fs::exists(log_path)) {
    std::ifstream in(log_path, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    std::uintmax_t good_bytes = 0;
    const std::uintmax_t size = fs::file_size(log_path);
    while (std::getline(in, line)) {
      ++line_no;
      const bool complete = !in.eof();
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception&) {
        if (!complete) break;  // torn final write
        throw ParseError("log.jsonl: not JSON", line_no);
      }
      if (!complete) break;  // a record without its newline was never acknowledged
      good_bytes += line.size() + 1;
      const std::uint64_t seq = rec.at("seq").get<std::uint64_t>();
      next_seq_ = std::max(next_seq_, seq + 1);
      const std::string op = rec.at("op").get<std::string>();
      if (op == "swap_model") {
        current_version = rec.at("version").get<std::uint64_t>();
        continue;
      }
      if (op == "create_user") {
        const std::string id = rec.at("user").get<std::string>();
        next_user_ = std::max(next_user_, rec.at("number").get<std::uint64_t>() + 1);
        if (users_.count(id)) continue;
        if (current_version != deployment()->version) {
          auto g = GlobalModel::from_json(json::parse(read_file(model_path(config_.data_dir, current_version))));
          deployment_ = make_deployment(std::move(g), current_version);
        }
        std::shared_ptr<UserState> u = build_user(rec);
        users_[id] = u;
        touched.push_back(u);
        ++recovered_;
        continue;
      }
      const auto it = users_.find(rec.at("user").get<std::string>());
      if (it == users_.end()) {
        throw ParseError("log.jsonl: record for an unknown user", line_no);
      }
      if (seq <= it->second->seq) continue;
      apply(*it->second, rec);
      touched.push_back(it->second);
      ++recovered_;
    }
    if (good_bytes < size) fs::resize_file(log_path, good_bytes);
  }
  if (current_version != deployment()->version) {
    auto g = GlobalModel::from_json(json::parse(read_file(model_path(config_.data_dir, current_version))));
    deployment_ = make_deployment(std::move(g), current_version);
  }
  for (const auto& u : touched) snapshot(*u);

  log_fd_ = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (log_fd_ < 0) throw StateError("cannot open " + log_path + ": " + std::strerror(errno));
  {
    std::lock_guard lock(jobs_mu_);
    next_job_ = current_version + 1;
  }
}

// Requests -----------------------------------------------------------------

bool Service::authorized(const std::string& header) const {
  const std::string expected = "Bearer " + config_.token;
  if (header.size() != expected.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < header.size(); ++i) diff |= static_cast<unsigned char>(header[i] ^ expected[i]);
  return diff == 0;
}

std::optional<std::size_t> Service::item_index(const json& v) const {
  std::string key;
  if (v.is_string()) {
    key = v.get<std::string>();
  } else if (v.is_number_integer()) {
    key = std::to_string(v.get<std::int64_t>());
  } else {
    return std::nullopt;
  }
  return corpus_.find_item(key);
}

json Service::candidates_json(const std::vector<Ranked>& ranked) const {
  json out = json::array();
  for (const Ranked& r : ranked) {
    out.push_back({{"exercise_id", corpus_.items[r.id].key},
                   {"name", corpus_.items[r.id].name},
                   {"probability", r.probability}});
  }
  return out;
}

json Service::review_json(const ReviewItem& r) const {
  json window = json::array();
  const auto& h = r.ticket.history;
  const std::size_t w = builder_->window();
  for (std::size_t i = h.size() > w ? h.size() - w : 0; i < h.size(); ++i) {
    window.push_back({{"exercise_id", corpus_.items[h[i]].key}, {"name", corpus_.items[h[i]].name}});
  }
  json j = {{"review_id", r.id},
            {"user_id", r.user},
            {"created", r.created},
            {"status", r.status},
            {"history_window", window},
            {"history_length", h.size()},
            {"top_k", candidates_json(r.ticket.topk)},
            {"z", r.ticket.z},
            {"theta", r.ticket.theta}};
  if (r.corrected) {
    j["resolution"] = {{"corrected_exercise_id", corpus_.items[*r.corrected].key},
                       {"resolver", r.resolver},
                       {"timestamp", r.resolved_at}};
  } else {
    j["resolution"] = nullptr;
  }
  return j;
}

Response Service::create_user(const json& body) {
  if (!body.is_object()) return error(422, "profile must be a JSON object", {{"fields", json::array()}});
  std::vector<double> profile(corpus_.profile_columns.size(), kMissing);
  json unknown = json::array();
  json invalid = json::array();
  for (const auto& [key, value] : body.items()) {
    const auto& cols = corpus_.profile_columns;
    const auto it = std::find(cols.begin(), cols.end(), key);
    const bool excluded = std::find(corpus_.excluded_columns.begin(), corpus_.excluded_columns.end(),
                                    key) != corpus_.excluded_columns.end();
    if (it == cols.end() || excluded) {
      unknown.push_back(key);
      continue;
    }
    if (value.is_null()) continue;
    if (!value.is_number() || !std::isfinite(value.get<double>())) {
      invalid.push_back(key);
      continue;
    }
    profile[static_cast<std::size_t>(it - cols.begin())] = value.get<double>();
  }
  if (!unknown.empty() || !invalid.empty()) {
    json fields = unknown;
    for (const auto& f : invalid) fields.push_back(f);
    return error(422, "profile does not match the schema",
                 {{"fields", fields}, {"unknown", unknown}, {"not_numeric", invalid}});
  }
  std::uint64_t number = 0;
  {
    std::unique_lock lock(users_mu_);
    number = next_user_++;
  }
  char id[32];
  std::snprintf(id, sizeof id, "user-%06llu", static_cast<unsigned long long>(number));
  json record = {{"op", "create_user"},
                 {"user", id},
                 {"number", number},
                 {"model_version", deployment()->version},
                 {"profile", profile_to_json(profile)}};
  record["seq"] = append_log(record);
  std::shared_ptr<UserState> u = build_user(record);
  {
    std::lock_guard ul(u->mu);
    snapshot(*u);
    std::unique_lock lock(users_mu_);
    users_[u->id] = u;
  }
  return {201, {{"user_id", id}, {"model_version", u->model_version}}};
}

Response Service::next(const std::string& user) {
  const auto u = find_user(user);
  if (!u) return error(404, "unknown user '" + user + "'");
  std::lock_guard lock(u->mu);
  if (const auto& p = u->session->pending()) {
    const std::string rid = user + "-r" + std::to_string(p->id);
    return {200, {{"status", "pending_expert"},
                  {"review_id", rid},
                  {"top_k", candidates_json(p->topk)},
                  {"z", p->z},
                  {"theta", p->theta}}};
  }
  json record = {{"op", "next"}, {"user", user}, {"ts", now_iso()}};
  record["seq"] = append_log(record);
  const Decision d = *apply(*u, record);
  snapshot(*u);
  if (d.queried()) {
    return {200, {{"status", "pending_expert"},
                  {"review_id", u->reviews.back()},
                  {"top_k", candidates_json(d.ranked)},
                  {"z", d.z},
                  {"theta", d.ticket->theta}}};
  }
  return {200, {{"status", "auto"},
                {"recommendation", candidates_json({d.ranked.front()}).front()},
                {"top_k", candidates_json(d.ranked)},
                {"z", d.z},
                {"theta", theta_}}};
}

Response Service::reviews(const std::string& status) const {
  if (!status.empty() && status != "pending" && status != "resolved") {
    return error(422, "status must be pending or resolved", {{"fields", {"status"}}});
  }
  std::vector<const ReviewItem*> items;
  std::shared_lock lock(reviews_mu_);
  for (const auto& [_, r] : reviews_) {
    if (status.empty() || r.status == status) items.push_back(&r);
  }
  std::sort(items.begin(), items.end(), [](const ReviewItem* a, const ReviewItem* b) {
    return std::tie(a->created, a->seq) < std::tie(b->created, b->seq);
  });
  json out = json::array();
  for (const ReviewItem* r : items) out.push_back(review_json(*r));
  return {200, out};
}

Response Service::resolve(const std::string& review_id, const json& body) {
  std::string user;
  {
    std::shared_lock lock(reviews_mu_);
    const auto it = reviews_.find(review_id);
    if (it == reviews_.end()) return error(404, "unknown review '" + review_id + "'");
    user = it->second.user;
  }
  if (!body.is_object() || !body.contains("corrected_exercise_id")) {
    return error(422, "corrected_exercise_id is required", {{"fields", {"corrected_exercise_id"}}});
  }
  const auto corrected = item_index(body.at("corrected_exercise_id"));
  if (!corrected) {
    return error(422, "corrected_exercise_id is not an exercise", {{"fields", {"corrected_exercise_id"}}});
  }
  std::string resolver = "expert";
  if (body.contains("resolver")) {
    if (!body.at("resolver").is_string()) return error(422, "resolver must be a string", {{"fields", {"resolver"}}});
    resolver = body.at("resolver").get<std::string>();
  }
  const auto u = find_user(user);
  std::lock_guard lock(u->mu);
  {
    std::shared_lock rl(reviews_mu_);
    const ReviewItem& r = reviews_.at(review_id);
    if (r.status != "pending") {
      return error(409, "review already resolved", {{"review", review_json(r)}});
    }
  }
  json record = {{"op", "resolve"},
                 {"user", user},
                 {"review", review_id},
                 {"corrected", *corrected},
                 {"resolver", resolver}};
  record["ts"] = now_iso();
  record["seq"] = append_log(record);
  apply(*u, record);
  snapshot(*u);
  std::shared_lock rl(reviews_mu_);
  return {200, review_json(reviews_.at(review_id))};
}

Response Service::add_event(const std::string& user, const json& body) {
  const auto u = find_user(user);
  if (!u) return error(404, "unknown user '" + user + "'");
  if (!body.is_object()) return error(422, "event must be a JSON object", {{"fields", json::array()}});
  json bad = json::array();
  std::optional<std::size_t> item;
  if (body.contains("exercise_id")) item = item_index(body.at("exercise_id"));
  if (!item) bad.push_back("exercise_id");
  if (!body.contains("day") || !body.at("day").is_number_integer()) bad.push_back("day");
  if (body.contains("completed") && !body.at("completed").is_boolean()) bad.push_back("completed");
  if (!bad.empty()) return error(422, "event does not match the schema", {{"fields", bad}});
  const bool completed = body.value("completed", true);
  std::lock_guard lock(u->mu);
  if (completed && u->session->pending()) {
    return error(409, "a review is pending for this user; resolve it first");
  }
  json record = {{"op", "event"},
                 {"user", user},
                 {"exercise_id", corpus_.items[*item].key},
                 {"day", body.at("day")},
                 {"completed", completed}};
  record["ts"] = now_iso();
  record["seq"] = append_log(record);
  apply(*u, record);
  snapshot(*u);
  return {204, nullptr};
}

Response Service::model_info() const {
  const auto d = deployment();
  const GlobalModel& g = d->model;
  bool running = false;
  {
    std::lock_guard lock(jobs_mu_);
    running = retrain_running_;
  }
  json dist = distribution_->to_json();
  return {200, {{"format_version", kCheckpointFormatVersion},
                {"config_hash", config_hash(g.params.config)},
                {"model_version", d->version},
                {"config", to_json(g.params.config)},
                {"schema", g.schema == ProfileSchema::full ? "full" : "demographic"},
                {"window", g.window},
                {"train_windows", g.train_windows},
                {"alpha_level", config_.alpha_level},
                {"theta", theta_},
                {"distribution", dist},
                {"retrain_running", running}}};
}

Response Service::retrain() {
  std::lock_guard lock(jobs_mu_);
  if (retrain_running_) return error(409, "a retrain job is already running");
  if (retrain_thread_.joinable()) retrain_thread_.join();
  const std::uint64_t version = next_job_++;
  const std::string id = "job-" + std::to_string(version);
  jobs_[id] = {"running", version, ""};
  retrain_running_ = true;
  retrain_thread_ = std::thread([this, id, version] { run_retrain(id, version); });
  return {202, {{"job_id", id}, {"status", "running"}}};
}

void Service::run_retrain(std::string job_id, std::uint64_t version) {
  std::string status = "done";
  std::string message;
  try {
    std::function<void()> hook;
    {
      std::lock_guard lock(jobs_mu_);
      hook = retrain_hook_;
    }
    if (hook) hook();
    // Base population plus everything the service has recorded.
    Corpus c = corpus_;
    std::vector<std::shared_ptr<UserState>> users;
    {
      std::shared_lock lock(users_mu_);
      for (const auto& [_, u] : users_) users.push_back(u);
    }
    for (const auto& u : users) {
      std::lock_guard ul(u->mu);
      UserRecord r;
      r.id = u->id;
      r.profile = u->profile;
      std::size_t slot = 0;
      for (const auto& e : u->events) {
        r.events.push_back({*corpus_.find_item(e.at("exercise_id").get<std::string>()),
                            e.at("day").get<std::int64_t>(), slot++, e.at("completed").get<bool>()});
      }
      std::stable_sort(r.events.begin(), r.events.end(),
                       [](const Event& a, const Event& b) { return a.day < b.day; });
      for (std::size_t i = 0; i < r.events.size(); ++i) r.events[i].slot = i;
      if (!r.events.empty()) c.users.push_back(std::move(r));
    }
    const GlobalModel current = deployment()->model;
    ExperimentConfig ec;
    ec.schema = current.schema;
    ec.window = current.window;
    ec.padding = current.padding;
    ec.dims = dims_of(current);
    ec.epochs = config_.retrain_epochs;
    GlobalModel g = train_global(c, ec, version);
    write_file_atomic(model_path(config_.data_dir, version), g.to_json().dump());
    auto d = make_deployment(std::move(g), version);
    append_log({{"op", "swap_model"}, {"version", version}});
    std::lock_guard lock(deployment_mu_);
    deployment_ = std::move(d);
  } catch (const std::exception& e) {
    status = "failed";
    message = e.what();
    std::cerr << "retrain " << job_id << " failed: " << message << "\n";
  }
  std::lock_guard lock(jobs_mu_);
  jobs_[job_id].status = status;
  jobs_[job_id].error = message;
  retrain_running_ = false;
}

Response Service::job(const std::string& id) const {
  std::lock_guard lock(jobs_mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return error(404, "unknown job '" + id + "'");
  json j = {{"job_id", id}, {"status", it->second.status}, {"model_version", it->second.version}};
  if (!it->second.error.empty()) j["error"] = it->second.error;
  return {200, j};
}

void Service::wait_for_retrain() {
  std::thread t;
  {
    std::lock_guard lock(jobs_mu_);
    t = std::move(retrain_thread_);
  }
  if (t.joinable()) t.join();
}

void Service::set_retrain_hook(std::function<void()> hook) {
  std::lock_guard lock(jobs_mu_);
  retrain_hook_ = std::move(hook);
}

}  // namespace exrec
