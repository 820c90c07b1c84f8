#include "exrec/active.hpp"

#include "exrec/error.hpp"

namespace exrec {

nlohmann::json ReviewTicket::to_json() const {
  nlohmann::json top = nlohmann::json::array();
  for (const Ranked& r : topk) top.push_back({{"id", r.id}, {"probability", r.probability}});
  return {{"id", id},       {"user", user}, {"step", step},  {"history", history},
          {"topk", top},    {"z", z},       {"theta", theta}};
}

ReviewTicket ReviewTicket::from_json(const nlohmann::json& j) {
  ReviewTicket t;
  t.id = j.at("id").get<std::uint64_t>();
  t.user = j.at("user").get<std::string>();
  t.step = j.at("step").get<std::size_t>();
  t.history = j.at("history").get<std::vector<std::size_t>>();
  for (const auto& r : j.at("topk")) {
    t.topk.push_back({r.at("id").get<std::size_t>(), r.at("probability").get<double>()});
  }
  t.z = j.at("z").get<double>();
  t.theta = j.at("theta").get<double>();
  return t;
}

std::size_t ReplayOracle::correct(const ReviewTicket& ticket) {
  if (ticket.step >= truth_.size()) {
    throw InputError("replay oracle: step " + std::to_string(ticket.step) +
                     " is beyond the recorded sequence of length " + std::to_string(truth_.size()));
  }
  return truth_[ticket.step];
}

bool should_query(double z, double theta, std::size_t queries_so_far, std::size_t budget) {
  return z < theta && queries_so_far < budget;
}

Session::Session(std::string user, ModelParams personal, Vector user_profile,
                 SessionContext context, SessionOptions options, std::vector<std::size_t> history)
    : user_(std::move(user)),
      params_(std::move(personal)),
      profile_(std::move(user_profile)),
      context_(std::move(context)),
      options_(options),
      history_(std::move(history)) {
  if (!context_.builder) throw InputError("session: window builder required");
  if (options_.topk == 0) throw InputError("session: topk must be >= 1");
}

Decision Session::step() {
  if (pending_) {
    return {Decision::Kind::queried, pending_->topk.front().id, pending_->z, pending_->topk, pending_};
  }
  if (!context_.distribution) throw StateError("session " + user_ + ": no fitted distribution");
  const Window w = context_.builder->build(history_, profile_);
  const Vector probs = predict_proba(params_, w);
  const std::size_t real = params_.config.real_items();
  const Vector real_probs = probs.head(static_cast<Eigen::Index>(real));
  const double z = marginal_distance(real_probs);
  const auto top = predict_topk(probs, std::min(options_.topk, real), params_.config.pad_id());
  ++steps_;
  if (!should_query(z, context_.theta, queries_, options_.budget)) {
    return {Decision::Kind::automatic, top.front().id, z, top, std::nullopt};
  }
  ReviewTicket t;
  t.id = next_ticket_++;
  t.user = user_;
  t.step = history_.size();
  t.history = history_;
  t.topk = top;
  t.z = z;
  t.theta = context_.theta;
  pending_ = t;
  ++queries_;
  queried_steps_.push_back(t.step);
  return {Decision::Kind::queried, top.front().id, z, top, t};
}

void Session::resolve(std::uint64_t ticket_id, std::size_t corrected) {
  if (!pending_ || pending_->id != ticket_id) {
    throw StateError("session " + user_ + ": ticket " + std::to_string(ticket_id) +
                     " is not pending");
  }
  if (corrected >= params_.config.real_items()) {
    throw InputError("session " + user_ + ": corrected id " + std::to_string(corrected) +
                     " is not an exercise");
  }
  WindowSample s{context_.builder->build(history_, profile_), corrected, 0, history_.size()};
  FinetuneOptions f;
  f.learning_rate = options_.finetune_lr;
  f.epochs = options_.finetune_steps;
  f.batch_size = 1;
  f.seed = options_.seed;
  params_ = finetune(std::move(params_), {s}, f);
  history_.push_back(corrected);
  pending_.reset();
  ++corrections_;
}

void Session::observe(std::size_t item) {
  if (pending_) throw StateError("session " + user_ + ": a review is pending");
  if (item >= params_.config.real_items()) {
    throw InputError("session " + user_ + ": id " + std::to_string(item) + " is not an exercise");
  }
  history_.push_back(item);
}

nlohmann::json Session::to_json() const {
  nlohmann::json j = {
      {"user", user_},
      {"params", checkpoint_to_json(params_)},
      {"profile", std::vector<double>(profile_.data(), profile_.data() + profile_.size())},
      {"history", history_},
      {"next_ticket", next_ticket_},
      {"steps", steps_},
      {"queries", queries_},
      {"corrections", corrections_},
      {"queried_steps", queried_steps_},
      {"options",
       {{"finetune_lr", options_.finetune_lr},
        {"finetune_steps", options_.finetune_steps},
        {"topk", options_.topk},
        {"budget", options_.budget},
        {"seed", options_.seed}}},
  };
  j["pending"] = pending_ ? pending_->to_json() : nlohmann::json(nullptr);
  return j;
}

Session Session::from_json(const nlohmann::json& j, SessionContext context) {
  try {
    SessionOptions o;
    const auto& oj = j.at("options");
    o.finetune_lr = oj.at("finetune_lr").get<double>();
    o.finetune_steps = oj.at("finetune_steps").get<std::size_t>();
    o.topk = oj.at("topk").get<std::size_t>();
    o.budget = oj.at("budget").get<std::size_t>();
    o.seed = oj.at("seed").get<std::uint64_t>();
    const auto profile = j.at("profile").get<std::vector<double>>();
    Session s(j.at("user").get<std::string>(), checkpoint_from_json(j.at("params")),
              Eigen::Map<const Vector>(profile.data(), static_cast<Eigen::Index>(profile.size())),
              std::move(context), o, j.at("history").get<std::vector<std::size_t>>());
    s.next_ticket_ = j.at("next_ticket").get<std::uint64_t>();
    s.steps_ = j.at("steps").get<std::size_t>();
    s.queries_ = j.at("queries").get<std::size_t>();
    s.corrections_ = j.at("corrections").get<std::size_t>();
    s.queried_steps_ = j.at("queried_steps").get<std::vector<std::size_t>>();
    if (!j.at("pending").is_null()) s.pending_ = ReviewTicket::from_json(j.at("pending"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("session state: ") + e.what());
  }
}

}  // namespace exrec
