#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exrec/dataio.hpp"
#include "exrec/model.hpp"
#include "exrec/uncertainty.hpp"

namespace exrec {

/// A request for an expert correction at one time step of one user.
struct ReviewTicket {
  std::uint64_t id = 0;  // unique within the session
  std::string user;
  std::size_t step = 0;  // index of the event being predicted
  std::vector<std::size_t> history;
  std::vector<Ranked> topk;
  double z = 0.0;
  double theta = 0.0;

  nlohmann::json to_json() const;
  static ReviewTicket from_json(const nlohmann::json& j);
};

/// Produces the corrected exercise for a ticket.
class ExpertOracle {
 public:
  virtual ~ExpertOracle() = default;
  virtual std::size_t correct(const ReviewTicket& ticket) = 0;
};

/// Answers with what the user actually did at the queried step.
class ReplayOracle : public ExpertOracle {
 public:
  explicit ReplayOracle(std::vector<std::size_t> truth) : truth_(std::move(truth)) {}
  /// Throws InputError when the step lies beyond the known sequence.
  std::size_t correct(const ReviewTicket& ticket) override;

 private:
  std::vector<std::size_t> truth_;
};

struct Decision {
  enum class Kind { automatic, queried };
  Kind kind = Kind::automatic;
  std::size_t recommendation = 0;  // model top-1, also reported for queried steps
  double z = 0.0;
  std::vector<Ranked> ranked;  // model top-k
  std::optional<ReviewTicket> ticket;

  bool queried() const noexcept { return kind == Kind::queried; }
};

struct SessionOptions {
  double finetune_lr = 1e-4;
  std::size_t finetune_steps = 5;
  std::size_t topk = 10;
  std::size_t budget = std::numeric_limits<std::size_t>::max();
  std::uint64_t seed = 0;
};

/// The querying rule: ask when the margin is below theta and budget remains.
bool should_query(double z, double theta, std::size_t queries_so_far, std::size_t budget);

/// Shared, read-only inputs for building windows.
struct SessionContext {
  std::shared_ptr<const WindowBuilder> builder;
  std::shared_ptr<const MarginalDistribution> distribution;  // may be null until fitted
  double theta = 0.0;
};

/// Per-user state of the expert-in-the-loop recommender. Not thread-safe;
/// callers serialize access per user.
class Session {
 public:
  Session(std::string user, ModelParams personal, Vector user_profile, SessionContext context,
          SessionOptions options = {}, std::vector<std::size_t> history = {});

  /// Recommends the next exercise from the current history. Queries the expert
  /// when the marginal distance falls below theta and budget remains. While a
  /// ticket is pending the same ticket is returned. Throws StateError when no
  /// distribution is attached.
  Decision step();

  /// Applies an expert correction: fine-tunes the personal model on the queried
  /// window with `corrected` as target and appends it to the history.
  /// Throws StateError for a ticket that is not pending, InputError for an id
  /// outside the vocabulary.
  void resolve(std::uint64_t ticket_id, std::size_t corrected);

  /// Appends an event the user performed without a pending query.
  /// Throws StateError while a ticket is pending.
  void observe(std::size_t item);

  const std::string& user() const noexcept { return user_; }
  const ModelParams& params() const noexcept { return params_; }
  const std::vector<std::size_t>& history() const noexcept { return history_; }
  const Vector& user_profile() const noexcept { return profile_; }
  const std::optional<ReviewTicket>& pending() const noexcept { return pending_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t queries() const noexcept { return queries_; }
  std::size_t corrections() const noexcept { return corrections_; }
  const SessionOptions& options() const noexcept { return options_; }
  double theta() const noexcept { return context_.theta; }
  /// Steps at which a query was issued, in order.
  const std::vector<std::size_t>& queried_steps() const noexcept { return queried_steps_; }

  void set_context(SessionContext context) { context_ = std::move(context); }

  /// Full state including personal weights.
  nlohmann::json to_json() const;
  static Session from_json(const nlohmann::json& j, SessionContext context);

 private:
  std::string user_;
  ModelParams params_;
  Vector profile_;
  SessionContext context_;
  SessionOptions options_;
  std::vector<std::size_t> history_;
  std::optional<ReviewTicket> pending_;
  std::uint64_t next_ticket_ = 1;
  std::size_t steps_ = 0;
  std::size_t queries_ = 0;
  std::size_t corrections_ = 0;
  std::vector<std::size_t> queried_steps_;
};

}  // namespace exrec
