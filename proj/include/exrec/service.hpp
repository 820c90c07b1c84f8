#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "exrec/active.hpp"
#include "exrec/coldstart.hpp"
#include "exrec/dataio.hpp"
#include "exrec/eval.hpp"
#include "exrec/uncertainty.hpp"

namespace exrec {

/// Keys of the service configuration file. Each key can be overridden by the
/// environment variable EXREC_<KEY> (upper case), e.g. EXREC_PORT=9000.
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "exrec-state";  // log, snapshots, retrained models
  std::string corpus_dir;                // population and exercise catalogue
  std::string checkpoint_path;           // global model written by `exrec train`
  std::string distribution_path;         // written by `exrec fit-dirichlet`
  double alpha_level = 0.01;
  std::optional<double> theta;  // fixed threshold instead of the alpha_level quantile; 0 never asks
  double finetune_lr = 1e-4;
  std::size_t finetune_steps = 5;
  std::size_t budget = std::numeric_limits<std::size_t>::max();
  std::size_t coldstart_k = 3;
  std::size_t retrain_epochs = 30;
  std::string token;  // required on every request as "Authorization: Bearer <token>"

  nlohmann::json to_json() const;
  /// Throws ConfigError on unknown keys or wrong types.
  static ServiceConfig from_json(const nlohmann::json& j);
  /// Applies EXREC_* overrides read through `getenv`.
  void apply_env(const std::function<const char*(const char*)>& getenv);
  /// Throws ConfigError when paths or the token are missing.
  void validate() const;
};

struct Response {
  int status = 200;
  nlohmann::json body;  // null for 204
};

struct ReviewItem {
  std::string id;
  std::string user;
  std::string created;
  std::uint64_t seq = 0;  // log position, breaks timestamp ties
  ReviewTicket ticket;
  std::string status = "pending";
  std::optional<std::size_t> corrected;
  std::string resolver;
  std::string resolved_at;
};

/// The recommendation service without its HTTP binding. Every method is safe
/// to call concurrently; requests for one user are serialized.
class Service {
 public:
  /// Loads the corpus, the global model and the distribution, then restores
  /// sessions from data_dir (snapshots plus any later log records).
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  bool authorized(const std::string& authorization_header) const;

  Response create_user(const nlohmann::json& body);
  Response next(const std::string& user);
  Response reviews(const std::string& status) const;
  Response resolve(const std::string& review_id, const nlohmann::json& body);
  Response add_event(const std::string& user, const nlohmann::json& body);
  Response model_info() const;
  Response retrain();
  Response job(const std::string& id) const;

  /// Blocks until no retrain job is running.
  void wait_for_retrain();
  /// Called at the start of each retrain job (tests hold jobs open with it).
  void set_retrain_hook(std::function<void()> hook);

  std::size_t user_count() const;
  std::size_t recovered_records() const noexcept { return recovered_; }
  const ServiceConfig& config() const noexcept { return config_; }

 private:
  struct Deployment;
  struct UserState;
  struct Job {
    std::string status;  // running, done, failed
    std::uint64_t version = 0;
    std::string error;
  };

  std::shared_ptr<const Deployment> deployment() const;
  std::shared_ptr<const Deployment> make_deployment(GlobalModel model, std::uint64_t version) const;
  std::shared_ptr<UserState> find_user(const std::string& id) const;
  SessionContext context() const;

  std::uint64_t append_log(nlohmann::json record);
  std::optional<Decision> apply(UserState& u, const nlohmann::json& record);
  void snapshot(const UserState& u) const;
  void recover();

  std::unique_ptr<UserState> build_user(const nlohmann::json& record) const;
  void publish_review(const UserState& u, const ReviewItem& item);
  nlohmann::json review_json(const ReviewItem& r) const;
  nlohmann::json candidates_json(const std::vector<Ranked>& ranked) const;
  std::optional<std::size_t> item_index(const nlohmann::json& v) const;
  void run_retrain(std::string job_id, std::uint64_t version);

  ServiceConfig config_;
  Corpus corpus_;
  std::shared_ptr<const WindowBuilder> builder_;
  std::shared_ptr<const MarginalDistribution> distribution_;
  double theta_ = 0.0;

  mutable std::mutex deployment_mu_;
  std::shared_ptr<const Deployment> deployment_;

  mutable std::shared_mutex users_mu_;
  std::map<std::string, std::shared_ptr<UserState>> users_;
  std::uint64_t next_user_ = 1;

  mutable std::shared_mutex reviews_mu_;
  std::map<std::string, ReviewItem> reviews_;

  std::mutex log_mu_;
  std::uint64_t next_seq_ = 1;
  int log_fd_ = -1;

  mutable std::mutex jobs_mu_;
  std::map<std::string, Job> jobs_;
  bool retrain_running_ = false;
  std::uint64_t next_job_ = 1;
  std::function<void()> retrain_hook_;
  std::thread retrain_thread_;

  std::size_t recovered_ = 0;
};

/// HTTP/1.1 binding of a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace exrec
