// exrec: data preparation, training, threshold fitting, experiments and serving.
#include <csignal>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "exrec/augment.hpp"
#include "exrec/dataio.hpp"
#include "exrec/error.hpp"
#include "exrec/eval.hpp"
#include "exrec/service.hpp"
#include "exrec/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace exrec;
using nlohmann::json;

namespace {

struct CorpusFlags {
  std::string corpus = "synth";  // "synth" or a corpus directory
  std::uint64_t synth_seed = 1;
  std::size_t synth_users = 72;
  std::size_t synth_days = 28;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus, "corpus directory, or 'synth' for the generated coaching data")
        ->capture_default_str();
    app->add_option("--synth-seed", synth_seed, "generator seed when --corpus synth")->capture_default_str();
    app->add_option("--synth-users", synth_users)->capture_default_str();
    app->add_option("--synth-days", synth_days)->capture_default_str();
  }

  Corpus load() const {
    if (corpus != "synth") return load_corpus(corpus);
    SynthOptions o;
    o.seed = synth_seed;
    o.users = synth_users;
    o.days = synth_days;
    return synth_generate(o).corpus;
  }
};

struct ModelFlags {
  std::size_t window = 3;
  std::size_t epochs = 30;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::string schema = "demographic";
  std::string padding = "leading";
  std::string dims = "coaching";
  std::string augmentation = "none";
  double augment_rate = 0.10;

  void add(CLI::App* app) {
    app->add_option("--window", window, "history length; 0 picks it from the autocorrelation")
        ->capture_default_str();
    app->add_option("--epochs", epochs)->capture_default_str();
    app->add_option("--batch-size", batch)->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--schema", schema)->check(CLI::IsMember({"demographic", "full"}))->capture_default_str();
    app->add_option("--padding", padding)
        ->check(CLI::IsMember({"none", "leading", "full"}))
        ->capture_default_str();
    app->add_option("--dims", dims, "layer widths")
        ->check(CLI::IsMember({"coaching", "movies"}))
        ->capture_default_str();
    app->add_option("--augment", augmentation)
        ->check(CLI::IsMember({"none", "expert", "rules"}))
        ->capture_default_str();
    app->add_option("--augment-rate", augment_rate)->capture_default_str();
  }

  // Overlays the flags given on the command line onto `c`.
  void apply(ExperimentConfig& c, const CLI::App* app, const Corpus& corpus) const {
    json j = c.to_json();
    const auto given = [&](const char* flag) { return app->count(flag) > 0; };
    if (given("--window")) j["window"] = window;
    if (given("--epochs")) j["epochs"] = epochs;
    if (given("--batch-size")) j["batch_size"] = batch;
    if (given("--lr")) j["learning_rate"] = lr;
    if (given("--schema")) j["schema"] = schema;
    if (given("--padding")) j["padding"] = padding;
    if (given("--dims")) j["dims"] = dims;
    if (given("--augment")) j["augmentation"] = augmentation;
    if (given("--augment-rate")) j["augment_rate"] = augment_rate;
    c = ExperimentConfig::from_json(j);
    if (c.window == 0) {
      c.window = acf_window(corpus);
      std::cerr << "window from autocorrelation: " << c.window << "\n";
    }
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    std::size_t used = 0;
    const unsigned long long v = std::stoull(part, &used);
    if (used != part.size()) throw ConfigError("bad seed '" + part + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exrec: exercise recommendation with expert-in-the-loop"};
  app.require_subcommand(1);

  // prep-movielens
  auto* prep = app.add_subcommand("prep-movielens", "convert MovieLens 100k into a corpus directory");
  std::string ml_dir = "data/ml-100k";
  std::string out_dir;
  std::size_t top_items = 100;
  prep->add_option("--input", ml_dir, "directory with u.data (u.user and u.item optional)")->capture_default_str();
  prep->add_option("--out", out_dir, "output corpus directory")->required();
  prep->add_option("--top-items", top_items)->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic coaching corpus");
  SynthOptions so;
  std::string synth_out;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--users", so.users)->capture_default_str();
  synth->add_option("--days", so.days)->capture_default_str();
  synth->add_option("--seed", so.seed)->capture_default_str();
  synth->add_option("--preference", so.preference)->capture_default_str();
  synth->add_option("--falloff", so.falloff)->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a global model on a whole corpus");
  CorpusFlags train_corpus;
  ModelFlags train_model;
  std::string model_out;
  std::uint64_t train_seed = 1;
  train_corpus.add(train_cmd);
  train_model.add(train_cmd);
  train_cmd->add_option("--out", model_out, "model file")->required();
  train_cmd->add_option("--seed", train_seed)->capture_default_str();

  // fit-dirichlet
  auto* fit = app.add_subcommand("fit-dirichlet", "fit the marginal-distance distribution and print theta");
  CorpusFlags fit_corpus;
  std::string fit_model;
  std::string fit_out;
  double alpha_level = 0.01;
  std::size_t grid = 2001;
  fit_corpus.add(fit);
  fit->add_option("--model", fit_model, "model file written by train")->required();
  fit->add_option("--alpha-level", alpha_level)->capture_default_str();
  fit->add_option("--grid", grid, "grid and inner quadrature points")->capture_default_str();
  fit->add_option("--out", fit_out, "distribution JSON");

  // eval
  auto* eval = app.add_subcommand("eval", "run ablation rows and write results.json");
  CorpusFlags eval_corpus;
  ModelFlags eval_model;
  std::vector<int> rows;
  std::string config_path;
  std::string seeds_text = "1,2,3,4,5";
  std::string protocol = "loocv";
  std::string results_path = "results.json";
  std::string scoring = "pre_correction";
  double eval_level = 0.01;
  std::optional<double> theta;
  double train_fraction = 0.8;
  bool with_popularity = false;
  eval_corpus.add(eval);
  eval_model.add(eval);
  eval->add_option("--table1-row", rows, "ablation rows 1-9 (repeat or comma separate)")->delimiter(',');
  eval->add_option("--config", config_path, "experiment config JSON instead of a table row");
  eval->add_option("--seeds", seeds_text, "comma separated")->capture_default_str();
  eval->add_option("--protocol", protocol)->check(CLI::IsMember({"loocv", "holdout"}))->capture_default_str();
  eval->add_option("--train-fraction", train_fraction, "holdout split")->capture_default_str();
  eval->add_option("--scoring", scoring)
      ->check(CLI::IsMember({"pre_correction", "corrected"}))
      ->capture_default_str();
  eval->add_option("--alpha-level", eval_level)->capture_default_str();
  eval->add_option("--theta", theta, "fixed threshold instead of the fitted quantile");
  eval->add_option("--out", results_path)->capture_default_str();
  eval->add_flag("--popularity", with_popularity, "also score the most-popular baseline (holdout)");

  // augment
  auto* aug = app.add_subcommand("augment", "write augmented copies of every sequence");
  CorpusFlags aug_corpus;
  std::string aug_method = "expert";
  double aug_rate = 0.10;
  std::uint64_t aug_seed = 1;
  double min_support = 0.05, min_confidence = 0.6;
  std::string aug_out;
  std::string rules_out;
  aug_corpus.add(aug);
  aug->add_option("--method", aug_method)->check(CLI::IsMember({"expert", "rules"}))->capture_default_str();
  aug->add_option("--rate", aug_rate)->capture_default_str();
  aug->add_option("--seed", aug_seed)->capture_default_str();
  aug->add_option("--min-support", min_support)->capture_default_str();
  aug->add_option("--min-confidence", min_confidence)->capture_default_str();
  aug->add_option("--out", aug_out, "CSV of augmented sequences")->required();
  aug->add_option("--rules-out", rules_out, "CSV of mined rules (rules method)");

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  std::string serve_config;
  serve->add_option("--config", serve_config, "service config JSON; EXREC_* variables override it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << app.help() << "\nerror: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*prep) {
      MovieLensOptions o;
      o.top_items = top_items;
      const fs::path dir(ml_dir);
      if (fs::exists(dir / "u.user")) o.users_path = (dir / "u.user").string();
      if (fs::exists(dir / "u.item")) o.items_path = (dir / "u.item").string();
      const Corpus c = movielens_prepare((dir / "u.data").string(), o);
      save_corpus(c, out_dir);
      std::size_t events = 0;
      for (const auto& u : c.users) events += u.events.size();
      std::cout << "users " << c.users.size() << ", items " << c.items.size() << ", events " << events
                << ", windows (full padding) " << make_windows(c, 3, Padding::full).size() << "\n";
    } else if (*synth) {
      const Corpus c = synth_generate(so).corpus;
      save_corpus(c, synth_out);
      std::cout << "users " << c.users.size() << ", windows " << make_windows(c, 3).size()
                << ", autocorrelation window " << acf_window(c) << "\n";
    } else if (*train_cmd) {
      const Corpus c = train_corpus.load();
      ExperimentConfig ec;
      train_model.apply(ec, train_cmd, c);
      const GlobalModel g = train_global(c, ec, train_seed);
      write_file_atomic(model_out, g.to_json().dump());
      std::cout << "trained on " << g.train_windows << " windows; config " << config_hash(g.params.config)
                << "\n";
    } else if (*fit) {
      const Corpus c = fit_corpus.load();
      const GlobalModel g = GlobalModel::from_json(json::parse(read_file(fit_model)));
      const DirichletParams alpha = fit_dirichlet(training_triples(c, g));
      auto d = MarginalDistribution::tabulate(alpha, grid, grid);
      d.set_level(alpha_level);
      if (!fit_out.empty()) write_file_atomic(fit_out, d.to_json().dump(2) + "\n");
      std::cout << "alpha " << alpha.alpha[0] << " " << alpha.alpha[1] << " " << alpha.alpha[2] << "\n";
      std::cout << "theta " << d.theta() << "\n";
    } else if (*eval) {
      if (rows.empty() && config_path.empty()) throw ConfigError("eval needs --table1-row or --config");
      const Corpus c = eval_corpus.load();
      std::vector<ExperimentConfig> configs;
      if (!config_path.empty()) configs.push_back(ExperimentConfig::from_json(json::parse(read_file(config_path))));
      for (int r : rows) configs.push_back(ExperimentConfig::table1_row(r));
      const auto seeds = parse_seeds(seeds_text);
      ModelCache cache;
      std::vector<RunResult> results;
      json out = {{"corpus", eval_corpus.corpus}, {"results", json::array()}};
      double runtime = 0.0;
      for (ExperimentConfig& ec : configs) {
        eval_model.apply(ec, eval, c);
        if (eval->count("--seeds") || config_path.empty()) ec.seeds = seeds;
        if (eval->count("--scoring")) ec.scoring = scoring == "corrected" ? Scoring::corrected : Scoring::pre_correction;
        if (eval->count("--alpha-level")) ec.level = eval_level;
        if (theta) ec.theta_override = *theta;
        RunResult r = protocol == "loocv" ? loocv_run(c, ec, &cache) : holdout_run(c, ec, train_fraction, true);
        runtime += r.runtime_seconds;
        std::cerr << ec.name << ": top-1 " << r.mean.top1 << " (" << r.runtime_seconds << " s)\n";
        json rj = r.to_json();
        rj.erase("runtime");
        out["results"].push_back(rj);
        results.push_back(std::move(r));
      }
      if (with_popularity) {
        const Metrics pop = popularity_baseline(c, configs.front().window, configs.front().padding, train_fraction);
        out["popularity"] = pop.to_json();
        std::cout << "popularity: top-1 " << pop.top1() << " top-5 " << pop.top5() << " top-10 "
                  << pop.top10() << "\n";
      }
      out["runtime_seconds"] = runtime;
      write_file_atomic(results_path, out.dump(2) + "\n");
      std::cout << render_table(results);
    } else if (*aug) {
      const Corpus c = aug_corpus.load();
      std::vector<Sequence> seqs;
      for (const auto& u : c.users) seqs.push_back(u.sequence());
      std::vector<Sequence> copies;
      if (aug_method == "expert") {
        copies = augment_expert(seqs, c.items, aug_rate, aug_seed);
      } else {
        const auto rules = mine_rules(rule_transactions(c), min_support, min_confidence);
        if (!rules_out.empty()) write_file_atomic(rules_out, rules_to_csv(rules, c.items));
        std::cerr << rules.size() << " rules\n";
        copies = augment_rules(seqs, rules, c.items.size(), aug_rate, aug_seed);
      }
      std::ostringstream csv;
      csv << "user_id,position,exercise_id,original_id\n";
      std::size_t changed = 0;
      for (std::size_t u = 0; u < c.users.size(); ++u) {
        for (std::size_t t = 0; t < copies[u].size(); ++t) {
          csv << c.users[u].id << "," << t << "," << c.items[copies[u][t]].key << ","
              << c.items[seqs[u][t]].key << "\n";
          changed += copies[u][t] != seqs[u][t];
        }
      }
      write_file_atomic(aug_out, csv.str());
      std::cout << "changed " << changed << " positions in " << copies.size() << " sequences\n";
    } else if (*serve) {
      ServiceConfig cfg = serve_config.empty() ? ServiceConfig{}
                                               : ServiceConfig::from_json(json::parse(read_file(serve_config)));
      cfg.apply_env([](const char* name) { return std::getenv(name); });
      Service service(cfg);
      HttpServer http(service);
      const int port = http.bind(cfg.host, cfg.port);
      g_server = &http;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << cfg.host << ":" << port << " (recovered " << service.recovered_records()
                << " log records, " << service.user_count() << " users)" << std::endl;
      http.listen();
      g_server = nullptr;
    }
  } catch (const std::exception& e) {
    std::cerr << "exrec: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
