#include "exrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace exrec {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

void require_dim(std::size_t value, const char* name) {
  if (value == 0) throw ConfigError(std::string("model config: ") + name + " must be >= 1");
}

// Seed offset for the shuffling stream so it never aliases the init stream.
constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ULL;

}  // namespace

void ModelConfig::validate() const {
  require_dim(vocab, "vocab");
  require_dim(window, "window");
  require_dim(item_embed, "item_embed");
  require_dim(user_embed, "user_embed");
  require_dim(item_profile_embed, "item_profile_embed");
  require_dim(attention, "attention");
  require_dim(hidden, "hidden");
  require_dim(user_features, "user_features");
  require_dim(item_features, "item_features");
  if (vocab < 2) throw ConfigError("model config: vocab needs at least one real item plus padding");
}

ModelConfig ModelConfig::coaching(std::size_t real_items, std::size_t user_features,
                                  std::size_t item_features, std::size_t window) {
  ModelConfig c;
  c.vocab = real_items + 1;
  c.window = window;
  c.item_embed = 20;
  c.user_embed = 15;
  c.item_profile_embed = 3;
  c.attention = 10;
  c.hidden = 10;
  c.user_features = user_features;
  c.item_features = item_features;
  return c;
}

ModelConfig ModelConfig::movies(std::size_t real_items, std::size_t user_features,
                                std::size_t item_features, std::size_t window) {
  ModelConfig c;
  c.vocab = real_items + 1;
  c.window = window;
  c.item_embed = 1000;
  c.user_embed = 1000;
  c.item_profile_embed = 3;
  c.attention = 300;
  c.hidden = 300;
  c.user_features = user_features;
  c.item_features = item_features;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab", c.vocab},
          {"window", c.window},
          {"item_embed", c.item_embed},
          {"user_embed", c.user_embed},
          {"item_profile_embed", c.item_profile_embed},
          {"attention", c.attention},
          {"hidden", c.hidden},
          {"user_features", c.user_features},
          {"item_features", c.item_features}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab = j.at("vocab").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.item_embed = j.at("item_embed").get<std::size_t>();
    c.user_embed = j.at("user_embed").get<std::size_t>();
    c.item_profile_embed = j.at("item_profile_embed").get<std::size_t>();
    c.attention = j.at("attention").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.user_features = j.at("user_features").get<std::size_t>();
    c.item_features = j.at("item_features").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

const std::array<const char*, ModelParams::kTensorCount>& ModelParams::tensor_names() {
  static const std::array<const char*, kTensorCount> names = {
      "item_embed",         "user_embed",            "profile_embed", "item_to_attention",
      "user_to_attention",  "temporal_from_item",    "temporal_from_profile",
      "rnn_input",          "rnn_recurrent",         "decoder"};
  return names;
}

std::array<Matrix*, ModelParams::kTensorCount> ModelParams::tensors() {
  return {&item_embed,         &user_embed,         &profile_embed,         &item_to_attention,
          &user_to_attention,  &temporal_from_item, &temporal_from_profile, &rnn_input,
          &rnn_recurrent,      &decoder};
}

std::array<const Matrix*, ModelParams::kTensorCount> ModelParams::tensors() const {
  return {&item_embed,         &user_embed,         &profile_embed,         &item_to_attention,
          &user_to_attention,  &temporal_from_item, &temporal_from_profile, &rnn_input,
          &rnn_recurrent,      &decoder};
}

namespace {

std::array<std::pair<std::size_t, std::size_t>, ModelParams::kTensorCount> expected_shapes(
    const ModelConfig& c) {
  return {{{c.item_embed, c.vocab},
           {c.user_embed, c.user_features},
           {c.item_profile_embed, c.item_features},
           {c.attention, c.item_embed},
           {c.attention, c.user_embed},
           {c.window, c.attention},
           {c.window, c.item_profile_embed},
           {c.hidden, c.attention},
           {c.hidden, c.hidden},
           {c.vocab, c.hidden}}};
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  const auto shapes = expected_shapes(config);
  auto ts = p.tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    *ts[i] = Matrix::Zero(idx(shapes[i].first), idx(shapes[i].second));
  }
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  std::mt19937_64 rng(seed);
  for (Matrix* m : p.tensors()) {
    *m = glorot_uniform(static_cast<std::size_t>(m->rows()), static_cast<std::size_t>(m->cols()),
                        rng);
  }
  return p;
}

void ModelParams::check_shapes() const {
  config.validate();
  const auto shapes = expected_shapes(config);
  const auto ts = tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    if (ts[i]->rows() != idx(shapes[i].first) || ts[i]->cols() != idx(shapes[i].second)) {
      std::ostringstream os;
      os << "model params: " << tensor_names()[i] << " is " << shape_string(*ts[i])
         << ", expected " << shapes[i].first << "x" << shapes[i].second;
      throw ConfigError(os.str());
    }
  }
}

void ModelParams::set_zero() {
  for (Matrix* m : tensors()) m->setZero();
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (!(config == other.config)) return false;
  const auto a = tensors();
  const auto b = other.tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
    if (!std::equal(a[i]->data(), a[i]->data() + a[i]->size(), b[i]->data())) return false;
  }
  return true;
}

void check_window(const ModelConfig& config, const Window& input) {
  const std::size_t w = config.window;
  if (input.items.size() != w || input.item_profiles.size() != w) {
    throw ShapeError("window: expected " + std::to_string(w) + " steps, got " +
                     std::to_string(input.items.size()) + " items and " +
                     std::to_string(input.item_profiles.size()) + " profiles");
  }
  if (static_cast<std::size_t>(input.user_profile.size()) != config.user_features) {
    throw ShapeError("window: user profile has length " +
                     std::to_string(input.user_profile.size()) + ", expected " +
                     std::to_string(config.user_features));
  }
  for (std::size_t k = 0; k < w; ++k) {
    if (input.items[k] >= config.vocab) {
      throw IndexError("window: item " + std::to_string(input.items[k]) + " outside vocabulary of " +
                       std::to_string(config.vocab));
    }
    if (static_cast<std::size_t>(input.item_profiles[k].size()) != config.item_features) {
      throw ShapeError("window: item profile at step " + std::to_string(k) + " has length " +
                       std::to_string(input.item_profiles[k].size()) + ", expected " +
                       std::to_string(config.item_features));
    }
  }
}

namespace {

void resize_cache(ForwardCache& c, std::size_t w) {
  if (c.item_pre.size() == w) return;
  c.item_pre.resize(w);
  c.item_hidden.resize(w);
  c.item_term.resize(w);
  c.user_attn.resize(w);
  c.attended.resize(w);
  c.profile_pre.resize(w);
  c.profile_hidden.resize(w);
  c.rnn_in.resize(w);
  c.rnn_pre.resize(w);
  c.rnn_state.resize(w);
}

// Softmax written into an existing vector.
void softmax_into(const Vector& logits, Vector& out) {
  const double shift = logits.maxCoeff();
  out = (logits.array() - shift).exp();
  out /= out.sum();
}

}  // namespace

Vector forward(const ModelParams& p, const Window& in, ForwardCache* cache) {
  const ModelConfig& cfg = p.config;
  p.check_shapes();
  check_window(cfg, in);
  ForwardCache local;
  ForwardCache& c = cache != nullptr ? *cache : local;
  const std::size_t w = cfg.window;
  resize_cache(c, w);
  c.input = &in;

  c.user_pre.noalias() = p.user_embed * in.user_profile;
  c.user_hidden = c.user_pre.cwiseMax(0.0);
  c.user_term.noalias() = p.user_to_attention * c.user_hidden;

  c.temporal_logits.resize(idx(w));
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t id = in.items[k];
    if (id == cfg.pad_id()) {
      c.item_pre[k].setZero(idx(cfg.item_embed));
    } else {
      c.item_pre[k] = p.item_embed.col(idx(id));
    }
    c.item_hidden[k] = c.item_pre[k].cwiseMax(0.0);
    c.item_term[k].noalias() = p.item_to_attention * c.item_hidden[k];
    softmax_into(c.item_term[k] + c.user_term, c.user_attn[k]);
    c.attended[k] = c.user_attn[k].cwiseProduct(c.item_term[k]);

    c.profile_pre[k].noalias() = p.profile_embed * in.item_profiles[k];
    c.profile_hidden[k] = c.profile_pre[k].cwiseMax(0.0);
    c.temporal_logits[idx(k)] = p.temporal_from_item.row(idx(k)).dot(c.attended[k]) +
                                p.temporal_from_profile.row(idx(k)).dot(c.profile_hidden[k]);
  }
  softmax_into(c.temporal_logits, c.temporal_attn);

  for (std::size_t k = 0; k < w; ++k) {
    c.rnn_in[k] = c.temporal_attn[idx(k)] * c.attended[k];
    c.rnn_pre[k].noalias() = p.rnn_input * c.rnn_in[k];
    if (k > 0) c.rnn_pre[k].noalias() += p.rnn_recurrent * c.rnn_state[k - 1];
    c.rnn_state[k] = c.rnn_pre[k].cwiseMax(0.0);
  }
  c.logits.noalias() = p.decoder * c.rnn_state[w - 1];
  softmax_into(c.logits, c.probs);
  return c.probs;
}

double backward(const ModelParams& p, const ForwardCache& c, std::size_t target, ModelParams& g) {
  const ModelConfig& cfg = p.config;
  const std::size_t w = cfg.window;
  if (c.input == nullptr) throw StateError("backward: cache was not filled by forward");
  const Window& in = *c.input;
  const double loss = cross_entropy(c.probs, target);

  const Vector dlogits = cross_entropy_softmax_grad(c.probs, target);
  g.decoder.noalias() += dlogits * c.rnn_state[w - 1].transpose();
  Vector dstate = p.decoder.transpose() * dlogits;

  std::vector<Vector> drnn_in(w);
  for (std::size_t k = w; k-- > 0;) {
    const Vector dpre =
        (c.rnn_pre[k].array() > 0.0).select(dstate, Vector::Zero(dstate.size()));
    g.rnn_input.noalias() += dpre * c.rnn_in[k].transpose();
    drnn_in[k].noalias() = p.rnn_input.transpose() * dpre;
    if (k > 0) {
      g.rnn_recurrent.noalias() += dpre * c.rnn_state[k - 1].transpose();
      dstate.noalias() = p.rnn_recurrent.transpose() * dpre;
    }
  }

  Vector dtemporal(idx(w));
  std::vector<Vector> dattended(w);
  for (std::size_t k = 0; k < w; ++k) {
    dtemporal[idx(k)] = drnn_in[k].dot(c.attended[k]);
    dattended[k] = c.temporal_attn[idx(k)] * drnn_in[k];
  }
  const Vector dtlogits = softmax_backward(c.temporal_attn, dtemporal);

  Vector duser_term = Vector::Zero(idx(cfg.attention));
  // Per-step factors of the item_to_attention gradient, applied as one product.
  Matrix dterms(idx(cfg.attention), idx(w));
  Matrix hiddens(idx(cfg.item_embed), idx(w));
  for (std::size_t k = 0; k < w; ++k) {
    const double dl = dtlogits[idx(k)];
    g.temporal_from_item.row(idx(k)) += dl * c.attended[k].transpose();
    dattended[k] += dl * p.temporal_from_item.row(idx(k)).transpose();
    g.temporal_from_profile.row(idx(k)) += dl * c.profile_hidden[k].transpose();

    const Vector dprofile =
        (c.profile_pre[k].array() > 0.0)
            .select(dl * p.temporal_from_profile.row(idx(k)).transpose(),
                    Vector::Zero(idx(cfg.item_profile_embed)));
    g.profile_embed.noalias() += dprofile * in.item_profiles[k].transpose();

    const Vector duser_attn = dattended[k].cwiseProduct(c.item_term[k]);
    Vector ditem_term = dattended[k].cwiseProduct(c.user_attn[k]);
    const Vector dmix = softmax_backward(c.user_attn[k], duser_attn);
    ditem_term += dmix;
    duser_term += dmix;

    dterms.col(idx(k)) = ditem_term;
    hiddens.col(idx(k)) = c.item_hidden[k];
    if (in.items[k] != cfg.pad_id()) {
      const Vector dh = p.item_to_attention.transpose() * ditem_term;
      g.item_embed.col(idx(in.items[k])) +=
          (c.item_pre[k].array() > 0.0).select(dh, Vector::Zero(dh.size()));
    }
  }

  g.item_to_attention.noalias() += dterms * hiddens.transpose();
  g.user_to_attention.noalias() += duser_term * c.user_hidden.transpose();
  const Vector duh = p.user_to_attention.transpose() * duser_term;
  const Vector dupre = (c.user_pre.array() > 0.0).select(duh, Vector::Zero(duh.size()));
  g.user_embed.noalias() += dupre * in.user_profile.transpose();
  return loss;
}

Vector predict_proba(const ModelParams& params, const Window& input) {
  Vector probs = forward(params, input);
  const auto pad = idx(params.config.pad_id());
  // Renormalizing over the real classes equals masking the padding logit to -inf.
  const double rest = 1.0 - probs[pad];
  probs[pad] = 0.0;
  if (rest > 0.0) probs /= probs.sum();
  return probs;
}

std::vector<Ranked> predict_topk(const Vector& probs, std::size_t k,
                                 std::optional<std::size_t> pad) {
  const auto n = static_cast<std::size_t>(probs.size());
  std::vector<std::size_t> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!pad || *pad != i) ids.push_back(i);
  }
  if (k < 1 || k > ids.size()) {
    throw InputError("predict_topk: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(ids.size()) + "]");
  }
  auto better = [&](std::size_t a, std::size_t b) {
    const double pa = probs[idx(a)];
    const double pb = probs[idx(b)];
    if (pa != pb) return pa > pb;
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  std::vector<Ranked> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({ids[i], probs[idx(ids[i])]});
  return out;
}

std::vector<Ranked> predict_topk(const ModelParams& params, const Window& input, std::size_t k) {
  return predict_topk(predict_proba(params, input), k, params.config.pad_id());
}

std::vector<double> continue_training(ModelParams& params, const std::vector<WindowSample>& data,
                                      const TrainOptions& options) {
  if (data.empty()) throw InputError("train: empty dataset");
  if (options.batch_size == 0) throw InputError("train: batch size must be >= 1");
  params.check_shapes();
  for (const WindowSample& s : data) {
    check_window(params.config, s.input);
    if (s.target >= params.config.vocab || s.target == params.config.pad_id()) {
      throw InputError("train: target " + std::to_string(s.target) + " is not a real item");
    }
  }

  std::vector<double> trace;
  trace.reserve(options.epochs);
  if (options.epochs == 0) return trace;

  auto ptrs = params.tensors();
  const std::array<const Matrix*, ModelParams::kTensorCount> cptrs = [&] {
    std::array<const Matrix*, ModelParams::kTensorCount> a{};
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = ptrs[i];
    return a;
  }();
  Adam adam(options.adam, cptrs);
  ModelParams grads = ModelParams::zeros(params.config);
  auto gptrs_mut = grads.tensors();
  std::array<const Matrix*, ModelParams::kTensorCount> gptrs{};
  for (std::size_t i = 0; i < gptrs.size(); ++i) gptrs[i] = gptrs_mut[i];

  std::mt19937_64 rng(options.seed ^ kShuffleStream);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ForwardCache cache;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      grads.set_zero();
      for (std::size_t i = start; i < end; ++i) {
        const WindowSample& s = data[order[i]];
        forward(params, s.input, &cache);
        total += backward(params, cache, s.target, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (Matrix* m : gptrs_mut) *m *= scale;
      adam.step(ptrs, gptrs);
    }
    trace.push_back(total / static_cast<double>(order.size()));
  }
  return trace;
}

TrainResult train(const std::vector<WindowSample>& data, const ModelConfig& config,
                  const TrainOptions& options) {
  if (data.empty()) throw InputError("train: empty dataset");
  TrainResult result{ModelParams::initialize(config, options.seed), {}};
  result.epoch_loss = continue_training(result.params, data, options);
  return result;
}

ModelParams finetune(ModelParams params, const std::vector<WindowSample>& data,
                     const FinetuneOptions& options) {
  TrainOptions t;
  t.epochs = options.epochs;
  t.batch_size = options.batch_size;
  t.adam.learning_rate = options.learning_rate;
  t.seed = options.seed;
  continue_training(params, data, t);
  return params;
}

double mean_loss(const ModelParams& params, const std::vector<WindowSample>& data) {
  if (data.empty()) throw InputError("mean_loss: empty dataset");
  double total = 0.0;
  ForwardCache cache;
  for (const WindowSample& s : data) {
    total += cross_entropy(forward(params, s.input, &cache), s.target);
  }
  return total / static_cast<double>(data.size());
}

// Checkpoints ---------------------------------------------------------------

nlohmann::json checkpoint_to_json(const ModelParams& params) {
  nlohmann::json weights = nlohmann::json::object();
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
    const Matrix& m = *ts[i];
    weights[ModelParams::tensor_names()[i]] = {
        {"rows", m.rows()},
        {"cols", m.cols()},
        {"values", std::vector<double>(m.data(), m.data() + m.size())}};
  }
  return {{"format_version", kCheckpointFormatVersion},
          {"config", to_json(params.config)},
          {"weights", std::move(weights)}};
}

ModelParams checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw ConfigError("checkpoint: unsupported format_version " + std::to_string(version));
    }
    ModelParams p = ModelParams::zeros(model_config_from_json(j.at("config")));
    const auto& weights = j.at("weights");
    auto ts = p.tensors();
    for (std::size_t i = 0; i < ModelParams::kTensorCount; ++i) {
      const char* name = ModelParams::tensor_names()[i];
      const auto& w = weights.at(name);
      const auto rows = w.at("rows").get<Index>();
      const auto cols = w.at("cols").get<Index>();
      const auto values = w.at("values").get<std::vector<double>>();
      if (rows != ts[i]->rows() || cols != ts[i]->cols() ||
          values.size() != static_cast<std::size_t>(rows * cols)) {
        throw ConfigError(std::string("checkpoint: matrix ") + name + " has inconsistent shape");
      }
      std::copy(values.begin(), values.end(), ts[i]->data());
      if (!ts[i]->allFinite()) {
        throw NumericError(std::string("checkpoint: matrix ") + name + " has non-finite values");
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  write_file_atomic(path, checkpoint_to_json(params).dump());
}

ModelParams load_checkpoint(const std::string& path) {
  return checkpoint_from_json(nlohmann::json::parse(read_file(path)));
}

std::string config_hash(const ModelConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_file_atomic(const std::string& path, const std::string& text) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp);
    out << text;
    out.flush();
    if (!out) throw InputError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace exrec
