#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exrec/nn.hpp"

namespace exrec {

/// Dimensions of the recommender. The vocabulary includes one padding token,
/// which always occupies the last index.
struct ModelConfig {
  std::size_t vocab = 45;             // real items + 1 padding token
  std::size_t window = 3;             // number of past steps fed to the network
  std::size_t item_embed = 20;        // item-name embedding width
  std::size_t user_embed = 15;        // user-profile embedding width
  std::size_t item_profile_embed = 3; // item-profile embedding width
  std::size_t attention = 10;         // width of the user-attended space
  std::size_t hidden = 10;            // recurrent state width
  std::size_t user_features = 3;      // user-profile vector length
  std::size_t item_features = 1;      // item-profile vector length

  std::size_t pad_id() const noexcept { return vocab - 1; }
  std::size_t real_items() const noexcept { return vocab - 1; }

  /// Throws ConfigError on a zero dimension or a vocabulary without real items.
  void validate() const;

  /// Widths used for the coaching data: 20/15/3/10.
  static ModelConfig coaching(std::size_t real_items, std::size_t user_features,
                              std::size_t item_features, std::size_t window = 3);
  /// Widths used for the movie data: 1000/1000/3/300.
  static ModelConfig movies(std::size_t real_items, std::size_t user_features,
                            std::size_t item_features, std::size_t window = 3);

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Trainable weights. Every matrix maps a column vector on its right.
struct ModelParams {
  ModelConfig config;
  Matrix item_embed;          // item_embed x vocab
  Matrix user_embed;          // user_embed x user_features
  Matrix profile_embed;       // item_profile_embed x item_features
  Matrix item_to_attention;   // attention x item_embed
  Matrix user_to_attention;   // attention x user_embed
  Matrix temporal_from_item;  // window x attention
  Matrix temporal_from_profile;  // window x item_profile_embed
  Matrix rnn_input;           // hidden x attention
  Matrix rnn_recurrent;       // hidden x hidden
  Matrix decoder;             // vocab x hidden

  static constexpr std::size_t kTensorCount = 10;
  static const std::array<const char*, kTensorCount>& tensor_names();

  std::array<Matrix*, kTensorCount> tensors();
  std::array<const Matrix*, kTensorCount> tensors() const;

  /// All-zero weights with shapes taken from `config`.
  static ModelParams zeros(const ModelConfig& config);
  /// Glorot-uniform initialization, deterministic in `seed`.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  /// Throws ConfigError naming the first matrix whose shape disagrees with config.
  void check_shapes() const;

  void set_zero();
  bool operator==(const ModelParams& other) const;
};

/// The network input: `window` past items (oldest first), their profile
/// vectors, and the acting user's profile.
struct Window {
  std::vector<std::size_t> items;
  std::vector<Vector> item_profiles;
  Vector user_profile;
};

struct WindowSample {
  Window input;
  std::size_t target = 0;
  std::size_t user = 0;      // index of the owning user in its corpus
  std::size_t position = 0;  // index of the target event in that user's sequence
};

/// Intermediates of one forward pass, kept for the backward pass.
/// Holds a pointer to the forwarded window, which must outlive the cache's use.
struct ForwardCache {
  const Window* input = nullptr;
  std::vector<Vector> item_pre;      // W_item * onehot (before relu), per step
  std::vector<Vector> item_hidden;   // relu of the above
  Vector user_pre, user_hidden;
  Vector user_term;                  // user_to_attention * user_hidden
  std::vector<Vector> item_term;     // item_to_attention * item_hidden
  std::vector<Vector> user_attn;     // softmax over attention coordinates
  std::vector<Vector> attended;      // user_attn (.) item_term
  std::vector<Vector> profile_pre, profile_hidden;
  Vector temporal_logits, temporal_attn;
  std::vector<Vector> rnn_in;        // temporal_attn[k] * attended[k]
  std::vector<Vector> rnn_pre, rnn_state;
  Vector logits, probs;
};

/// Runs the network and returns class probabilities over the full vocabulary
/// (padding included, unmasked). Fills `cache` when given.
Vector forward(const ModelParams& params, const Window& input, ForwardCache* cache = nullptr);

/// Accumulates d(cross entropy)/d(params) for one sample into `grads`
/// (which must have the shapes of `params`). Returns the sample's loss.
double backward(const ModelParams& params, const ForwardCache& cache, std::size_t target,
                ModelParams& grads);

/// Validates a window against the configuration. Throws ShapeError/IndexError.
void check_window(const ModelConfig& config, const Window& input);

/// Class probabilities with the padding class masked out and the rest renormalized.
Vector predict_proba(const ModelParams& params, const Window& input);

struct Ranked {
  std::size_t id = 0;
  double probability = 0.0;
  bool operator==(const Ranked&) const = default;
};

/// Top-k by probability descending, ties by ascending id. When `pad` is set
/// that class is never ranked. Throws InputError unless 1 <= k <= #ranked classes.
std::vector<Ranked> predict_topk(const Vector& probs, std::size_t k,
                                 std::optional<std::size_t> pad = std::nullopt);
std::vector<Ranked> predict_topk(const ModelParams& params, const Window& input, std::size_t k);

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean per-sample loss seen during each epoch
};

/// Fresh initialization followed by minibatch Adam on mean cross entropy.
TrainResult train(const std::vector<WindowSample>& data, const ModelConfig& config,
                  const TrainOptions& options);

/// Continues training `params` in place with a fresh optimizer state.
std::vector<double> continue_training(ModelParams& params, const std::vector<WindowSample>& data,
                                      const TrainOptions& options);

struct FinetuneOptions {
  double learning_rate = 1e-4;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Small-step continuation used for personalization. Returns the updated copy.
ModelParams finetune(ModelParams params, const std::vector<WindowSample>& data,
                     const FinetuneOptions& options);

double mean_loss(const ModelParams& params, const std::vector<WindowSample>& data);

// Checkpoints ---------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json checkpoint_to_json(const ModelParams& params);
ModelParams checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

/// Stable FNV-1a hash of the serialized configuration, hex encoded.
std::string config_hash(const ModelConfig& config);

/// Writes `text` to `path` through a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& text);
std::string read_file(const std::string& path);

}  // namespace exrec
