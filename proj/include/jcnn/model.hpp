#pragma once

// The 21-branch network: 20 intra sub-band branches fed one AC plane each and
// one inter sub-band branch fed all 20, concatenated into two FC layers.
//
//   intra k = 1..20 : conv3x3->2, conv2x2->4, conv4x4->4, each followed by
//                     BN, activation and a 3x3/s2 pool
//   inter (k = 21)  : conv1x1->2 + BN + activation (no pool), then the same
//                     three blocks with 2 input channels
//   head            : concat (branch order) -> FC1 + activation -> FC2 -> softmax

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jcnn/layers.hpp"
#include "jcnn/subbands.hpp"
#include "jcnn/tensor.hpp"

namespace jcnn {

enum class Activation : std::uint8_t { tanh = 0, relu = 1 };
enum class Pooling : std::uint8_t { avg = 0, max = 1 };

const char* to_string(Activation a);
const char* to_string(Pooling p);

struct NetworkConfig {
  bool use_intra = true;
  bool use_abs = true;
  bool use_bn = true;
  Activation activation = Activation::tanh;
  Pooling pooling = Pooling::avg;
  std::size_t fc1_units = 512;
  std::size_t grid_x = 32;  // block rows
  std::size_t grid_y = 32;  // block columns
  std::size_t subbands = kSubbands;
  double bn_tau = 0.999;
  double bn_xi = 0.01;
  CoeffScaling input_scaling = CoeffScaling::quantized;

  void validate() const;
  Shape sample_shape() const { return {grid_x, grid_y, subbands}; }
  std::size_t sample_size() const { return grid_x * grid_y * subbands; }
  /// Branch indices in concatenation order (1..21, or just 21).
  std::vector<std::size_t> branch_indices() const;
  std::size_t branch_features() const;
  std::size_t concat_length() const { return branch_indices().size() * branch_features(); }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct InitConfig {
  double conv_weight_std = 0.1;
  double conv_bias_lo = 0.0;
  double conv_bias_hi = 1.0;
};

template <class T>
struct ConvBlock {
  std::size_t k1 = 0, k2 = 0, in_ch = 0, out_ch = 0;
  bool pool = true;
  ConvParams<T> conv;
  BnState<T> bn;
  ConvParams<T> conv_grad;
  Tensor<T> gamma_grad, beta_grad;
};

template <class T>
struct Branch {
  std::size_t index = 0;  // 1..21
  std::vector<ConvBlock<T>> blocks;
};

/// One named tensor of the persisted model state.
template <class T>
struct StateRef {
  std::string name;
  Tensor<T>* value;
};

template <class T>
struct ConstStateRef {
  std::string name;
  const Tensor<T>* value;
};

template <class T>
class Network {
 public:
  Network() = default;
  /// Allocates and initializes parameters. Every tensor is drawn from its own
  /// stream derived from (seed, tensor name), so ablated variants share the
  /// initial values of the parts they keep.
  Network(const NetworkConfig& cfg, std::uint64_t seed, const InitConfig& init = {});

  const NetworkConfig& config() const { return cfg_; }

  /// Logits [B,2] for a batch [B,x,y,20] (or one sample [x,y,20]). Train mode
  /// uses batch statistics, updates the BN moving averages and keeps the
  /// activations needed by backward().
  Tensor<T> forward(const Tensor<T>& batch, Mode mode);

  /// Class probabilities [B,2] in inference mode.
  Tensor<T> predict_proba(const Tensor<T>& batch);

  /// Back-propagates d loss / d logits through the last train-mode forward
  /// pass. Fills every parameter gradient and returns d loss / d input.
  Tensor<T> backward(const Tensor<T>& grad_logits);

  /// Learnable tensors with their gradient buffers: conv w/b, BN gamma/beta
  /// (when BN is on), FC w/b.
  std::vector<ParamRef<T>> params();
  /// Everything persisted in a checkpoint: the parameters plus BN moving
  /// statistics, in a fixed order.
  std::vector<StateRef<T>> state();
  std::vector<ConstStateRef<T>> state() const;

  /// First non-finite parameter name, if any.
  std::optional<std::string> first_non_finite() const;

  void clear_cache();

  std::vector<Branch<T>>& branches() { return branches_; }
  const std::vector<Branch<T>>& branches() const { return branches_; }
  FcParams<T>& fc1() { return fc1_; }
  FcParams<T>& fc2() { return fc2_; }

  /// Marks BN moving statistics as established (after loading them).
  void set_bn_updates(std::uint64_t n);

 private:
  struct BlockCache {
    Tensor<T> input;     // block input
    Tensor<T> pre_act;   // BN output (conv output without BN)
    Tensor<T> act;       // activation output
    BnCache<T> bn;
    std::vector<std::uint32_t> argmax;
  };
  struct Cache {
    bool valid = false;
    Tensor<T> input;  // network input as given, rank 4
    std::vector<std::vector<BlockCache>> blocks;  // [branch][block]
    Tensor<T> concat, fc1_pre, fc1_act;
  };

  Tensor<T> run_branch(std::size_t b, const Tensor<T>& in, Mode mode, std::vector<BlockCache>* cache);
  Tensor<T> branch_backward(std::size_t b, const Tensor<T>& dy, std::vector<BlockCache>& cache);
  Tensor<T> activate(const Tensor<T>& x) const;
  Tensor<T> activate_backward(const Tensor<T>& pre, const Tensor<T>& post, const Tensor<T>& dy) const;

  NetworkConfig cfg_;
  std::vector<Branch<T>> branches_;
  FcParams<T> fc1_, fc2_;
  FcParams<T> fc1_grad_, fc2_grad_;
  Cache cache_;
};

/// Copies every state tensor (parameters and BN statistics) across precisions.
template <class To, class From>
Network<To> network_cast(Network<From>& src);

/// Mean softmax cross-entropy of a network on a fixed labelled batch, as a
/// grad_check fragment.
template <class T>
struct NetworkLoss {
  Network<T>* net;
  std::vector<int> labels;
  Tensor<T> grad_logits;

  double loss(const Tensor<T>& x);
  Tensor<T> backward() { return net->backward(grad_logits); }
  std::vector<ParamRef<T>> params() { return net->params(); }
};

// ---------------------------------------------------------------------------
// Data and training

/// Samples stored contiguously, each of shape `sample_shape`.
struct SampleSet {
  Shape sample_shape;
  std::vector<float> values;
  std::vector<int> labels;  // 0 = single, 1 = double
  std::vector<std::string> ids;

  std::size_t sample_size() const { return shape_size(sample_shape); }
  std::size_t size() const { return labels.size(); }
  void add(std::span<const float> sample, int label, std::string id);
  Tensor<float> batch(std::span<const std::size_t> indices) const;
};

/// Single/double tensors of the same tiles; entry i of both comes from tile i.
struct PairSet {
  Shape sample_shape;
  std::vector<float> single_values, double_values;
  std::vector<std::string> ids;

  std::size_t sample_size() const { return shape_size(sample_shape); }
  std::size_t size() const { return ids.size(); }
  void add(std::span<const float> single, std::span<const float> dbl, std::string id);
  /// Flattened to 2N samples: all singles (label 0) then all doubles.
  SampleSet flattened() const;
};

struct TrainConfig {
  std::size_t epochs = 80;
  std::size_t batch_size = 50;  // half single, half the paired doubles
  double lr0 = 0.05;
  std::size_t lr_decay_every = 20;
  double lr_keep_fraction = 0.3;
  std::size_t validate_from = 41;
  std::uint64_t seed = 0;
  InitConfig init;

  void validate() const;
};

/// lr0 * keep^floor((epoch - 1) / decay_every), epoch counted from 1.
double learning_rate(std::size_t epoch, const TrainConfig& tc);

/// Pair order of one epoch: a permutation of [0, n) drawn from (seed, epoch),
/// cut into batches of `pairs_per_batch`; a trailing partial batch is dropped.
std::vector<std::vector<std::size_t>> batch_schedule(std::size_t pair_count, std::size_t pairs_per_batch,
                                                     std::size_t epoch, std::uint64_t seed);

struct Metrics {
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t count[2] = {0, 0};          // samples per true class
  std::size_t correct_count[2] = {0, 0};  // correctly classified per class
  double loss = 0.0;                      // mean cross-entropy

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // on the training batches, as seen during the epoch
  std::optional<double> val_accuracy, val_loss;  // always set by train()
  std::optional<double> test_accuracy;
};

struct TrainResult {
  Network<float> best;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::size_t validate_from = 0;        // effective first validated epoch
  std::size_t batches_per_epoch = 0;
  std::size_t finite_checks = 0;        // batches verified free of NaN/Inf
  std::vector<EpochRecord> history;
};

struct TrainCallbacks {
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mini-batch SGD. Every batch holds pairs_per_batch singles followed by their
/// doubles. Validation accuracy is recorded every epoch; model selection
/// considers epochs from validate_from (clamped to the last epoch) and keeps
/// the best validation accuracy, ties going to the later epoch.
/// Throws NonFiniteError as soon as a batch yields a NaN/Inf loss, logit or
/// parameter. `monitor` (optional) is evaluated every epoch for the curves.
TrainResult train(const PairSet& train_set, const PairSet& val_set, const NetworkConfig& cfg,
                  const TrainConfig& tc, const SampleSet* monitor = nullptr,
                  const TrainCallbacks& callbacks = {});

/// Probabilities [N,2] for every sample, computed in inference mode in
/// chunks of `chunk` samples.
Tensor<float> score(Network<float>& net, const SampleSet& set, std::size_t chunk = 100);

Metrics evaluate(Network<float>& net, const SampleSet& set, std::size_t chunk = 100);
Metrics metrics_from_scores(const Tensor<float>& probabilities, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  std::uint32_t epoch = 0;
  double val_accuracy = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t qf1 = 0;
  std::uint32_t qf2 = 0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  Network<float> net;
  CheckpointMeta meta;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net, const CheckpointMeta& meta);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Network<float>& net, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct Prediction {
  int label = 0;             // 0 = single, 1 = double
  double probability = 0.0;  // of the predicted class
  double p_double = 0.0;
};

/// Decode, assemble sub-bands, forward in inference mode.
Prediction predict_stream(Network<float>& net, std::span<const std::uint8_t> jpeg_stream);

}  // namespace jcnn
