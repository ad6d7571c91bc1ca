#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfprune/tensor.hpp"

namespace cfprune {

enum class LayerKind { kLinear, kEmbedding };
enum class Activation { kIdentity, kRelu, kGelu };
enum class LossKind { kMse, kCrossEntropy, kNextTokenCrossEntropy };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation act);
std::string_view to_string(LossKind loss);
LayerKind parse_layer_kind(std::string_view s);
Activation parse_activation(std::string_view s);
LossKind parse_loss_kind(std::string_view s);

// A weight matrix of shape [d_out, d_in] with optional bias and pointwise activation.
//
// Embedding layers are linear maps over a multi-hot encoding of integer ids: an input
// row holds `input_slots` ids, slot k selecting column k * vocab + id, where
// vocab = d_in / input_slots.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kLinear;
  Tensor weight;
  std::optional<Tensor> bias;
  Activation activation = Activation::kIdentity;
  bool frozen = false;
  std::size_t input_slots = 1;

  std::size_t d_out() const noexcept { return weight.rows(); }
  std::size_t d_in() const noexcept { return weight.cols(); }
  std::size_t numel() const noexcept { return weight.numel(); }
  std::size_t vocab() const noexcept { return d_in() / input_slots; }
};

struct Block {
  std::string name;
  std::vector<LayerSpec> layers;
};

struct Sample {
  Tensor input;
  Tensor target;
};

// A small set of (input, target) pairs used for activations, losses and scores.
struct CalibrationSet {
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  // Throws InputError when empty or when sample shapes disagree.
  void validate() const;
  CalibrationSet subset(std::size_t first, std::size_t count) const;
};

// Sequential stack of layers grouped into named blocks, ending in a loss head.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(std::vector<Block> blocks, LossKind head);

  LossKind head() const noexcept { return head_; }

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const LayerSpec& layer(std::size_t index) const { return layers_.at(index); }
  const LayerSpec& layer(std::string_view name) const;
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::optional<std::size_t> find_layer(std::string_view name) const;
  std::size_t layer_index(std::string_view name) const;

  std::size_t block_count() const noexcept { return block_names_.size(); }
  const std::string& block_name(std::size_t block) const { return block_names_.at(block); }
  std::size_t block_of(std::size_t layer_index) const { return layer_block_.at(layer_index); }
  std::vector<std::size_t> block_layers(std::size_t block) const;
  std::vector<Block> blocks() const;

  // Indices of non-frozen layers, in model order.
  std::vector<std::size_t> prunable_layers() const;
  std::size_t prunable_parameter_count() const;
  std::size_t parameter_count() const;

  // Replaces a layer's weight. Frozen layers require `override_frozen`.
  void set_layer_weights(std::string_view name, Tensor weight, bool override_frozen = false);
  void set_layer_bias(std::string_view name, Tensor bias, bool override_frozen = false);

  // Direct access for in-place perturbation and training. Callers own the invariants.
  Tensor& mutable_weight(std::size_t index) { return layers_.at(index).weight; }
  LayerSpec& mutable_layer(std::size_t index) { return layers_.at(index); }

  void round_to_storage_precision();

  friend bool operator==(const ModelGraph& a, const ModelGraph& b);

 private:
  void validate() const;

  std::vector<LayerSpec> layers_;
  std::vector<std::string> block_names_;
  std::vector<std::size_t> layer_block_;
  LossKind head_ = LossKind::kMse;
};

bool operator==(const LayerSpec& a, const LayerSpec& b);

// Dense input matrix for the first layer (multi-hot rows for embedding models).
Matrix encode_input(const ModelGraph& model, const Tensor& input);

// Stacked first-layer input over every sample of the batch.
Matrix encode_batch(const ModelGraph& model, const CalibrationSet& batch);

Matrix apply_activation(Activation act, const Matrix& pre);
// act(x W^T + b)
Matrix apply_layer(const LayerSpec& layer, const Matrix& input);

// Per-row weights so that the weighted row sum is the mean over samples of the
// per-sample mean over rows.
std::vector<double> row_weights(const CalibrationSet& batch);

// Loss of stacked outputs against stacked targets.
double loss_value(LossKind head, const Matrix& output, const Matrix& targets,
                  const std::vector<double>& weights);
// dLoss/dOutput for the same quantities.
Matrix loss_gradient(LossKind head, const Matrix& output, const Matrix& targets,
                     const std::vector<double>& weights);

Matrix stack_targets(const CalibrationSet& batch);

struct ForwardResult {
  double loss = 0.0;
  // Input seen by each layer, stacked over samples: [sum of rows, d_in].
  std::map<std::string, Matrix> activations;
  Matrix output;
};

ForwardResult forward_with_activations(const ModelGraph& model, const CalibrationSet& batch);
double forward_loss(const ModelGraph& model, const CalibrationSet& batch);
double sample_loss(const ModelGraph& model, const Sample& sample);
Matrix predict(const ModelGraph& model, const Tensor& input);

struct Gradients {
  double loss = 0.0;
  std::vector<Matrix> weight;  // indexed like ModelGraph::layers()
  std::vector<Vector> bias;    // empty vector for layers without bias
};

Gradients compute_gradients(const ModelGraph& model, const CalibrationSet& batch);
// dLoss/dW for every layer (frozen ones included).
std::map<std::string, Tensor> backprop_gradients(const ModelGraph& model,
                                                 const CalibrationSet& batch);

}  // namespace cfprune
