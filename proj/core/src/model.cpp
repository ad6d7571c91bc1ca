#include "cfprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "cfprune/error.hpp"

namespace cfprune {

namespace {

bool valid_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '-' || c == '.';
  });
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix pre_activation(const LayerSpec& layer, const Matrix& input) {
  if (static_cast<std::size_t>(input.cols()) != layer.d_in()) {
    throw DimensionError("layer '" + layer.name + "' expects input width " +
                         std::to_string(layer.d_in()) + ", got " + std::to_string(input.cols()));
  }
  Matrix z = input * layer.weight.matrix().transpose();
  if (layer.bias) {
    const auto b = layer.bias->matrix();
    z.rowwise() += b.row(0);
  }
  return z;
}

Matrix activation_derivative(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::kIdentity:
      return Matrix::Ones(pre.rows(), pre.cols());
    case Activation::kRelu:
      // Subgradient at 0 is 0.
      return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::kGelu:
      return pre.unaryExpr([](double v) { return gelu_derivative(v); });
  }
  return {};
}

void check_finite_loss(double loss) {
  if (!std::isfinite(loss)) throw NumericalError("forward pass produced a non-finite loss");
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  return kind == LayerKind::kLinear ? "linear" : "embedding";
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kGelu:
      return "gelu";
  }
  return "identity";
}

std::string_view to_string(LossKind loss) {
  switch (loss) {
    case LossKind::kMse:
      return "mse";
    case LossKind::kCrossEntropy:
      return "cross_entropy";
    case LossKind::kNextTokenCrossEntropy:
      return "next_token_cross_entropy";
  }
  return "mse";
}

LayerKind parse_layer_kind(std::string_view s) {
  if (s == "linear") return LayerKind::kLinear;
  if (s == "embedding") return LayerKind::kEmbedding;
  throw InputError("unknown layer kind '" + std::string(s) + "'");
}

Activation parse_activation(std::string_view s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw InputError("unknown activation '" + std::string(s) + "'");
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "mse") return LossKind::kMse;
  if (s == "cross_entropy") return LossKind::kCrossEntropy;
  if (s == "next_token_cross_entropy") return LossKind::kNextTokenCrossEntropy;
  throw InputError("unknown loss kind '" + std::string(s) + "'");
}

void CalibrationSet::validate() const {
  if (samples.empty()) throw InputError("calibration batch is empty");
  const auto& in0 = samples.front().input.shape();
  const auto& t0 = samples.front().target.shape();
  for (std::size_t k = 1; k < samples.size(); ++k) {
    if (samples[k].input.shape() != in0 || samples[k].target.shape() != t0) {
      throw InputError("calibration sample " + std::to_string(k) +
                       " has inconsistent shape with sample 0");
    }
  }
}

CalibrationSet CalibrationSet::subset(std::size_t first, std::size_t count) const {
  if (first + count > samples.size()) {
    throw InputError("requested " + std::to_string(count) + " samples from offset " +
                     std::to_string(first) + " but only " + std::to_string(samples.size()) +
                     " are available");
  }
  CalibrationSet out;
  out.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(first),
                     samples.begin() + static_cast<std::ptrdiff_t>(first + count));
  return out;
}

ModelGraph::ModelGraph(std::vector<Block> blocks, LossKind head) : head_(head) {
  for (auto& block : blocks) {
    block_names_.push_back(block.name);
    for (auto& layer : block.layers) {
      layers_.push_back(std::move(layer));
      layer_block_.push_back(block_names_.size() - 1);
    }
  }
  validate();
}

void ModelGraph::validate() const {
  if (layers_.empty()) throw InputError("model has no layers");
  std::set<std::string, std::less<>> blocks;
  for (const auto& b : block_names_) {
    if (!valid_name(b)) throw InputError("invalid block name '" + b + "'");
    if (!blocks.insert(b).second) throw InputError("duplicate block name '" + b + "'");
  }
  std::set<std::string, std::less<>> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (!valid_name(l.name)) throw InputError("invalid layer name '" + l.name + "'");
    if (!names.insert(l.name).second) throw InputError("duplicate layer name '" + l.name + "'");
    if (l.weight.rank() != 2) {
      throw DimensionError("layer '" + l.name + "' weight must be rank 2, got " +
                           shape_to_string(l.weight.shape()));
    }
    if (l.bias && l.bias->numel() != l.d_out()) {
      throw DimensionError("layer '" + l.name + "' bias length does not match d_out");
    }
    if (l.kind == LayerKind::kEmbedding) {
      if (i != 0) throw InputError("embedding layer '" + l.name + "' must be the first layer");
      if (l.input_slots == 0 || l.d_in() % l.input_slots != 0) {
        throw DimensionError("embedding layer '" + l.name + "' d_in is not divisible by its slots");
      }
    }
    if (i > 0 && layers_[i - 1].d_out() != l.d_in()) {
      throw DimensionError("layer '" + l.name + "' d_in " + std::to_string(l.d_in()) +
                           " does not match previous d_out " +
                           std::to_string(layers_[i - 1].d_out()));
    }
    if (!l.weight.all_finite() || (l.bias && !l.bias->all_finite())) {
      throw NumericalError("layer '" + l.name + "' holds non-finite parameters");
    }
  }
}

std::optional<std::size_t> ModelGraph::find_layer(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ModelGraph::layer_index(std::string_view name) const {
  auto idx = find_layer(name);
  if (!idx) throw InputError("unknown layer '" + std::string(name) + "'");
  return *idx;
}

const LayerSpec& ModelGraph::layer(std::string_view name) const { return layers_[layer_index(name)]; }

std::vector<std::size_t> ModelGraph::block_layers(std::size_t block) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layer_block_[i] == block) out.push_back(i);
  }
  return out;
}

std::vector<Block> ModelGraph::blocks() const {
  std::vector<Block> out;
  for (std::size_t b = 0; b < block_names_.size(); ++b) {
    Block block{block_names_[b], {}};
    for (auto i : block_layers(b)) block.layers.push_back(layers_[i]);
    out.push_back(std::move(block));
  }
  return out;
}

std::vector<std::size_t> ModelGraph::prunable_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].frozen) out.push_back(i);
  }
  return out;
}

std::size_t ModelGraph::prunable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    if (!l.frozen) n += l.numel();
  }
  return n;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.numel() + (l.bias ? l.bias->numel() : 0);
  return n;
}

void ModelGraph::set_layer_weights(std::string_view name, Tensor weight, bool override_frozen) {
  auto& layer = layers_[layer_index(name)];
  if (layer.frozen && !override_frozen) {
    throw InputError("layer '" + layer.name + "' is frozen; refusing to overwrite its weights");
  }
  if (!weight.same_shape(layer.weight)) {
    throw DimensionError("layer '" + layer.name + "' expects weight shape " +
                         shape_to_string(layer.weight.shape()) + ", got " +
                         shape_to_string(weight.shape()));
  }
  if (!weight.all_finite()) throw NumericalError("non-finite weights for layer '" + layer.name + "'");
  layer.weight = std::move(weight);
}

void ModelGraph::set_layer_bias(std::string_view name, Tensor bias, bool override_frozen) {
  auto& layer = layers_[layer_index(name)];
  if (layer.frozen && !override_frozen) {
    throw InputError("layer '" + layer.name + "' is frozen; refusing to overwrite its bias");
  }
  if (!layer.bias || !bias.same_shape(*layer.bias)) {
    throw DimensionError("layer '" + layer.name + "' bias shape mismatch");
  }
  layer.bias = std::move(bias);
}

void ModelGraph::round_to_storage_precision() {
  for (auto& l : layers_) {
    cfprune::round_to_storage_precision(l.weight);
    if (l.bias) cfprune::round_to_storage_precision(*l.bias);
  }
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  return a.name == b.name && a.kind == b.kind && a.weight == b.weight && a.bias == b.bias &&
         a.activation == b.activation && a.frozen == b.frozen && a.input_slots == b.input_slots;
}

bool operator==(const ModelGraph& a, const ModelGraph& b) {
  return a.head_ == b.head_ && a.block_names_ == b.block_names_ && a.layer_block_ == b.layer_block_ &&
         a.layers_ == b.layers_;
}

Matrix encode_input(const ModelGraph& model, const Tensor& input) {
  const auto& first = model.layer(std::size_t{0});
  if (first.kind == LayerKind::kLinear) {
    if (input.cols() != first.d_in()) {
      throw DimensionError("input width " + std::to_string(input.cols()) +
                           " does not match first layer d_in " + std::to_string(first.d_in()));
    }
    return input.matrix();
  }
  if (input.cols() != first.input_slots) {
    throw DimensionError("embedding input must have " + std::to_string(first.input_slots) +
                         " ids per row, got " + std::to_string(input.cols()));
  }
  const std::size_t vocab = first.vocab();
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(input.rows()),
                          static_cast<Eigen::Index>(first.d_in()));
  for (std::size_t r = 0; r < input.rows(); ++r) {
    for (std::size_t s = 0; s < first.input_slots; ++s) {
      const double id = input.at(r, s);
      if (id < 0 || id >= static_cast<double>(vocab) || id != std::floor(id)) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(vocab));
      }
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s * vocab + static_cast<std::size_t>(id))) = 1.0;
    }
  }
  return x;
}

Matrix encode_batch(const ModelGraph& model, const CalibrationSet& batch) {
  batch.validate();
  std::vector<Matrix> parts;
  Eigen::Index rows = 0;
  for (const auto& s : batch.samples) {
    parts.push_back(encode_input(model, s.input));
    rows += parts.back().rows();
  }
  Matrix x(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    x.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return x;
}

Matrix stack_targets(const CalibrationSet& batch) {
  batch.validate();
  const auto rows = static_cast<Eigen::Index>(batch.samples.front().target.rows());
  const auto cols = static_cast<Eigen::Index>(batch.samples.front().target.cols());
  Matrix t(rows * static_cast<Eigen::Index>(batch.size()), cols);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    t.middleRows(static_cast<Eigen::Index>(k) * rows, rows) = batch.samples[k].target.matrix();
  }
  return t;
}

Matrix apply_activation(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::kIdentity:
      return pre;
    case Activation::kRelu:
      return pre.cwiseMax(0.0);
    case Activation::kGelu:
      return pre.unaryExpr([](double v) { return gelu(v); });
  }
  return pre;
}

Matrix apply_layer(const LayerSpec& layer, const Matrix& input) {
  return apply_activation(layer.activation, pre_activation(layer, input));
}

std::vector<double> row_weights(const CalibrationSet& batch) {
  std::vector<double> w;
  const double k = static_cast<double>(batch.size());
  for (const auto& s : batch.samples) {
    const std::size_t rows = s.input.rows();
    w.insert(w.end(), rows, 1.0 / (k * static_cast<double>(rows)));
  }
  return w;
}

namespace {

void check_loss_shapes(LossKind head, const Matrix& output, const Matrix& targets,
                       const std::vector<double>& weights) {
  if (output.rows() != targets.rows() || static_cast<std::size_t>(output.rows()) != weights.size()) {
    throw DimensionError("output rows " + std::to_string(output.rows()) + " vs target rows " +
                         std::to_string(targets.rows()));
  }
  if (head == LossKind::kMse) {
    if (output.cols() != targets.cols()) {
      throw DimensionError("mse target width " + std::to_string(targets.cols()) +
                           " does not match output width " + std::to_string(output.cols()));
    }
  } else if (targets.cols() != 1) {
    throw DimensionError("cross-entropy targets must hold one class id per row");
  }
}

std::size_t class_id(double v, Eigen::Index classes) {
  if (v < 0 || v >= static_cast<double>(classes) || v != std::floor(v)) {
    throw InputError("class id " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

double loss_value(LossKind head, const Matrix& output, const Matrix& targets,
                  const std::vector<double>& weights) {
  check_loss_shapes(head, output, targets, weights);
  double total = 0.0;
  for (Eigen::Index r = 0; r < output.rows(); ++r) {
    double row_loss = 0.0;
    if (head == LossKind::kMse) {
      row_loss = (output.row(r) - targets.row(r)).squaredNorm() / static_cast<double>(output.cols());
    } else {
      const double m = output.row(r).maxCoeff();
      const double lse = m + std::log((output.row(r).array() - m).exp().sum());
      row_loss = lse - output(r, static_cast<Eigen::Index>(class_id(targets(r, 0), output.cols())));
    }
    total += weights[static_cast<std::size_t>(r)] * row_loss;
  }
  return total;
}

Matrix loss_gradient(LossKind head, const Matrix& output, const Matrix& targets,
                     const std::vector<double>& weights) {
  check_loss_shapes(head, output, targets, weights);
  Matrix g(output.rows(), output.cols());
  for (Eigen::Index r = 0; r < output.rows(); ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    if (head == LossKind::kMse) {
      g.row(r) = (output.row(r) - targets.row(r)) * (2.0 * w / static_cast<double>(output.cols()));
    } else {
      const double m = output.row(r).maxCoeff();
      Eigen::RowVectorXd p = (output.row(r).array() - m).exp();
      p /= p.sum();
      p(static_cast<Eigen::Index>(class_id(targets(r, 0), output.cols()))) -= 1.0;
      g.row(r) = p * w;
    }
  }
  return g;
}

ForwardResult forward_with_activations(const ModelGraph& model, const CalibrationSet& batch) {
  ForwardResult result;
  Matrix x = encode_batch(model, batch);
  for (const auto& layer : model.layers()) {
    Matrix next = apply_layer(layer, x);
    result.activations.emplace(layer.name, std::move(x));
    x = std::move(next);
  }
  result.loss = loss_value(model.head(), x, stack_targets(batch), row_weights(batch));
  check_finite_loss(result.loss);
  result.output = std::move(x);
  return result;
}

double forward_loss(const ModelGraph& model, const CalibrationSet& batch) {
  Matrix x = encode_batch(model, batch);
  for (const auto& layer : model.layers()) x = apply_layer(layer, x);
  const double loss = loss_value(model.head(), x, stack_targets(batch), row_weights(batch));
  check_finite_loss(loss);
  return loss;
}

double sample_loss(const ModelGraph& model, const Sample& sample) {
  Matrix x = encode_input(model, sample.input);
  for (const auto& layer : model.layers()) x = apply_layer(layer, x);
  const std::vector<double> weights(static_cast<std::size_t>(x.rows()),
                                    1.0 / static_cast<double>(x.rows()));
  const double loss = loss_value(model.head(), x, sample.target.matrix(), weights);
  check_finite_loss(loss);
  return loss;
}

Matrix predict(const ModelGraph& model, const Tensor& input) {
  Matrix x = encode_input(model, input);
  for (const auto& layer : model.layers()) x = apply_layer(layer, x);
  return x;
}

Gradients compute_gradients(const ModelGraph& model, const CalibrationSet& batch) {
  const auto& layers = model.layers();
  std::vector<Matrix> inputs;
  std::vector<Matrix> pres;
  inputs.reserve(layers.size());
  pres.reserve(layers.size());

  Matrix x = encode_batch(model, batch);
  for (const auto& layer : layers) {
    Matrix z = pre_activation(layer, x);
    Matrix a = apply_activation(layer.activation, z);
    inputs.push_back(std::move(x));
    pres.push_back(std::move(z));
    x = std::move(a);
  }
  const Matrix targets = stack_targets(batch);
  const auto weights = row_weights(batch);

  Gradients g;
  g.loss = loss_value(model.head(), x, targets, weights);
  check_finite_loss(g.loss);
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());

  Matrix upstream = loss_gradient(model.head(), x, targets, weights);
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& layer = layers[i];
    Matrix dz = upstream.cwiseProduct(activation_derivative(layer.activation, pres[i]));
    g.weight[i] = dz.transpose() * inputs[i];
    if (layer.bias) g.bias[i] = dz.colwise().sum().transpose();
    if (i > 0) upstream = dz * layer.weight.matrix();
  }
  return g;
}

std::map<std::string, Tensor> backprop_gradients(const ModelGraph& model,
                                                 const CalibrationSet& batch) {
  auto g = compute_gradients(model, batch);
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    out.emplace(model.layer(i).name, Tensor::from_matrix(g.weight[i]));
  }
  return out;
}

}  // namespace cfprune
