#include "cfprune/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "cfprune/error.hpp"
#include "cfprune/rng.hpp"

namespace cfprune {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kSyntheticRegression:
      return "synthetic_regression";
    case TaskKind::kSyntheticClassification:
      return "synthetic_classification";
    case TaskKind::kCharLm:
      return "char_lm";
    case TaskKind::kTwoTowerFusion:
      return "two_tower_fusion";
  }
  return "synthetic_regression";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "synthetic_regression") return TaskKind::kSyntheticRegression;
  if (s == "synthetic_classification") return TaskKind::kSyntheticClassification;
  if (s == "char_lm") return TaskKind::kCharLm;
  if (s == "two_tower_fusion") return TaskKind::kTwoTowerFusion;
  throw InputError("unknown task kind '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kCalibration:
      return "calibration";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "calibration" || s == "calib") return Split::kCalibration;
  throw InputError("unknown split '" + std::string(s) + "'");
}

TaskSpec TaskSpec::defaults(TaskKind kind) {
  TaskSpec t;
  t.kind = kind;
  switch (kind) {
    case TaskKind::kSyntheticRegression:
      t.input_dim = 8;
      t.hidden_dim = 16;
      t.output_dim = 4;
      t.train_count = 1024;
      t.val_count = 256;
      t.epochs = 40;
      t.learning_rate = 1e-2;
      t.quality_floor = 1e-2;
      break;
    case TaskKind::kSyntheticClassification:
      t.input_dim = 8;
      t.hidden_dim = 32;
      t.output_dim = 2;
      t.train_count = 1024;
      t.val_count = 512;
      t.epochs = 20;
      t.learning_rate = 5e-3;
      t.quality_floor = 0.95;
      break;
    case TaskKind::kCharLm:
      t.context = 4;
      t.input_dim = 48;  // embedding width
      t.hidden_dim = 128;
      t.output_dim = 28;
      t.rows_per_sample = 16;
      t.train_count = 1536;
      t.val_count = 256;
      t.epochs = 12;
      t.batch_size = 16;
      t.learning_rate = 3e-3;
      t.quality_floor = 0.45;
      break;
    case TaskKind::kTwoTowerFusion:
      t.input_dim = 16;
      t.hidden_dim = 64;
      t.output_dim = 8;
      t.train_count = 8192;
      t.val_count = 512;
      t.epochs = 15;
      t.learning_rate = 2e-3;
      t.quality_floor = 0.85;
      break;
  }
  return t;
}

namespace {

constexpr std::size_t kVocab = 28;

const std::vector<std::string>& nouns() {
  static const std::vector<std::string> w = {
      "cat",   "dog",   "bird",  "fish",  "child", "farmer", "teacher", "river", "tree",  "house",
      "garden", "stone", "city", "king",  "queen", "ship",   "horse",   "baker", "lamp",  "road"};
  return w;
}

const std::vector<std::string>& verbs() {
  static const std::vector<std::string> w = {"sees",  "likes", "finds", "holds", "makes", "takes",
                                             "keeps", "builds", "paints", "follows", "carries", "wants"};
  return w;
}

const std::vector<std::string>& adjectives() {
  static const std::vector<std::string> w = {"small", "big",   "red",   "green", "old",
                                             "young", "quiet", "bright", "tired", "happy"};
  return w;
}

std::size_t char_id(char c) {
  if (c >= 'a' && c <= 'z') return static_cast<std::size_t>(c - 'a');
  if (c == ' ') return 26;
  return 27;  // '.'
}

std::string generate_text(Rng& rng, std::size_t min_length) {
  std::string text;
  auto noun_phrase = [&] {
    std::string s = "the ";
    if (rng.uniform() < 0.5) s += adjectives()[rng.index(adjectives().size())] + " ";
    s += nouns()[rng.index(nouns().size())];
    return s;
  };
  while (text.size() < min_length) {
    text += noun_phrase() + " " + verbs()[rng.index(verbs().size())] + " " + noun_phrase() + ". ";
  }
  return text;
}

std::vector<Sample> char_lm_samples(const TaskSpec& task, Rng& rng, std::size_t count) {
  const std::size_t rows = task.rows_per_sample;
  const std::string text = generate_text(rng, count * rows + task.context + 1);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Tensor input({rows, task.context});
    Tensor target({rows, 1});
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t pos = s * rows + r + task.context;
      for (std::size_t c = 0; c < task.context; ++c) {
        input.at(r, c) = static_cast<double>(char_id(text[pos - task.context + c]));
      }
      target.at(r, 0) = static_cast<double>(char_id(text[pos]));
    }
    out.push_back({std::move(input), std::move(target)});
  }
  return out;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

struct DataGenerator {
  const TaskSpec& task;
  Matrix a;
  Vector mean;

  explicit DataGenerator(const TaskSpec& t) : task(t) {
    Rng rng(splitmix64(t.seed ^ 0x7461736bULL));
    switch (t.kind) {
      case TaskKind::kSyntheticRegression:
        a = random_matrix(rng, t.output_dim, t.input_dim, 1.0 / std::sqrt(static_cast<double>(t.input_dim)));
        break;
      case TaskKind::kSyntheticClassification: {
        Vector u(static_cast<Eigen::Index>(t.input_dim));
        for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = rng.normal();
        // Class means at +-2u/|u|: Bayes accuracy Phi(2) ~ 0.977.
        mean = 2.0 * u / u.norm();
        break;
      }
      case TaskKind::kTwoTowerFusion:
        a = random_matrix(rng, t.output_dim, t.input_dim, 1.0 / std::sqrt(static_cast<double>(t.input_dim)));
        break;
      case TaskKind::kCharLm:
        break;
    }
  }

  Sample draw(Rng& rng) const {
    switch (task.kind) {
      case TaskKind::kSyntheticRegression: {
        Tensor x({1, task.input_dim});
        for (double& v : x.data()) v = rng.normal();
        Matrix y = x.matrix() * a.transpose();
        for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += 0.01 * rng.normal();
        return {std::move(x), Tensor::from_matrix(y)};
      }
      case TaskKind::kSyntheticClassification: {
        const std::size_t label = rng.index(2);
        Tensor x({1, task.input_dim});
        for (std::size_t i = 0; i < task.input_dim; ++i) {
          x[i] = rng.normal() + (label == 1 ? 1.0 : -1.0) * mean(static_cast<Eigen::Index>(i));
        }
        return {std::move(x), Tensor({1, 1}, {static_cast<double>(label)})};
      }
      case TaskKind::kTwoTowerFusion: {
        Tensor x({1, task.input_dim});
        for (double& v : x.data()) v = rng.normal();
        const Matrix logits = x.matrix() * a.transpose();
        Eigen::Index label = 0;
        logits.row(0).maxCoeff(&label);
        return {std::move(x), Tensor({1, 1}, {static_cast<double>(label)})};
      }
      case TaskKind::kCharLm:
        break;
    }
    throw InputError("char_lm samples are generated from text");
  }
};

}  // namespace

TaskData generate_task_data(const TaskSpec& task) {
  if (task.train_count == 0 || task.val_count == 0) throw InputError("task splits must be nonempty");
  TaskData data;
  Rng train_rng(splitmix64(task.seed ^ 0x747261696eULL));
  Rng val_rng(splitmix64(task.seed ^ 0x76616cULL));
  if (task.kind == TaskKind::kCharLm) {
    if (task.output_dim != kVocab) throw InputError("char_lm vocabulary must be 28");
    data.train = char_lm_samples(task, train_rng, task.train_count);
    data.val = char_lm_samples(task, val_rng, task.val_count);
    return data;
  }
  const DataGenerator gen(task);
  for (std::size_t i = 0; i < task.train_count; ++i) data.train.push_back(gen.draw(train_rng));
  for (std::size_t i = 0; i < task.val_count; ++i) data.val.push_back(gen.draw(val_rng));
  return data;
}

CalibrationSet calibration_split(const TaskSpec&, const TaskData& data, std::size_t count,
                                 std::uint64_t seed) {
  if (count == 0 || count > data.train.size()) {
    throw InputError("calibration count " + std::to_string(count) + " outside [1, " +
                     std::to_string(data.train.size()) + "]");
  }
  std::vector<std::size_t> idx(data.train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(splitmix64(seed ^ 0x63616c6962ULL));
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  CalibrationSet set;
  for (std::size_t i = 0; i < count; ++i) set.samples.push_back(data.train[idx[i]]);
  return set;
}

CalibrationSet split_samples(const TaskSpec& task, const TaskData& data, Split split, std::uint64_t seed) {
  switch (split) {
    case Split::kTrain:
      return CalibrationSet{data.train};
    case Split::kVal:
      return CalibrationSet{data.val};
    case Split::kCalibration:
      return calibration_split(task, data, task.calib_count, seed);
  }
  return {};
}

namespace {

LayerSpec make_layer(Rng& rng, std::string name, std::size_t d_out, std::size_t d_in, Activation act,
                     double gain, bool bias = true) {
  LayerSpec l;
  l.name = std::move(name);
  l.activation = act;
  l.weight = Tensor::from_matrix(random_matrix(rng, d_out, d_in, gain / std::sqrt(static_cast<double>(d_in))));
  if (bias) l.bias = Tensor({d_out});
  return l;
}

}  // namespace

ModelGraph build_model(const TaskSpec& task) {
  Rng rng(splitmix64(task.seed ^ 0x6d6f64656cULL));
  const double relu_gain = std::sqrt(2.0);
  const auto h = task.hidden_dim;
  switch (task.kind) {
    case TaskKind::kSyntheticRegression:
      return ModelGraph({{"encoder", {make_layer(rng, "dense0", h, task.input_dim, Activation::kIdentity, 1.0)}},
                         {"decoder", {make_layer(rng, "dense1", task.output_dim, h, Activation::kIdentity, 1.0)}}},
                        LossKind::kMse);
    case TaskKind::kSyntheticClassification:
      return ModelGraph(
          {{"mlp.0", {make_layer(rng, "fc0", h, task.input_dim, Activation::kRelu, relu_gain)}},
           {"mlp.1", {make_layer(rng, "fc1", h, h, Activation::kRelu, relu_gain)}},
           {"head", {make_layer(rng, "out", task.output_dim, h, Activation::kIdentity, 1.0)}}},
          LossKind::kCrossEntropy);
    case TaskKind::kCharLm: {
      const auto e = task.input_dim;
      LayerSpec embed = make_layer(rng, "tok_embed", e, task.context * task.output_dim, Activation::kIdentity,
                                   std::sqrt(static_cast<double>(task.context)), false);
      embed.kind = LayerKind::kEmbedding;
      embed.input_slots = task.context;
      std::vector<Block> blocks;
      blocks.push_back({"embed", {std::move(embed)}});
      for (int b = 0; b < 2; ++b) {
        const auto p = "block" + std::to_string(b);
        blocks.push_back({"block." + std::to_string(b),
                          {make_layer(rng, p + ".up", h, e, Activation::kGelu, relu_gain),
                           make_layer(rng, p + ".down", e, h, Activation::kGelu, relu_gain)}});
      }
      blocks.push_back({"head", {make_layer(rng, "lm_head", task.output_dim, e, Activation::kIdentity, 1.0)}});
      return ModelGraph(std::move(blocks), LossKind::kNextTokenCrossEntropy);
    }
    case TaskKind::kTwoTowerFusion: {
      // Every tower layer starts at std sqrt(2 / hidden), so tower_scale is the magnitude ratio.
      auto tower = [&](std::string name, std::size_t d_out, std::size_t d_in, Activation act, double scale) {
        return make_layer(rng, std::move(name), d_out, d_in, act,
                          scale * relu_gain * std::sqrt(static_cast<double>(d_in) / static_cast<double>(h)));
      };
      std::vector<Block> blocks;
      blocks.push_back({"vision.0", {tower("v0.fc", h, task.input_dim, Activation::kRelu, task.tower_scale)}});
      blocks.push_back({"vision.1", {tower("v1.fc", h, h, Activation::kRelu, task.tower_scale)}});
      LayerSpec adapter = make_layer(rng, "fusion.adapter", h / 2, h, Activation::kIdentity, 1.0);
      adapter.frozen = true;
      blocks.push_back({"fusion", {std::move(adapter)}});
      for (int b = 0; b < 2; ++b) {
        const auto p = "l" + std::to_string(b);
        const auto d_in = b == 0 ? h / 2 : h;
        blocks.push_back({"language." + std::to_string(b),
                          {tower(p + ".up", 2 * h, d_in, Activation::kRelu, 1.0),
                           tower(p + ".down", h, 2 * h, Activation::kRelu, 1.0)}});
      }
      blocks.push_back({"language.head", {tower("lm.out", task.output_dim, h, Activation::kIdentity, 1.0)}});
      return ModelGraph(std::move(blocks), LossKind::kCrossEntropy);
    }
  }
  throw InputError("unsupported task");
}

TrainedModel train_reference(const TaskSpec& task) {
  const auto data = generate_task_data(task);
  ModelGraph model = build_model(task);
  const std::size_t n_layers = model.layer_count();

  std::vector<Matrix> m_w(n_layers), v_w(n_layers);
  std::vector<Vector> m_b(n_layers), v_b(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& l = model.layer(i);
    m_w[i] = v_w[i] = Matrix::Zero(static_cast<Eigen::Index>(l.d_out()), static_cast<Eigen::Index>(l.d_in()));
    if (l.bias) m_b[i] = v_b[i] = Vector::Zero(static_cast<Eigen::Index>(l.d_out()));
  }
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double adam_eps = 1e-8;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(splitmix64(task.seed ^ 0x747261696e696e67ULL));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < task.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    // Cosine decay keeps the final weights settled.
    const double lr = task.learning_rate * 0.5 *
                      (1.0 + std::cos(3.141592653589793 * static_cast<double>(epoch) /
                                      static_cast<double>(task.epochs)));
    for (std::size_t start = 0; start < order.size(); start += task.batch_size) {
      CalibrationSet batch;
      for (std::size_t k = start; k < std::min(order.size(), start + task.batch_size); ++k) {
        batch.samples.push_back(data.train[order[k]]);
      }
      const auto g = compute_gradients(model, batch);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < n_layers; ++i) {
        auto& layer = model.mutable_layer(i);
        m_w[i] = beta1 * m_w[i] + (1.0 - beta1) * g.weight[i];
        v_w[i] = beta2 * v_w[i] + (1.0 - beta2) * g.weight[i].cwiseAbs2();
        layer.weight.matrix() -=
            (lr * (m_w[i] / c1).array() / ((v_w[i] / c2).array().sqrt() + adam_eps)).matrix();
        if (layer.bias) {
          m_b[i] = beta1 * m_b[i] + (1.0 - beta1) * g.bias[i];
          v_b[i] = beta2 * v_b[i] + (1.0 - beta2) * g.bias[i].cwiseAbs2();
          const Vector upd = lr * (m_b[i] / c1).array() / ((v_b[i] / c2).array().sqrt() + adam_eps);
          auto b = layer.bias->matrix();
          b.row(0) -= upd.transpose();
        }
      }
    }
  }
  model.round_to_storage_precision();

  TrainedModel out{std::move(model), 0.0};
  const auto val = evaluate_samples(out.model, CalibrationSet{data.val});
  if (task.kind == TaskKind::kSyntheticRegression) {
    out.val_metric = val.loss;
    if (!(val.loss <= task.quality_floor)) {
      throw Error("fixture", "validation mse " + std::to_string(val.loss) + " above the task ceiling " +
                                 std::to_string(task.quality_floor),
                  ExitCode::kData);
    }
  } else {
    out.val_metric = val.accuracy.value_or(0.0);
    if (!(out.val_metric >= task.quality_floor)) {
      throw Error("fixture", "validation accuracy " + std::to_string(out.val_metric) +
                                 " below the task floor " + std::to_string(task.quality_floor),
                  ExitCode::kData);
    }
  }
  return out;
}

void rescale_layer_output(ModelGraph& model, std::string_view name, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw InputError("rescale factor must be positive");
  const std::size_t i = model.layer_index(name);
  if (i + 1 >= model.layer_count()) throw InputError("layer '" + std::string(name) + "' has no successor");
  auto& layer = model.mutable_layer(i);
  if (layer.activation == Activation::kGelu) {
    throw InputError("rescaling through gelu would change the model function");
  }
  for (double& v : layer.weight.data()) v *= factor;
  if (layer.bias) {
    for (double& v : layer.bias->data()) v *= factor;
  }
  for (double& v : model.mutable_layer(i + 1).weight.data()) v /= factor;
}

EvalResult evaluate_samples(const ModelGraph& model, const CalibrationSet& samples, const PruneMask* masks) {
  if (samples.empty()) throw InputError("evaluation split is empty");
  EvalResult r;
  r.sample_count = samples.size();
  Matrix x = encode_batch(model, samples);
  for (const auto& layer : model.layers()) x = apply_layer(layer, x);
  const Matrix targets = stack_targets(samples);
  r.loss = loss_value(model.head(), x, targets, row_weights(samples));
  if (!std::isfinite(r.loss)) throw NumericalError("evaluation loss is not finite");
  if (model.head() != LossKind::kMse) {
    const auto weights = row_weights(samples);
    double correct = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index arg = 0;
      x.row(i).maxCoeff(&arg);
      if (static_cast<double>(arg) == targets(i, 0)) correct += weights[static_cast<std::size_t>(i)];
    }
    r.accuracy = correct;
  }
  if (model.head() == LossKind::kNextTokenCrossEntropy) r.perplexity = std::exp(r.loss);

  std::size_t pruned = 0;
  std::size_t total = 0;
  for (auto i : model.prunable_layers()) {
    const auto& l = model.layer(i);
    std::size_t zeros = 0;
    const LayerMask* m = masks ? masks->find(l.name) : nullptr;
    if (m) {
      zeros = m->pruned();
    } else {
      zeros = static_cast<std::size_t>(
          std::count(l.weight.data().begin(), l.weight.data().end(), 0.0));
    }
    r.layer_sparsity.emplace_back(l.name, static_cast<double>(zeros) / static_cast<double>(l.numel()));
    pruned += zeros;
    total += l.numel();
  }
  r.global_sparsity = total ? static_cast<double>(pruned) / static_cast<double>(total) : 0.0;
  return r;
}

EvalResult evaluate(const ModelGraph& model, const TaskSpec& task, Split split, const PruneMask* masks) {
  const auto data = generate_task_data(task);
  return evaluate_samples(model, split_samples(task, data, split, task.seed), masks);
}

void Histogram::add(double value) {
  const double v = std::abs(value);
  std::size_t bin = 0;
  if (v >= std::pow(10.0, kHistogramLowExp)) {
    const double pos = (std::log10(v) - kHistogramLowExp) / (kHistogramHighExp - kHistogramLowExp) *
                       static_cast<double>(kHistogramBins);
    bin = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(kHistogramBins - 1)));
  }
  ++counts[bin];
  ++total;
  mean += v;
  max = std::max(max, v);
}

void Histogram::finish() {
  if (total) mean /= static_cast<double>(total);
}

double Histogram::lower_edge(std::size_t bin) {
  if (bin == 0) return 0.0;
  return std::pow(10.0, kHistogramLowExp + (kHistogramHighExp - kHistogramLowExp) *
                                               static_cast<double>(bin) / static_cast<double>(kHistogramBins));
}

std::string module_of(std::string_view block) {
  const auto dot = block.find('.');
  return std::string(dot == std::string_view::npos ? block : block.substr(0, dot));
}

DistributionReport distribution_report(const ModelGraph& model, const CalibrationSet& batch) {
  DistributionReport report;
  const auto grads = compute_gradients(model, batch);
  const auto fwd = forward_with_activations(model, batch);

  std::vector<std::string> module_order;
  std::map<std::string, std::array<double, 3>> module_sums;  // |W| sum, |g| sum, count
  for (std::size_t b = 0; b < model.block_count(); ++b) {
    BlockDistribution dist{model.block_name(b), module_of(model.block_name(b)), {}, {}};
    bool any = false;
    for (auto i : model.block_layers(b)) {
      const auto& l = model.layer(i);
      if (l.frozen) continue;
      any = true;
      auto& sums = module_sums[dist.module];
      for (std::size_t j = 0; j < l.numel(); ++j) {
        const double w = std::abs(l.weight[j]);
        const double g = std::abs(grads.weight[i].data()[j]);
        dist.weight.add(w);
        dist.gradient.add(g);
        sums[0] += w;
        sums[1] += g;
        sums[2] += 1.0;
      }
    }
    if (!any) continue;
    dist.weight.finish();
    dist.gradient.finish();
    if (std::find(module_order.begin(), module_order.end(), dist.module) == module_order.end()) {
      module_order.push_back(dist.module);
    }
    report.blocks.push_back(std::move(dist));
  }
  for (const auto& m : module_order) {
    const auto& s = module_sums[m];
    report.modules.push_back({m, s[0] / s[2], s[1] / s[2]});
  }
  for (std::size_t a = 0; a < report.modules.size(); ++a) {
    for (std::size_t b = a + 1; b < report.modules.size(); ++b) {
      const auto& ma = report.modules[a];
      const auto& mb = report.modules[b];
      report.ratios.push_back({ma.module, mb.module,
                               mb.weight_mean > 0 ? ma.weight_mean / mb.weight_mean : 0.0,
                               mb.gradient_mean > 0 ? ma.gradient_mean / mb.gradient_mean : 0.0});
    }
  }
  for (auto i : model.prunable_layers()) {
    const auto& l = model.layer(i);
    const auto h = HessianState::from_activations(fwd.activations.at(l.name), SparseGptOptions{});
    LayerScoreDistribution d{l.name, {}};
    const auto w = l.weight.matrix();
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) d.score.add(w(r, c) * w(r, c) / h.h_inv(c, c));
    }
    d.score.finish();
    report.local_scores.push_back(std::move(d));
  }
  return report;
}

ComparisonTable compare_runs(const std::vector<std::pair<std::string, EvalResult>>& results,
                             const std::string& baseline) {
  std::set<std::string> seen;
  const EvalResult* base = nullptr;
  for (const auto& [label, r] : results) {
    if (!seen.insert(label).second) throw InputError("duplicate run label '" + label + "'");
    if (label == baseline) base = &r;
  }
  if (!base) throw InputError("baseline run '" + baseline + "' not found");
  ComparisonTable table;
  table.baseline = baseline;
  for (const auto& [label, r] : results) {
    ComparisonRow row{label, r, r.loss - base->loss, std::nullopt, std::nullopt,
                      r.global_sparsity - base->global_sparsity};
    if (r.accuracy && base->accuracy) row.accuracy_delta = *r.accuracy - *base->accuracy;
    if (r.perplexity && base->perplexity) row.perplexity_delta = *r.perplexity - *base->perplexity;
    table.rows.push_back(std::move(row));
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const ComparisonRow& a, const ComparisonRow& b) { return a.label < b.label; });
  return table;
}

}  // namespace cfprune
