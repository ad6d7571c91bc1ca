// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "cfprune/allocation.hpp"
#include "cfprune/baselines.hpp"
#include "cfprune/error.hpp"
#include "cfprune/eval.hpp"
#include "cfprune/io.hpp"
#include "cfprune/local_prune.hpp"
#include "cfprune/pipeline.hpp"
#include "cfprune/serialize.hpp"
#include "cfprune/zo_grad.hpp"
#include "test_util.hpp"

using namespace cfprune;
using namespace cfprune::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

ModelGraph chain(const std::vector<std::size_t>& dims, std::mt19937_64& gen,
                 Activation act = Activation::kRelu) {
  return random_mlp(dims, gen, act);
}

ScoreMap layer_scores(const ModelGraph& model, const std::vector<double>& s) {
  ScoreMap m;
  for (std::size_t i = 0; i < s.size(); ++i) m.entries.push_back({model.layer(i).name, s[i]});
  return m;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1
Outcome allocation_exactness() {
  std::mt19937_64 gen(1001);
  std::uniform_int_distribution<std::size_t> dim(2, 24), depth(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t feasible = 0, infeasible = 0, bad = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::size_t> dims(depth(gen) + 1);
    for (auto& d : dims) d = dim(gen);
    const auto model = chain(dims, gen);
    std::vector<double> s(model.layer_count());
    for (auto& v : s) v = std::exp(8.0 * u(gen) - 4.0);
    const double p = 0.98 * u(gen);
    const double p_max = p + (1.0 - p) * (0.02 + 0.98 * u(gen));
    std::size_t forced = 0;
    for (const auto& l : model.layers()) forced += min_keep(l.numel(), p_max);
    const std::size_t budget = keep_budget(p, model.prunable_parameter_count());
    try {
      const auto plan = allocate_sparsity(layer_scores(model, s), model, p, p_max,
                                          t % 2 ? Granularity::kBlock : Granularity::kLayer);
      ++feasible;
      std::size_t sum = 0;
      bool ok = plan.n_select == budget && forced <= budget;
      for (const auto& l : plan.layers) {
        sum += l.keep;
        ok = ok && l.sparsity <= p_max && l.keep <= l.size;
      }
      bad += !(ok && sum == budget);
    } catch (const FeasibilityError&) {
      ++infeasible;
      bad += forced <= budget;  // only a genuinely infeasible cap may be refused
    }
  }
  std::mt19937_64 g2(1);
  const auto m = chain({10, 10, 10}, g2);
  const auto a = allocate_sparsity(layer_scores(m, {3, 1}), m, 0.5, 1.0, Granularity::kLayer);
  const auto b = allocate_sparsity(layer_scores(m, {3, 1}), m, 0.5, 0.6, Granularity::kLayer);
  const bool worked = a.layers[0].keep == 75 && a.layers[1].keep == 25 && b.layers[0].keep == 55 &&
                      b.layers[1].keep == 45 && a.layers[0].sparsity == 0.25 && b.layers[1].sparsity == 0.55;
  std::ostringstream d;
  d << feasible << " exact, " << infeasible << " correctly refused, " << bad << " violations; worked examples "
    << (worked ? "75/25 and 55/45 match" : "MISMATCH");
  return {bad == 0 && worked, d.str()};
}

// ---- 2
Outcome scale_invariance() {
  std::mt19937_64 gen(2002);
  std::uniform_int_distribution<std::size_t> dim(2, 16), depth(2, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> dims(depth(gen) + 1);
    for (auto& d : dims) d = dim(gen);
    const auto model = chain(dims, gen);
    std::vector<double> s(model.layer_count());
    for (auto& v : s) v = std::exp(6.0 * u(gen) - 3.0);
    const double p = 0.9 * u(gen);
    const double p_max = std::min(1.0, p + 0.1 + 0.5 * u(gen));
    const auto g = t % 2 ? Granularity::kBlock : Granularity::kLayer;
    std::optional<SparsityPlan> base;
    for (double c : {1.0, 1e-6, 1e6}) {
      auto sc = s;
      for (auto& v : sc) v *= c;
      try {
        const auto plan = allocate_sparsity(layer_scores(model, sc), model, p, p_max, g);
        if (!base) base = plan;
        else mismatches += !(plan == *base);
      } catch (const FeasibilityError&) {
        mismatches += base.has_value();
      }
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 200 scaled plans differ from c = 1"};
}

// ---- 3
std::vector<double> per_sample_gradient_norms(const ModelGraph& model, const CalibrationSet& batch) {
  std::vector<double> norms(model.layer_count(), 0.0);
  for (const auto& s : batch.samples) {
    const auto g = backprop_gradients(model, CalibrationSet{{s}});
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
      double sq = 0.0;
      for (double v : g.at(model.layer(i).name).values()) sq += v * v;
      norms[i] += std::sqrt(sq) / static_cast<double>(batch.size());
    }
  }
  return norms;
}

Outcome zo_fidelity() {
  // Central differences are exact on a quadratic loss, so each paired estimate is |<G, z>|.
  std::mt19937_64 gen(3003);
  auto lin = random_mlp({8, 4}, gen, Activation::kIdentity);
  const auto batch = random_regression_batch(1, 2, 8, 4, gen);
  double g2 = 0.0;
  const auto lin_grads = backprop_gradients(lin, batch);
  for (double v : lin_grads.at("L0").values()) g2 += v * v;
  const double expected = std::sqrt(2.0 / std::numbers::pi) * std::sqrt(g2);
  const double got = zo_layer_score(lin, "L0", batch, ZoConfig{1e-3, 10000, 3});
  const double rel = std::abs(got / expected - 1.0);

  double rho = 0.0;
  const int models = 10;
  for (int m = 0; m < models; ++m) {
    auto mlp = random_mlp({4, 6, 5, 3}, gen, Activation::kGelu);
    const auto b = random_regression_batch(8, 1, 4, 3, gen);
    const auto zo = zo_all_scores(mlp, b, ZoConfig{1e-3, 256, static_cast<std::uint64_t>(m)});
    std::vector<double> est;
    for (const auto& e : zo.entries) est.push_back(e.score);
    rho += spearman(est, per_sample_gradient_norms(mlp, b)) / models;
  }
  return {rel <= 0.05 && rho >= 0.8,
          "half-normal mean off by " + fmt("%.4f", rel) + " (<= 0.05); mean Spearman over 10 MLPs " +
              fmt("%.3f", rho) + " (>= 0.8)"};
}

// ---- 4
Outcome seed_replay() {
  std::mt19937_64 gen(4004);
  std::uniform_int_distribution<std::size_t> dim(1, 20);
  std::uniform_real_distribution<double> eps(1e-6, 1e-1);
  int broken = 0;
  for (int t = 0; t < 100; ++t) {
    auto model = random_mlp({dim(gen), dim(gen)}, gen);
    const auto before = model;
    PerturbationReplay r(model, "L0", gen(), static_cast<std::uint64_t>(t), eps(gen));
    r.step(PerturbDirection::kPlus);
    r.step(PerturbDirection::kMinus);
    r.step(PerturbDirection::kRestore);
    broken += !(model == before);
  }
  return {broken == 0, std::to_string(100 - broken) + "/100 layers bit-identical after +, -2, + steps"};
}

// ---- 5
Outcome obs_oracle() {
  std::mt19937_64 gen(5005);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<Eigen::Index> dim(2, 8);
  double worst = 0.0;
  int top_quarter = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const Eigen::Index d = dim(gen);
    Matrix x(3 * d, d);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = n(gen);
    LayerSpec layer;
    layer.name = "row";
    std::vector<double> w(static_cast<std::size_t>(d));
    for (auto& v : w) v = n(gen);
    layer.weight = Tensor({1, static_cast<std::size_t>(d)}, w);
    const auto r = sparsegpt_prune_layer(layer, x, static_cast<std::size_t>(d - 1), SparseGptOptions{0.0, 0.0});
    const Vector w0 = layer.weight.matrix().row(0).transpose();
    const Vector y = x * w0;
    // Least-squares refit of every single-removal mask.
    std::vector<double> errors(static_cast<std::size_t>(d));
    Eigen::Index chosen = -1;
    for (Eigen::Index q = 0; q < d; ++q) {
      Matrix xs(x.rows(), d - 1);
      for (Eigen::Index j = 0, k = 0; j < d; ++j)
        if (j != q) xs.col(k++) = x.col(j);
      const Vector v = xs.colPivHouseholderQr().solve(y);
      errors[static_cast<std::size_t>(q)] = (xs * v - y).squaredNorm();
      if (!r.mask.keep[static_cast<std::size_t>(q)]) {
        chosen = q;
        for (Eigen::Index j = 0, k = 0; j < d; ++j) {
          const double refit = j == q ? 0.0 : v(k++);
          worst = std::max(worst, std::abs(refit - r.weight[static_cast<std::size_t>(j)]));
        }
      }
    }
    const double e = errors[static_cast<std::size_t>(chosen)];
    std::size_t better = 0;
    for (double o : errors) better += o < e;
    top_quarter += static_cast<double>(better + 1) <= std::ceil(0.25 * static_cast<double>(d));
  }
  return {worst <= 1e-8 && top_quarter >= static_cast<int>(std::ceil(0.95 * trials)),
          "max |OBS - refit| " + fmt("%.2e", worst) + " (<= 1e-8); best-quarter mask in " +
              std::to_string(top_quarter) + "/200 (>= 190)"};
}

// ---- 6
Outcome wanda_reduction() {
  std::mt19937_64 gen(6006);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  std::uniform_real_distribution<double> scale(0.1, 5.0);
  std::bernoulli_distribution coin;
  int equal = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t rows = dim(gen), cols = dim(gen);
    const auto layer = dense_layer("L", rows, cols, gen);
    const double a = scale(gen);
    Matrix x(7, static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = coin(gen) ? a : -a;
    std::uniform_int_distribution<std::size_t> keep_d(0, rows * cols);
    const std::size_t keep = keep_d(gen);
    const auto mask = wanda_prune_layer(layer, x, keep, {WandaGroup::kPerRow, 1});
    // Per-row magnitude oracle with the same row budgets and lower-index ties.
    std::vector<std::uint8_t> oracle(rows * cols, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t k = keep / rows + (r < keep % rows ? 1 : 0);
      std::vector<std::size_t> idx(cols);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        return std::abs(layer.weight.at(r, i)) > std::abs(layer.weight.at(r, j));
      });
      for (std::size_t i = 0; i < k; ++i) oracle[r * cols + idx[i]] = 1;
    }
    equal += mask.keep == oracle;
  }
  return {equal == 100, std::to_string(equal) + "/100 Wanda masks equal per-row magnitude masks"};
}

// ---- 7
struct FixtureRun {
  ModelGraph model;
  TaskSpec task;
  TaskData data;
};

FixtureRun load_fixture(const std::string& name) {
  const auto dir = fixtures_dir() / name;
  FixtureRun f{io::load_model(dir / "model"), task_from_json(io::read_text(dir / "task.json")), {}};
  f.data = generate_task_data(f.task);
  return f;
}

Outcome fig3_trend() {
  std::ostringstream d;
  bool pass = true;
  for (const char* name : {"char_lm", "two_tower_fusion"}) {
    const auto f = load_fixture(name);
    const CalibrationSet val{f.data.val};
    double gap[2] = {0.0, 0.0};
    int wins06 = 0;
    const double ps[2] = {0.3, 0.6};
    for (int k = 0; k < 2; ++k) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RunConfig c;
        c.sparsity = ps[k];
        c.max_sparsity = ps[k] + 0.1;
        c.seed = seed;
        const auto calib = calibration_split(f.task, f.data, c.samples, seed);
        const double eco = evaluate_samples(prune_model(f.model, calib, c).model, val).loss;
        c.coarse = CoarseMethod::kUniform;
        const double uni = evaluate_samples(prune_model(f.model, calib, c).model, val).loss;
        gap[k] += (uni - eco) / 10.0;
        if (k == 1) wins06 += eco <= uni;
      }
    }
    const bool ok = wins06 >= 7 && gap[1] > gap[0];
    pass = pass && ok;
    d << name << ": wins@0.6 " << wins06 << "/10, gap@0.3 " << fmt("%.4f", gap[0]) << ", gap@0.6 "
      << fmt("%.4f", gap[1]) << "; ";
  }
  return {pass, d.str()};
}

// ---- 8
Outcome layer_collapse() {
  std::mt19937_64 gen(8008);
  const auto model = chain({10, 10, 10, 10}, gen);
  const auto batch = random_regression_batch(8, 2, 10, 10, gen);
  const auto skewed = layer_scores(model, {1.0, 1e-9, 1.0});
  auto zeroed_layers = [&](double p_max) {
    const auto plan = allocate_sparsity(skewed, model, 0.6, p_max, Granularity::kLayer);
    const auto pruned = sequential_prune(model, plan, batch, FineMethod::kWanda).model;
    int zeroed = 0;
    for (const auto& l : pruned.layers()) {
      bool all = true;
      for (double v : l.weight.values()) all = all && v == 0.0;
      zeroed += all;
    }
    return zeroed;
  };
  const int open = zeroed_layers(1.0);
  const int capped = zeroed_layers(0.7);
  return {open >= 1 && capped == 0, "fully zeroed layers: " + std::to_string(open) + " with p_max = 1, " +
                                        std::to_string(capped) + " with p_max = p + 0.1"};
}

// ---- 9
Outcome local_score_ablation() {
  auto f = load_fixture("two_tower_fusion");
  rescale_layer_output(f.model, "l0.up", 100.0);
  const CalibrationSet val{f.data.val};
  int worse = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto calib = calibration_split(f.task, f.data, 32, seed);
    const auto local = local_score_ratios(f.model, calib, 0.5, 0.6, FineMethod::kWanda);
    const auto a = sequential_prune(f.model, local, calib, FineMethod::kWanda).model;
    const auto b = sequential_prune(f.model, uniform_plan(f.model, 0.5), calib, FineMethod::kWanda).model;
    worse += evaluate_samples(a, val).loss >= evaluate_samples(b, val).loss;
  }
  return {worse >= 7, "local-score plan loss >= uniform in " + std::to_string(worse) + "/10 seeds (l0.up x100)"};
}

// ---- 10
Outcome memory_proxy() {
  std::ostringstream d;
  bool pass = true;
  auto f = load_fixture("char_lm");
  for (std::size_t noises : {1u, 3u}) {
    const auto calib = calibration_split(f.task, f.data, 32, 0);
    ZoStats stats;
    zo_all_scores(f.model, calib, ZoConfig{1e-3, noises, 0}, &stats);
    const std::size_t layers = f.model.prunable_layers().size();
    const std::size_t expected = 2 * layers * 32 * noises;
    const bool ok = stats.peak_noise_buffers == 1 && stats.peak_noise_elements <= stats.largest_layer_elements &&
                    stats.forward_passes == expected && stats.live_noise_buffers == 0;
    pass = pass && ok;
    d << "noises=" << noises << ": peak buffers " << stats.peak_noise_buffers << ", peak elements "
      << stats.peak_noise_elements << "/" << stats.largest_layer_elements << ", forwards " << stats.forward_passes
      << " (expected " << expected << "); ";
  }
  return {pass, d.str()};
}

// ---- 11
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).string();
    if (rel == "timing.json") continue;
    const auto bytes = io::read_bytes(e.path());
    files[rel] = std::string(bytes.begin(), bytes.end());
  }
  return files;
}

Outcome determinism() {
  TempDir tmp("accept_det");
  const auto dir = fixtures_dir() / "char_lm";
  RunConfig c;
  c.model_dir = (dir / "model").string();
  c.task = (dir / "task.json").string();
  c.out_dir = (tmp.path / "run").string();
  c.sparsity = 0.5;
  c.seed = 42;
  cmd_prune(c);
  const auto first = snapshot(c.out_dir);
  fs::remove_all(c.out_dir);
  cmd_prune(c);
  const auto second = snapshot(c.out_dir);
  std::size_t differ = 0;
  for (const auto& [k, v] : first) {
    const auto it = second.find(k);
    differ += it == second.end() || it->second != v;
  }
  const bool pass = differ == 0 && first.size() == second.size() && first.count("report.json") &&
                    first.count("masks/tok_embed.mask.bin") && first.count("model/manifest.json");
  return {pass, std::to_string(first.size()) + " files compared, " + std::to_string(differ) +
                    " differ (timing.json excluded)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"allocation exactness", allocation_exactness},
      {"coarse-step scale invariance", scale_invariance},
      {"zeroth-order estimator fidelity", zo_fidelity},
      {"seed-replay round trip", seed_replay},
      {"OBS oracle equivalence", obs_oracle},
      {"Wanda reduces to magnitude", wanda_reduction},
      {"coarse-to-fine gap grows with sparsity", fig3_trend},
      {"layer collapse without cap", layer_collapse},
      {"local-score ablation direction", local_score_ablation},
      {"forward-count memory proxy", memory_proxy},
      {"end-to-end determinism", determinism},
  };
  const double limits[] = {5.0, 0, 60.0, 0, 0, 0, 600.0, 0, 0, 0, 0};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limits[i] > 0 && secs > limits[i]) {
      o.pass = false;
      o.detail += " runtime over " + fmt("%.0f", limits[i]) + " s;";
    }
    while (!o.detail.empty() && (o.detail.back() == ' ' || o.detail.back() == ';')) o.detail.pop_back();
    failed += !o.pass;
    std::printf("%s %2zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
