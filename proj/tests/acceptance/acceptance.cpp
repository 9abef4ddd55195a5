// SPDX-License-Identifier: Apache-2.0
// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "aag/binary_io.hpp"
#include "aag/errors.hpp"
#include "aag/metrics.hpp"
#include "aag/training.hpp"
#include "cli.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace aag {
namespace {

namespace fs = std::filesystem;

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1 -------------------------------------------------------------------

// Fourth-order stencil: some cells have gradient entries near 1e-7, where plain
// central differences at any eps carry more roundoff than the tolerance allows.
constexpr double kFdEps = 3e-5;

double model_gradcheck(const ModelConfig& cfg, std::uint64_t data_seed) {
  PrecisionScope f64(Precision::f64);
  const auto data = test::toy_data(cfg, 3, data_seed);
  AagModel m(cfg);
  return finite_diff_check(test::model_loss(m, data.records, data.table), m.parameters(), kFdEps, FdOrder::fourth);
}

Outcome full_pipeline_gradcheck() {
  const double t0 = cpu_seconds();
  const double err = model_gradcheck(test::toy_config(), 1);
  const double secs = cpu_seconds() - t0;
  return {err < 1e-4 && secs < 60.0, "max rel err " + fmt("%.3g", err) + ", " + fmt("%.1f", secs) + " s CPU"};
}

// ---- 2 -------------------------------------------------------------------

Outcome strategy_grid_gradcheck() {
  const double t0 = cpu_seconds();
  std::size_t checked = 0, skipped = 0;
  double worst = 0;
  std::string worst_cell;
  const VisualFusion all_visual[] = {VisualFusion::none_rgb_only, VisualFusion::concat,        VisualFusion::sum,
                                     VisualFusion::soft_attention, VisualFusion::self_attention,
                                     VisualFusion::cross_q_rgb,   VisualFusion::cross_q_depth};
  for (VisualFusion v : all_visual)
    for (HistoryStrategy h : all_history_strategies())
      for (MultimodalFusion mm : all_multimodal_fusions()) {
        ModelConfig cfg = test::toy_config();
        cfg.visual_fusion = v;
        cfg.history_strategy = h;
        cfg.multimodal_fusion = mm;
        try {
          cfg.validate();
        } catch (const ConfigError&) {
          ++skipped;
          continue;
        }
        const double err = model_gradcheck(cfg, 2 + checked);
        ++checked;
        if (!(err <= worst)) {
          worst = err;
          worst_cell = to_string(v) + "/" + to_string(h) + "/" + to_string(mm);
        }
      }
  const double secs = cpu_seconds() - t0;
  return {checked > 0 && worst < 1e-4 && secs < 600.0,
          std::to_string(checked) + " combinations (" + std::to_string(skipped) + " incoherent skipped), worst " +
              fmt("%.3g", worst) + " at " + worst_cell + ", " + fmt("%.1f", secs) + " s CPU"};
}

// ---- 3 -------------------------------------------------------------------

Outcome attention_invariants() {
  std::mt19937_64 r(31);
  std::size_t stochastic_cases = 0, equivariant_cases = 0;
  double worst_sum = 0, worst_perm = 0;
  for (int c = 0; c < 120; ++c) {
    const std::size_t heads = 1 + r() % 4, d = heads * (1 + r() % 4);
    const std::size_t lq = 1 + r() % 9, lk = 1 + r() % 9;
    Rng init(r());
    const MHAParams p = make_mha("m", d, heads, init);
    const AttentionScale scale = c % 2 ? AttentionScale::full_d : AttentionScale::per_head;
    AttentionTrace trace;
    Tape tape;
    multi_head_attention(tape.constant(test::random_tensor(lq, d, r, -4, 4)),
                         tape.constant(test::random_tensor(lk, d, r, -4, 4)), p, scale, &trace);
    for (const Tensor& m : trace.maps)
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double total = 0;
        for (double v : m.row(i)) total += v;
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      }
    ++stochastic_cases;
  }
  for (int c = 0; c < 120; ++c) {
    PrecisionScope f64(Precision::f64);
    const std::size_t heads = 1 + r() % 4, d = heads * (1 + r() % 4), len = 2 + r() % 8;
    Rng init(r());
    const EncoderLayer layer = make_encoder_layer("l", d, heads, 2 * d, init);
    const Tensor x = test::random_tensor(len, d, r);
    std::vector<std::size_t> perm(len);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), r);
    Tensor px(len, d);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < d; ++j) px(i, j) = x(perm[i], j);
    Tape tape;
    const Tensor out = encoder_layer_forward(tape.constant(x), layer, std::nullopt, {}).value();
    const Tensor pout = encoder_layer_forward(tape.constant(px), layer, std::nullopt, {}).value();
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < d; ++j) worst_perm = std::max(worst_perm, std::abs(pout(i, j) - out(perm[i], j)));
    ++equivariant_cases;
  }
  return {worst_sum <= 1e-6 && worst_perm <= 1e-9,
          std::to_string(stochastic_cases) + " row-sum cases (worst |sum-1| " + fmt("%.2g", worst_sum) + "), " +
              std::to_string(equivariant_cases) + " permutation cases (worst diff " + fmt("%.2g", worst_perm) + ")"};
}

// ---- 4 -------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(41);
  std::size_t mismatches = 0;
  for (int n = 0; n < 1000; ++n) {
    const auto inst = oracle::random_instance(rng);
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, 1 + rng() % inst.logits.cols()})
      if (k <= inst.logits.cols() &&
          top_k_accuracy(inst.logits, inst.labels, k) != oracle::top_k(inst.logits, inst.labels, k))
        ++mismatches;
    if (class_mean_top5_recall(inst.logits, inst.labels).mean != oracle::class_mean_top5(inst.logits, inst.labels))
      ++mismatches;
  }
  // class 0: two top-5 hits; class 1: its label ranks last of six
  Tensor hand(3, 6, 0.0);
  hand(0, 0) = hand(1, 0) = 1.0;
  hand(2, 1) = -1.0;
  const std::vector<int> hand_labels{0, 0, 1};
  const double mean = class_mean_top5_recall(hand, hand_labels).mean;
  return {mismatches == 0 && mean == 0.5,
          "1000 instances, " + std::to_string(mismatches) + " mismatches; hand example mean " + fmt("%g", mean)};
}

// ---- 5 -------------------------------------------------------------------

SyntheticSpec desk_spec(LabelRule rule, double sigma) {
  SyntheticSpec s;
  s.n_classes = 5;
  s.n_samples = 500;
  s.d_ft = 16;
  s.d_txt = 16;
  s.history_len = 3;
  s.label_rule = rule;
  s.noise_sigma = sigma;
  return s;
}

// Desk-scale width; the full 768 is out of CPU budget.
ModelConfig desk_model(const DatasetMeta& meta) {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.fusion_heads = 4;
  cfg.fusion_layers = 2;
  bind_to_dataset(cfg, meta);
  return cfg;
}

TrainConfig desk_train() {
  TrainConfig t;
  t.lr = 1e-3;
  t.max_epochs = 100;
  return t;
}

constexpr double kClusterSigma = 1.0;

Outcome learnability() {
  const double t0 = cpu_seconds();
  const SyntheticData hist = generate_synthetic(desk_spec(LabelRule::history_determined, 0.0));
  ModelConfig a = desk_model(hist.train.meta);
  a.history_strategy = HistoryStrategy::concat;
  a.visual_fusion = VisualFusion::cross_q_rgb;
  AagModel ma(a);
  std::uint32_t hit_epoch = 0;
  double best_a = 0;
  FitOptions oa;
  oa.evaluator = [&](const AagModel& m, std::uint32_t epoch) {
    MetricsReport r = evaluate(m, hist.val, hist.table);
    if (r.top1 >= 0.99 && hit_epoch == 0) hit_epoch = epoch;
    best_a = std::max(best_a, r.top1);
    return r;
  };
  fit(ma, hist.train, hist.val, hist.table, desk_train(), oa);
  const double secs_a = cpu_seconds() - t0;

  const SyntheticData rgb = generate_synthetic(desk_spec(LabelRule::rgb_cluster_determined, kClusterSigma));
  ModelConfig b = desk_model(rgb.train.meta);
  b.history_strategy = HistoryStrategy::none;
  AagModel mb(b);
  const FitResult rb = fit(mb, rgb.train, rgb.val, rgb.table, desk_train());

  const bool pass = hit_epoch > 0 && hit_epoch <= 100 && secs_a < 300.0 && rb.best_metrics.top1 >= 0.95;
  return {pass, "history_determined: top1 " + fmt("%.3f", best_a) + " at epoch " + std::to_string(hit_epoch) + " (" +
                    fmt("%.1f", secs_a) + " s CPU); rgb_cluster sigma " + fmt("%g", kClusterSigma) +
                    " history=none: top1 " + fmt("%.3f", rb.best_metrics.top1)};
}

// ---- 6 -------------------------------------------------------------------

std::map<std::string, double> ablate_history(const SyntheticData& data, const fs::path& dir) {
  fs::create_directories(dir);
  write_aagf(data.train, dir / "train.aagf");
  write_aagf(data.val, dir / "val.aagf");
  write_class_table(data.table, dir / "classes.aagc");
  std::ofstream(dir / "cfg.json") << R"({"model":{"d_model":32,"fusion_heads":4,"fusion_layers":2},)"
                                     R"("train":{"lr":0.001,"max_epochs":100}})";
  std::ostringstream out, err;
  const int code = cli::run({"ablate", "--train", (dir / "train.aagf").string(), "--val", (dir / "val.aagf").string(),
                             "--classes", (dir / "classes.aagc").string(), "--grid", "history_source", "--config",
                             (dir / "cfg.json").string(), "--out", (dir / "grid.csv").string()},
                            out, err);
  if (code != 0) throw Error("ablate exited " + std::to_string(code) + ": " + err.str());
  std::map<std::string, double> top1;
  std::ifstream csv(dir / "grid.csv");
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    const auto comma = line.find(',');
    top1[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  return top1;
}

Outcome ablation_directionality() {
  const fs::path root = test::scratch_dir("acceptance_ablate");
  auto h = ablate_history(generate_synthetic(desk_spec(LabelRule::history_determined, 0.0)), root / "hist");
  auto c = ablate_history(generate_synthetic(desk_spec(LabelRule::rgb_cluster_determined, kClusterSigma)), root / "rgb");
  const double gap = h.at("concat") - h.at("none");
  // "reverses": history no longer leads once the label lives in RGB
  return {gap > 0.20 && c.at("none") >= c.at("concat"),
          "history_determined none " + fmt("%.2f", h.at("none")) + " vs concat " + fmt("%.2f", h.at("concat")) +
              "; rgb_cluster none " + fmt("%.2f", c.at("none")) + " vs concat " + fmt("%.2f", c.at("concat"))};
}

// ---- 7 -------------------------------------------------------------------

std::uint32_t stop_epoch(const std::function<double(std::uint32_t)>& value, std::uint32_t patience, double min_delta,
                         std::uint32_t max_epochs) {
  EarlyStopping s(patience, min_delta);
  for (std::uint32_t e = 1; e <= max_epochs; ++e) {
    s.update(value(e));
    if (s.should_stop()) return e;
  }
  return max_epochs;
}

Outcome early_stopping() {
  bool ok = true;
  std::string detail;
  const std::uint32_t improving = stop_epoch([](std::uint32_t e) { return 0.01 * e; }, 5, 0.001, 50);
  ok &= improving == 50;
  detail += "improving ran " + std::to_string(improving) + "/50";
  for (std::uint32_t p : {1u, 4u, 10u}) {
    const std::uint32_t e = stop_epoch([](std::uint32_t) { return 0.3; }, p, 0.001, 100);
    ok &= e == p + 1;
    detail += "; constant p=" + std::to_string(p) + " stopped at " + std::to_string(e);
  }
  // sits exactly min_delta above the best: not an improvement
  const std::uint32_t exact = stop_epoch([](std::uint32_t e) { return e == 1 ? 0.25 : 0.375; }, 3, 0.125, 100);
  ok &= exact == 4;
  detail += "; exactly-min_delta stopped at " + std::to_string(exact);
  return {ok, detail};
}

// ---- 8 -------------------------------------------------------------------

template <class Fn>
bool throws_format(Fn fn, const char* needle = nullptr) {
  try {
    fn();
  } catch (const FormatError& e) {
    return needle == nullptr || std::string(e.what()).find(needle) != std::string::npos;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome determinism_and_round_trips() {
  std::vector<std::string> failures;
  auto check = [&](bool ok, const char* what) {
    if (!ok) failures.emplace_back(what);
  };
  SyntheticSpec spec = desk_spec(LabelRule::mixed, 0.3);
  spec.n_samples = 100;
  const SyntheticData d1 = generate_synthetic(spec), d2 = generate_synthetic(spec);
  check(encode_aagf(d1.train) == encode_aagf(d2.train), "synthetic determinism");

  ModelConfig cfg = desk_model(d1.train.meta);
  cfg.d_model = 16;
  TrainConfig tc = desk_train();
  tc.max_epochs = 3;
  AagModel m1(cfg), m2(cfg);
  const FitResult r1 = fit(m1, d1.train, d1.val, d1.table, tc);
  const FitResult r2 = fit(m2, d2.train, d2.val, d2.table, tc);
  const auto ck = encode_checkpoint(m1);
  check(ck == encode_checkpoint(m2), "checkpoint determinism");
  check(to_json(r1.best_metrics).dump() == to_json(r2.best_metrics).dump(), "metrics determinism");

  const auto f = encode_aagf(d1.train);
  check(encode_aagf(decode_aagf(f, "mem")) == f, "AAGF round trip");
  const auto c = encode_aagc(d1.table);
  check(encode_aagc(decode_aagc(c, "mem")) == c, "AAGC round trip");
  check(encode_checkpoint(decode_checkpoint(ck, "mem")) == ck, "AAGM round trip");

  auto bad = f;
  bad[3] = 'X';
  check(throws_format([&] { decode_aagf(bad, "mem"); }, "AAGX"), "AAGF bad magic");
  bad = f;
  bad.resize(f.size() - 3);
  check(throws_format([&] { decode_aagf(bad, "mem"); }, "byte offset"), "AAGF truncation");
  bad = f;
  bad[4] = 7;
  check(throws_format([&] { decode_aagf(bad, "mem"); }), "AAGF version");
  bad = c;
  bad.resize(c.size() - 1);
  check(throws_format([&] { decode_aagc(bad, "mem"); }, "byte offset"), "AAGC truncation");
  bad = ck;
  bad[0] = 'X';
  check(throws_format([&] { decode_checkpoint(bad, "mem"); }), "AAGM bad magic");
  bad = ck;
  bad.resize(ck.size() / 2);
  check(throws_format([&] { decode_checkpoint(bad, "mem"); }, "byte offset"), "AAGM truncation");

  std::string detail = "checkpoint " + std::to_string(ck.size()) + " bytes";
  for (const auto& s : failures) detail += "; failed: " + s;
  return {failures.empty(), detail};
}

// ---- 9 -------------------------------------------------------------------

Outcome adamw_closed_forms() {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 rng(91);
  double worst = 0;
  TrainConfig cfg;
  for (int c = 0; c < 50; ++c) {
    cfg.lr = std::uniform_real_distribution<double>(1e-5, 1e-1)(rng);
    cfg.weight_decay = c % 5 == 0 ? 0.0 : std::uniform_real_distribution<double>(0, 0.1)(rng);
    Parameter p("p", test::random_tensor(2, 3, rng));
    p.grad = test::random_tensor(2, 3, rng);
    if (c % 3 == 0) p.grad.fill(0.0);  // decay-only
    const Tensor theta = p.value, g = p.grad;
    OptimizerState st;
    Parameter* ps[] = {&p};
    adamw_step(ps, st, cfg);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double want = oracle::adamw_first_step(theta[i], g[i], cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
                                                   cfg.adam_eps);
      worst = std::max(worst, std::abs(p.value[i] - want));
    }
  }
  // lr 0.1, wd 0.01, zero gradient: 1 -> 0.999
  Parameter q("q", Tensor(1, 1, 1.0));
  q.grad = Tensor(1, 1, 0.0);
  OptimizerState st;
  Parameter* qs[] = {&q};
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  adamw_step(qs, st, cfg);
  const double decay_err = std::abs(q.value[0] - 0.999);
  return {worst <= 1e-9 && decay_err <= 1e-9,
          "50 first steps, worst abs err " + fmt("%.2g", worst) + "; decay-only err " + fmt("%.2g", decay_err)};
}

// ---- 10 ------------------------------------------------------------------

Outcome video_variant() {
  ModelConfig cfg = test::toy_config();
  cfg.input = InputMode::video;
  cfg.window = 3;
  const AagModel m(cfg);
  const AagParameters& p = m.params();
  std::mt19937_64 rng(101);
  Tape t;
  const Tensor win = test::random_tensor(3, cfg.d_ft, rng);
  Tensor swapped = win;
  for (std::size_t j = 0; j < cfg.d_ft; ++j) std::swap(swapped(0, j), swapped(2, j));
  const double diff = test::max_abs_diff(temporal_aggregate(t.constant(win), *p.video_rgb, *p.video_rgb_cls, {}).value(),
                                   temporal_aggregate(t.constant(swapped), *p.video_rgb, *p.video_rgb_cls, {}).value());

  const Tensor one = test::random_tensor(1, cfg.d_ft, rng);
  const Tensor w1a = temporal_aggregate(t.constant(one), *p.video_rgb, *p.video_rgb_cls, {}).value();
  const Tensor w1b = temporal_aggregate(t.constant(one), *p.video_rgb, *p.video_rgb_cls, {}).value();
  const bool w1_ok = w1a.rows() == 1 && w1a.cols() == cfg.d_ft && w1a.all_finite() && w1a == w1b;

  const double err = model_gradcheck(cfg, 102);
  return {diff > 1e-6 && w1_ok && err < 1e-4, "swap frames 0/2 moves output by " + fmt("%.3g", diff) +
                                                  "; w=1 " + (w1_ok ? "finite and deterministic" : "BROKEN") +
                                                  "; w=3 gradcheck " + fmt("%.3g", err)};
}

}  // namespace
}  // namespace aag

int main() {
  using namespace aag;
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"full-pipeline gradient check", full_pipeline_gradcheck},
      {"strategy-grid gradient checks", strategy_grid_gradcheck},
      {"attention invariants", attention_invariants},
      {"metric oracles", metric_oracles},
      {"overfit / learnability", learnability},
      {"ablation directionality", ablation_directionality},
      {"early-stopping contract", early_stopping},
      {"determinism and round trips", determinism_and_round_trips},
      {"AdamW closed forms", adamw_closed_forms},
      {"video variant", video_variant},
  };
  int failures = 0, n = 0;
  for (const auto& [name, run] : criteria) {
    ++n;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", n - failures, n);
  return failures == 0 ? 0 : 1;
}
