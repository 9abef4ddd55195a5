// SPDX-License-Identifier: Apache-2.0
#include "aag/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "aag/errors.hpp"

namespace aag {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (patience < 1) fail("patience must be at least 1");
  if (!(min_delta >= 0.0)) fail("min_delta must be non-negative");
  if (batch_size < 1) fail("batch_size must be at least 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"lr", c.lr},
                        {"weight_decay", c.weight_decay},
                        {"beta1", c.beta1},
                        {"beta2", c.beta2},
                        {"adam_eps", c.adam_eps},
                        {"max_epochs", c.max_epochs},
                        {"patience", c.patience},
                        {"min_delta", c.min_delta},
                        {"batch_size", c.batch_size},
                        {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  auto number = [&](const std::string& key) {
    if (!j.at(key).is_number()) throw ConfigError("train config key '" + key + "' must be a number");
    return j.at(key).get<double>();
  };
  auto count = [&](const std::string& key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError("train config key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "lr") c.lr = number(key);
    else if (key == "weight_decay") c.weight_decay = number(key);
    else if (key == "beta1") c.beta1 = number(key);
    else if (key == "beta2") c.beta2 = number(key);
    else if (key == "adam_eps") c.adam_eps = number(key);
    else if (key == "max_epochs") c.max_epochs = static_cast<std::uint32_t>(count(key));
    else if (key == "patience") c.patience = static_cast<std::uint32_t>(count(key));
    else if (key == "min_delta") c.min_delta = number(key);
    else if (key == "batch_size") c.batch_size = static_cast<std::uint32_t>(count(key));
    else if (key == "seed") c.seed = count(key);
    else throw ConfigError("unknown train config key '" + key + "'");
  }
  return c;
}

void adamw_step(std::span<Parameter* const> params, OptimizerState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw UsageError("adamw_step: optimizer state does not match parameters");
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) throw NumericalError("adamw_step: non-finite gradient in parameter '" + p->name + "'");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->value.data();
    auto g = params[i]->grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      double value = theta[k] - cfg.lr * cfg.weight_decay * theta[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      value -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
      theta[k] = quantize(value);
    }
  }
}

EarlyStopping::EarlyStopping(std::uint32_t patience, double min_delta)
    : patience_(patience), min_delta_(min_delta) {
  if (patience < 1) throw ConfigError("early stopping: patience must be at least 1");
}

bool EarlyStopping::update(double value) {
  ++epochs_;
  if (value > best_ + min_delta_) {
    best_ = value;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

nlohmann::json to_json(const EpochLog& log) {
  return nlohmann::json{{"epoch", log.epoch},           {"train_loss", log.train_loss},
                        {"val_top1", log.val_top1},     {"val_top5", log.val_top5},
                        {"improved", log.improved},     {"elapsed_ms", log.elapsed_ms}};
}

MetricsReport evaluate(const AagModel& model, const Dataset& data, const ClassTextTable& table, unsigned threads) {
  const Tensor logits = model.predict_logits(data.records, table, threads);
  std::vector<int> labels;
  labels.reserve(data.records.size());
  for (const auto& rec : data.records) labels.push_back(rec.label);
  return compute_metrics(logits, labels);
}

Var batch_loss(Tape& tape, const AagModel& model, std::span<const EmbeddingRecord* const> batch,
               const ClassTextTable& table) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const EmbeddingRecord* rec : batch) labels.push_back(rec->label);
  return cross_entropy(model.forward_batch(tape, batch, table), labels);
}

FitResult fit(AagModel& model, const Dataset& train, const Dataset& val, const ClassTextTable& table,
              const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  if (train.records.empty()) throw UsageError("fit: empty training split");
  if (val.records.empty() && !options.evaluator) throw UsageError("fit: empty validation split");

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  OptimizerState state;
  EarlyStopping stopper(cfg.patience, cfg.min_delta);
  FitResult result;
  std::vector<Tensor> best = model.snapshot();

  std::vector<std::size_t> order(train.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const EmbeddingRecord*> batch;

  for (std::uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train.records[order[i]]);
      model.zero_grad();
      Tape tape(model.config().dropout > 0.0 ? &dropout_rng : nullptr);
      Var loss = batch_loss(tape, model, batch, table);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) throw NumericalError("fit: non-finite loss in epoch " + std::to_string(epoch));
      tape.backward(loss);
      adamw_step(model.parameters(), state, cfg);
      loss_sum += value * static_cast<double>(batch.size());
    }

    const MetricsReport metrics =
        options.evaluator ? options.evaluator(model, epoch) : evaluate(model, val, table, options.eval_threads);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.val_top1 = metrics.top1;
    log.val_top5 = metrics.top5;
    log.improved = stopper.update(metrics.top1);
    log.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (log.improved) {
      best = model.snapshot();
      result.best_metrics = metrics;
      result.best_epoch = epoch;
    }
    result.history.push_back(log);
    result.epochs_run = epoch;
    if (options.on_epoch) options.on_epoch(log);
    if (stopper.should_stop()) break;
  }
  model.restore(best);
  return result;
}

}  // namespace aag
