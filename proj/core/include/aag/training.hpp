// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "aag/metrics.hpp"
#include "aag/model.hpp"

namespace aag {

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint32_t max_epochs = 100;
  std::uint32_t patience = 10;
  double min_delta = 0.001;
  std::uint32_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// AdamW moments, one pair per registry entry.
struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

/// One decoupled-weight-decay Adam update. Moments are allocated on first
/// use. Gradients are read, never cleared.
void adamw_step(std::span<Parameter* const> params, OptimizerState& state, const TrainConfig& cfg);

/// Tracks the best monitored value. An epoch improves iff value > best + min_delta.
class EarlyStopping {
 public:
  EarlyStopping(std::uint32_t patience, double min_delta);

  /// Records one epoch; returns whether it improved.
  bool update(double value);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::uint32_t best_epoch() const { return best_epoch_; }
  std::uint32_t epochs_seen() const { return epochs_; }

 private:
  std::uint32_t patience_;
  double min_delta_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::uint32_t best_epoch_ = 0;
  std::uint32_t stale_ = 0;
  std::uint32_t epochs_ = 0;
};

struct EpochLog {
  std::uint32_t epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double val_top5 = 0.0;
  bool improved = false;
  double elapsed_ms = 0.0;
};

nlohmann::json to_json(const EpochLog& log);

struct FitOptions {
  /// Called after every epoch (e.g. to append to a JSON-lines log).
  std::function<void(const EpochLog&)> on_epoch;
  /// Replaces validation; receives the model and the 1-based epoch.
  std::function<MetricsReport(const AagModel&, std::uint32_t)> evaluator;
  unsigned eval_threads = 1;
};

struct FitResult {
  std::vector<EpochLog> history;
  std::uint32_t best_epoch = 0;
  std::uint32_t epochs_run = 0;
  MetricsReport best_metrics;
};

MetricsReport evaluate(const AagModel& model, const Dataset& data, const ClassTextTable& table,
                       unsigned threads = 1);

/// Mean cross-entropy of one mini-batch, recorded on `tape`.
Var batch_loss(Tape& tape, const AagModel& model, std::span<const EmbeddingRecord* const> batch,
               const ClassTextTable& table);

/// Seeded shuffling, mini-batch AdamW and early stopping on validation top-1.
/// On return the model holds the parameters of the best epoch.
FitResult fit(AagModel& model, const Dataset& train, const Dataset& val, const ClassTextTable& table,
              const TrainConfig& cfg, const FitOptions& options = {});

}  // namespace aag
