// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "aag/dataset.hpp"
#include "aag/gradcheck.hpp"
#include "aag/model.hpp"
#include "aag/model_config.hpp"
#include "aag/tensor.hpp"

namespace aag::test {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = u(rng);
  t.quantize_in_place();
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Toy-width model config used by gradient checks and fast tests.
inline ModelConfig toy_config() {
  ModelConfig c;
  c.d_model = 8;
  c.d_ft = 6;
  c.d_txt = 4;
  c.n_classes = 4;
  c.history_len = 2;
  c.fusion_layers = 2;
  c.fusion_heads = 2;
  c.video_layers = 1;
  c.video_heads = 2;
  c.window = 3;
  c.ffn_mult = 2;
  c.seed = 7;
  return c;
}

/// Random records and class table matching `cfg`.
struct ToyData {
  DatasetMeta meta;
  ClassTextTable table;
  std::vector<EmbeddingRecord> records;
};

inline ToyData toy_data(const ModelConfig& cfg, std::size_t n, std::uint64_t seed, bool with_description = true) {
  std::mt19937_64 rng(seed);
  ToyData d;
  d.meta.d_ft = cfg.d_ft;
  d.meta.d_txt = cfg.d_txt;
  d.meta.n_classes = cfg.n_classes;
  d.meta.history_len = cfg.history_len;
  d.meta.frames = cfg.input == InputMode::video ? cfg.window : 1;
  d.meta.has_description = with_description;
  d.table.d_txt = cfg.d_txt;
  d.table.rows = random_tensor(cfg.n_classes, cfg.d_txt, rng, -1.0, 1.0);
  for (std::uint32_t c = 0; c < cfg.n_classes; ++c) d.table.names.push_back("class_" + std::to_string(c));
  std::uniform_int_distribution<int> cls(0, static_cast<int>(cfg.n_classes) - 1);
  for (std::size_t i = 0; i < n; ++i) {
    EmbeddingRecord r;
    r.sample_id = 100 + i;
    r.label = cls(rng);
    for (std::uint32_t h = 0; h < cfg.history_len; ++h) r.history.push_back(h == 0 && i % 3 == 0 ? kPadId : cls(rng));
    r.rgb = random_tensor(d.meta.frames, cfg.d_ft, rng, -1.0, 1.0);
    r.depth = random_tensor(d.meta.frames, cfg.d_ft, rng, -1.0, 1.0);
    if (with_description) r.description = random_tensor(1, cfg.d_txt, rng, -1.0, 1.0);
    d.records.push_back(std::move(r));
  }
  return d;
}

/// Mean cross-entropy of the model over `records`, for gradient checks.
inline LossFn model_loss(const AagModel& model, const std::vector<EmbeddingRecord>& records,
                         const ClassTextTable& table) {
  return [&model, &records, &table](Tape& tape) {
    std::vector<const EmbeddingRecord*> batch;
    std::vector<int> labels;
    for (const auto& r : records) {
      batch.push_back(&r);
      labels.push_back(r.label);
    }
    return cross_entropy(model.forward_batch(tape, batch, table), labels);
  };
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("aag_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace aag::test
