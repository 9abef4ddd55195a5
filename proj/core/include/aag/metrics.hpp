// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <json.hpp>

#include "aag/tensor.hpp"

namespace aag {

struct MetricsReport {
  double top1 = 0.0;
  double top5 = 0.0;
  double class_mean_top5_recall = 0.0;
  std::map<int, double> per_class_recall;
  std::size_t n_samples = 0;
  std::size_t n_classes_present = 0;
};

/// True iff `label` is among the k highest logits of `row`; ties are broken
/// by ascending class index. `k` must already be clamped to the row width.
bool in_top_k(std::span<const double> row, int label, std::size_t k);

/// Fraction of rows whose label is among the k highest logits. k > C is
/// clamped to C with a warning on stderr.
double top_k_accuracy(const Tensor& logits, std::span<const int> labels, std::size_t k);

struct ClassRecall {
  double mean = 0.0;
  std::map<int, double> per_class;
};

/// Top-5 recall per class present in `labels`, averaged without weights.
ClassRecall class_mean_top5_recall(const Tensor& logits, std::span<const int> labels);

MetricsReport compute_metrics(const Tensor& logits, std::span<const int> labels);

enum class ReportFormat { json, csv };

nlohmann::json to_json(const MetricsReport& r);
/// `metric,value` header, then top1, top5, class_mean_top5_recall, n_samples
/// and one `recall_class_<id>` row per present class.
std::string to_csv(const MetricsReport& r);
void emit_report(const MetricsReport& r, ReportFormat format, const std::filesystem::path& path);

}  // namespace aag
