// SPDX-License-Identifier: Apache-2.0
#include "aag/metrics.hpp"

#include <iostream>
#include <sstream>

#include "aag/binary_io.hpp"
#include "aag/errors.hpp"

namespace aag {

namespace {

void check_inputs(const Tensor& logits, std::span<const int> labels, const char* what) {
  if (logits.rows() == 0 || labels.empty()) throw UsageError(std::string(what) + ": empty evaluation set");
  if (labels.size() != logits.rows()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for logits " +
                         logits.shape_string());
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
      throw DataError(std::string(what) + ": sample " + std::to_string(i) + " has label " +
                      std::to_string(labels[i]) + " outside [0, " + std::to_string(logits.cols()) + ")");
    }
  }
}

std::size_t clamp_k(std::size_t k, std::size_t classes) {
  if (k == 0) throw UsageError("top-k: k must be at least 1");
  if (k > classes) {
    std::cerr << "warning: k = " << k << " exceeds the number of classes (" << classes << "), clamping\n";
    return classes;
  }
  return k;
}

}  // namespace

bool in_top_k(std::span<const double> row, int label, std::size_t k) {
  // The label's rank is the number of classes ordered before it.
  const double target = row[static_cast<std::size_t>(label)];
  std::size_t ahead = 0;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (row[c] > target || (row[c] == target && c < static_cast<std::size_t>(label))) ++ahead;
  }
  return ahead < k;
}

double top_k_accuracy(const Tensor& logits, std::span<const int> labels, std::size_t k) {
  check_inputs(logits, labels, "top_k_accuracy");
  k = clamp_k(k, logits.cols());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += in_top_k(logits.row(i), labels[i], k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassRecall class_mean_top5_recall(const Tensor& logits, std::span<const int> labels) {
  check_inputs(logits, labels, "class_mean_top5_recall");
  const std::size_t k = std::min<std::size_t>(5, logits.cols());
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // class -> (hits, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hits, total] = counts[labels[i]];
    ++total;
    if (in_top_k(logits.row(i), labels[i], k)) ++hits;
  }
  ClassRecall out;
  double sum = 0.0;
  for (const auto& [cls, c] : counts) {
    const double recall = static_cast<double>(c.first) / static_cast<double>(c.second);
    out.per_class[cls] = recall;
    sum += recall;
  }
  out.mean = sum / static_cast<double>(counts.size());
  return out;
}

MetricsReport compute_metrics(const Tensor& logits, std::span<const int> labels) {
  MetricsReport r;
  r.top1 = top_k_accuracy(logits, labels, 1);
  r.top5 = top_k_accuracy(logits, labels, std::min<std::size_t>(5, logits.cols()));
  ClassRecall recall = class_mean_top5_recall(logits, labels);
  r.class_mean_top5_recall = recall.mean;
  r.per_class_recall = std::move(recall.per_class);
  r.n_samples = labels.size();
  r.n_classes_present = r.per_class_recall.size();
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, v] : r.per_class_recall) per_class[std::to_string(cls)] = v;
  return nlohmann::json{{"top1", r.top1},
                        {"top5", r.top5},
                        {"class_mean_top5_recall", r.class_mean_top5_recall},
                        {"per_class_recall", per_class},
                        {"n_samples", r.n_samples},
                        {"n_classes_present", r.n_classes_present}};
}

std::string to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n";
  os << "top1," << r.top1 << '\n';
  os << "top5," << r.top5 << '\n';
  os << "class_mean_top5_recall," << r.class_mean_top5_recall << '\n';
  os << "n_samples," << r.n_samples << '\n';
  for (const auto& [cls, v] : r.per_class_recall) os << "recall_class_" << cls << ',' << v << '\n';
  return os.str();
}

void emit_report(const MetricsReport& r, ReportFormat format, const std::filesystem::path& path) {
  const std::string text = format == ReportFormat::json ? to_json(r).dump(2) + "\n" : to_csv(r);
  write_file_atomic(path, text);
}

}  // namespace aag
