// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aag/tensor.hpp"

namespace aag {

/// Sentinel class id for an empty history slot.
inline constexpr int kPadId = -1;

enum class DepthSource : std::uint8_t { gt = 0, estimated = 1, absent = 2 };

std::string to_string(DepthSource s);
DepthSource depth_source_from_string(const std::string& s);

/// One sample: visual features for one frame (or a window), the action
/// history as class ids and the target label.
struct EmbeddingRecord {
  std::uint64_t sample_id = 0;
  int label = 0;
  std::vector<int> history;
  Tensor rgb;    // frames x d_ft
  Tensor depth;  // frames x d_ft
  std::optional<Tensor> description;  // 1 x d_txt

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

/// Header fields shared by every record of an AAGF file.
struct DatasetMeta {
  std::uint32_t d_ft = 0;
  std::uint32_t d_txt = 0;
  std::uint32_t n_classes = 0;
  std::uint32_t history_len = 0;
  std::uint32_t frames = 1;
  std::uint32_t delta_ms = 1000;
  DepthSource depth_source = DepthSource::estimated;
  bool has_description = false;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<EmbeddingRecord> records;
};

/// Per-class text embeddings and display names.
struct ClassTextTable {
  std::uint32_t d_txt = 0;
  Tensor rows;  // n_classes x d_txt
  std::vector<std::string> names;

  std::size_t n_classes() const { return names.size(); }
  const std::string& name(int id) const;

  friend bool operator==(const ClassTextTable&, const ClassTextTable&) = default;
};

inline constexpr std::uint16_t kAagfVersion = 1;
inline constexpr std::uint16_t kAagcVersion = 1;

/// Checks one record against the header; throws DataError naming the record.
void validate_record(const EmbeddingRecord& rec, const DatasetMeta& meta, std::size_t index);

void write_aagf(const Dataset& data, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_aagf(const Dataset& data);
Dataset read_aagf(const std::filesystem::path& path);
Dataset decode_aagf(std::vector<std::uint8_t> bytes, const std::string& source);
/// Header only; used by inspection tools.
DatasetMeta read_aagf_header(const std::filesystem::path& path, std::uint64_t* n_samples = nullptr);

void write_class_table(const ClassTextTable& table, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_aagc(const ClassTextTable& table);
ClassTextTable load_class_table(const std::filesystem::path& path);
ClassTextTable decode_aagc(std::vector<std::uint8_t> bytes, const std::string& source);
/// Loads and cross-checks n_classes and d_txt against a dataset header.
ClassTextTable load_class_table(const std::filesystem::path& path, const DatasetMeta& expected);
void validate_against(const ClassTextTable& table, const DatasetMeta& meta);

/// Adapts a history to length `n`: keeps the most recent `n` ids and
/// left-pads shorter lists with kPadId.
std::vector<int> fit_history(const std::vector<int>& history, std::size_t n);

enum class LabelRule { history_determined, rgb_cluster_determined, mixed };

std::string to_string(LabelRule r);
LabelRule label_rule_from_string(const std::string& s);

struct SyntheticSpec {
  std::uint32_t n_classes = 5;
  std::uint32_t d_ft = 16;
  std::uint32_t d_txt = 16;
  std::uint32_t history_len = 3;
  std::uint32_t n_samples = 500;
  std::uint32_t frames = 1;
  LabelRule label_rule = LabelRule::history_determined;
  double noise_sigma = 0.0;
  bool with_description = true;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Dataset train;
  Dataset val;
  ClassTextTable table;
};

void validate(const SyntheticSpec& spec);

/// Deterministic desk-scale dataset.
///
/// - history_determined: label = perm(last history id); visual features are noise.
/// - rgb_cluster_determined: label = index of the Gaussian blob the RGB vector
///   was drawn from (sigma = noise_sigma); history is uniform noise.
/// - mixed: label = (perm(last history id) + rgb cluster) mod n_classes.
///
/// Class-table rows are distinct random unit vectors. Descriptions, when
/// enabled, are recency-weighted sums of the history's class rows. Records are
/// split 80/20 into train/val after a seeded shuffle.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace aag
