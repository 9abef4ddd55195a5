// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "aag/attention.hpp"
#include "aag/dataset.hpp"

namespace aag {

enum class VisualFusion { none_rgb_only, concat, sum, soft_attention, self_attention, cross_q_rgb, cross_q_depth };
enum class HistoryStrategy { none, concat, transformer, description };
enum class MultimodalFusion { concat, sum, self_attn_three, self_attn_vis_text };
enum class TaskMode { anticipation, recognition };
enum class InputMode { frame, video };

std::string to_string(VisualFusion v);
std::string to_string(HistoryStrategy v);
std::string to_string(MultimodalFusion v);
std::string to_string(TaskMode v);
std::string to_string(InputMode v);
std::string to_string(AttentionScale v);
std::string to_string(Activation v);

VisualFusion visual_fusion_from_string(const std::string& s);
HistoryStrategy history_strategy_from_string(const std::string& s);
MultimodalFusion multimodal_fusion_from_string(const std::string& s);

/// The six visual fusion strategies compared in the fusion ablation
/// (excludes the RGB-only baseline).
const std::vector<VisualFusion>& visual_fusion_grid();
const std::vector<HistoryStrategy>& all_history_strategies();
const std::vector<MultimodalFusion>& all_multimodal_fusions();

struct ModelConfig {
  std::uint32_t d_model = 768;
  std::uint32_t d_ft = 768;
  std::uint32_t d_txt = 768;
  std::uint32_t n_classes = 2;
  std::uint32_t history_len = 7;
  std::uint32_t fusion_layers = 2;
  std::uint32_t fusion_heads = 4;
  std::uint32_t video_layers = 3;
  std::uint32_t video_heads = 8;
  std::uint32_t window = 16;
  std::uint32_t ffn_mult = 4;
  VisualFusion visual_fusion = VisualFusion::cross_q_rgb;
  HistoryStrategy history_strategy = HistoryStrategy::concat;
  MultimodalFusion multimodal_fusion = MultimodalFusion::self_attn_vis_text;
  TaskMode mode = TaskMode::anticipation;
  InputMode input = InputMode::frame;
  AttentionScale attn_scale = AttentionScale::per_head;
  Activation activation = Activation::gelu;
  double dropout = 0.0;
  double norm_eps = 1e-5;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Whether the model consumes the depth stream at all.
  bool uses_depth() const;
  /// Width of the unprojected history vector m_txt.
  std::size_t history_width() const;
  EncoderOptions encoder_options() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Applies the keys of `j` on top of `base`. Unknown keys and wrong types are
/// ConfigErrors.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Fills dimension fields from a dataset header and checks compatibility
/// (depth availability, description presence, frame count).
void bind_to_dataset(ModelConfig& cfg, const DatasetMeta& meta);
void check_compatible(const ModelConfig& cfg, const DatasetMeta& meta);

}  // namespace aag
