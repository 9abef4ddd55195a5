// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "aag/attention.hpp"
#include "aag/dataset.hpp"
#include "aag/model_config.hpp"

namespace aag {

/// Every learnable tensor of the model. Optional members exist only for the
/// strategies selected in the config.
struct AagParameters {
  std::optional<EncoderStack> video_rgb;
  std::optional<Parameter> video_rgb_cls;
  std::optional<EncoderStack> video_depth;
  std::optional<Parameter> video_depth_cls;

  Linear proj_rgb;
  std::optional<Linear> proj_depth;

  std::optional<EncoderStack> visual_stack;   // cross_q_*, self_attention
  std::optional<Linear> visual_concat;        // concat: 2D -> D

  std::optional<EncoderStack> history_stack;  // transformer history encoding
  Linear proj_txt;

  std::optional<EncoderStack> multimodal_stack;  // self_attn_*
  std::optional<Linear> multimodal_concat;       // concat: 2D -> D

  Linear classifier;
};

/// Source of m_txt for one sample.
struct HistoryEncoding {
  HistoryStrategy strategy = HistoryStrategy::none;
  std::vector<int> ids;               // concat / transformer; pad = kPadId
  std::optional<Tensor> description;  // description strategy, 1 x d_txt
};

/// Affine projection into the model width.
Var project(Var m, const Linear& w);

/// Combines projected RGB and depth rows (1 x D each) into m_vis (1 x D).
Var fuse_visual(Var rgb, Var depth, VisualFusion strategy, const AagParameters& p, const EncoderOptions& opts,
                AttentionTrace* trace = nullptr);

/// Unprojected history vector: 1 x (N * d_txt) for concat, 1 x d_txt otherwise.
Var encode_history(Tape& tape, const HistoryEncoding& h, const ClassTextTable& table, const AagParameters& p,
                   const ModelConfig& cfg);

struct MultimodalInputs {
  Var visual;  // m_vis, 1 x D (unused by self_attn_three)
  Var text;    // projected m_txt, 1 x D
  Var rgb;     // projected RGB, 1 x D (self_attn_three only)
  Var depth;   // projected depth, 1 x D (self_attn_three only)
};

/// Joint visual/text fusion followed by mean pooling over tokens -> 1 x D.
Var fuse_multimodal(const MultimodalInputs& in, MultimodalFusion strategy, const AagParameters& p,
                    const EncoderOptions& opts, AttentionTrace* trace = nullptr);

Var classify(Var pooled, const Linear& classifier);

/// Adds sinusoidal positions to a w x d_ft window, prepends CLS, runs the
/// stack and returns the CLS output row (1 x d_ft).
Var temporal_aggregate(Var frames, const EncoderStack& stack, const Parameter& cls, const EncoderOptions& opts);

/// Appends `predicted` and keeps the most recent `n` ids.
std::vector<int> roll_history(std::vector<int> buffer, int predicted, std::size_t n);

class AagModel {
 public:
  /// Validates the config and initializes parameters from `cfg.seed`.
  explicit AagModel(ModelConfig cfg);

  AagModel(const AagModel&) = delete;
  AagModel& operator=(const AagModel&) = delete;
  AagModel(AagModel&&) = default;
  AagModel& operator=(AagModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const AagParameters& params() const { return *params_; }
  AagParameters& params() { return *params_; }

  /// Registry in a fixed order shared by the optimizer, checkpoints and the
  /// gradient checker.
  std::span<Parameter* const> parameters() { return registry_; }
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  HistoryEncoding history_for(const EmbeddingRecord& rec) const;

  /// Logits for one record (1 x n_classes). Stage errors are rethrown with the
  /// sample id attached.
  Var forward(Tape& tape, const EmbeddingRecord& rec, const ClassTextTable& table,
              AttentionTrace* trace = nullptr) const;
  /// Stacked logits (B x n_classes).
  Var forward_batch(Tape& tape, std::span<const EmbeddingRecord* const> batch, const ClassTextTable& table) const;

  /// Inference over a dataset; fans out over at most `threads` workers.
  Tensor predict_logits(std::span<const EmbeddingRecord> records, const ClassTextTable& table,
                        unsigned threads = 1) const;

  /// Copies of every parameter value, in registry order.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  Var forward_impl(Tape& tape, const EmbeddingRecord& rec, const ClassTextTable& table,
                   AttentionTrace* trace) const;

  ModelConfig cfg_;
  std::unique_ptr<AagParameters> params_;
  std::vector<Parameter*> registry_;
};

/// Streams records in temporal order, anticipating with `anticipator` while a
/// recognizer fills the history buffer with its own predictions. Returns the
/// anticipated class per record.
std::vector<int> anticipate_with_predicted_history(const AagModel& anticipator, const AagModel& recognizer,
                                                   std::span<const EmbeddingRecord> stream,
                                                   const ClassTextTable& table);

/// Row-wise argmax with ties broken by the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

inline constexpr std::uint16_t kAagmVersion = 1;

/// AAGM: "AAGM", u16 version, u32 config length + UTF-8 JSON, u32 parameter
/// count, then per parameter u16 name length + name, u32 rank, rank x u32
/// dims and little-endian f32 values.
std::vector<std::uint8_t> encode_checkpoint(const AagModel& model);
void save_checkpoint(const AagModel& model, const std::filesystem::path& path);
AagModel decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& source);
AagModel load_checkpoint(const std::filesystem::path& path);

}  // namespace aag
