// SPDX-License-Identifier: Apache-2.0
#include "aag/model.hpp"

#include <algorithm>
#include <thread>

#include "aag/errors.hpp"

namespace aag {

namespace {

const EncoderStack& require(const std::optional<EncoderStack>& s, const char* what) {
  if (!s) throw ConfigError(std::string(what) + " is not part of this model's parameters");
  return *s;
}

const Linear& require(const std::optional<Linear>& l, const char* what) {
  if (!l) throw ConfigError(std::string(what) + " is not part of this model's parameters");
  return *l;
}

// Rethrows `e` as the same error category with a prefix.
template <typename Fn>
auto with_context(const std::string& context, Fn&& fn) {
  try {
    return fn();
  } catch (const DimensionError& e) {
    throw DimensionError(context + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const UsageError& e) {
    throw UsageError(context + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(context + ": " + e.what());
  }
}

}  // namespace

Var project(Var m, const Linear& w) {
  if (m.cols() != w.in_features()) {
    throw DimensionError("project: input width " + std::to_string(m.cols()) + " but " + w.weight.name +
                         " expects " + std::to_string(w.in_features()));
  }
  return linear(m, w);
}

Var fuse_visual(Var rgb, Var depth, VisualFusion strategy, const AagParameters& p, const EncoderOptions& opts,
                AttentionTrace* trace) {
  switch (strategy) {
    case VisualFusion::none_rgb_only:
      return rgb;
    case VisualFusion::sum:
      return add(rgb, depth);
    case VisualFusion::concat: {
      const Var parts[] = {rgb, depth};
      return linear(concat_cols(parts), require(p.visual_concat, "visual concat projection"));
    }
    case VisualFusion::soft_attention:
      return mul(rgb, softmax(depth, 1));
    case VisualFusion::self_attention: {
      const Var parts[] = {rgb, depth};
      return mean_rows(encoder_stack_forward(concat_rows(parts), require(p.visual_stack, "visual fusion stack"),
                                             std::nullopt, opts, trace));
    }
    case VisualFusion::cross_q_rgb:
      return encoder_stack_forward(rgb, require(p.visual_stack, "visual fusion stack"), depth, opts, trace);
    case VisualFusion::cross_q_depth:
      return encoder_stack_forward(depth, require(p.visual_stack, "visual fusion stack"), rgb, opts, trace);
  }
  throw ConfigError("fuse_visual: unknown strategy");
}

Var encode_history(Tape& tape, const HistoryEncoding& h, const ClassTextTable& table, const AagParameters& p,
                   const ModelConfig& cfg) {
  if (h.strategy != cfg.history_strategy) {
    throw UsageError("encode_history: payload built for " + to_string(h.strategy) + " but model uses " +
                     to_string(cfg.history_strategy));
  }
  const std::size_t d_txt = cfg.d_txt;
  auto check_ids = [&] {
    if (h.ids.size() != cfg.history_len) {
      throw UsageError("encode_history: " + std::to_string(h.ids.size()) + " history ids, model expects " +
                       std::to_string(cfg.history_len));
    }
    if (table.d_txt != d_txt || table.n_classes() != cfg.n_classes) {
      throw DataError("encode_history: class table is " + std::to_string(table.n_classes()) + "x" +
                      std::to_string(table.d_txt) + ", model expects " + std::to_string(cfg.n_classes) + "x" +
                      std::to_string(d_txt));
    }
    for (int id : h.ids) {
      if (id < kPadId || id >= static_cast<int>(cfg.n_classes)) {
        throw DataError("encode_history: class id " + std::to_string(id) + " outside [-1, " +
                        std::to_string(cfg.n_classes) + ")");
      }
    }
  };

  switch (h.strategy) {
    case HistoryStrategy::none:
      return tape.constant(Tensor(1, d_txt));
    case HistoryStrategy::concat: {
      check_ids();
      Tensor m(1, h.ids.size() * d_txt);
      for (std::size_t k = 0; k < h.ids.size(); ++k) {
        if (h.ids[k] == kPadId) continue;
        auto row = table.rows.row(static_cast<std::size_t>(h.ids[k]));
        std::copy(row.begin(), row.end(), m.data().begin() + static_cast<std::ptrdiff_t>(k * d_txt));
      }
      return tape.constant(std::move(m));
    }
    case HistoryStrategy::transformer: {
      check_ids();
      Tensor tokens = sinusoidal_pe(h.ids.size(), d_txt);
      for (std::size_t k = 0; k < h.ids.size(); ++k) {
        if (h.ids[k] == kPadId) continue;
        auto row = table.rows.row(static_cast<std::size_t>(h.ids[k]));
        for (std::size_t j = 0; j < d_txt; ++j) tokens(k, j) += row[j];
      }
      Var seq = tape.constant(std::move(tokens));
      return mean_rows(encoder_stack_forward(seq, require(p.history_stack, "history transformer"), std::nullopt,
                                             cfg.encoder_options()));
    }
    case HistoryStrategy::description: {
      if (!h.description) throw UsageError("encode_history: description strategy without a description payload");
      if (h.description->size() != d_txt) {
        throw DimensionError("encode_history: description width " + std::to_string(h.description->size()) +
                             ", expected " + std::to_string(d_txt));
      }
      return tape.constant(Tensor(1, d_txt, std::vector<double>(h.description->data().begin(),
                                                                h.description->data().end())));
    }
  }
  throw ConfigError("encode_history: unknown strategy");
}

Var fuse_multimodal(const MultimodalInputs& in, MultimodalFusion strategy, const AagParameters& p,
                    const EncoderOptions& opts, AttentionTrace* trace) {
  switch (strategy) {
    case MultimodalFusion::self_attn_vis_text: {
      const Var tokens[] = {in.visual, in.text};
      return mean_rows(encoder_stack_forward(concat_rows(tokens), require(p.multimodal_stack, "multimodal stack"),
                                             std::nullopt, opts, trace));
    }
    case MultimodalFusion::self_attn_three: {
      const Var tokens[] = {in.rgb, in.depth, in.text};
      return mean_rows(encoder_stack_forward(concat_rows(tokens), require(p.multimodal_stack, "multimodal stack"),
                                             std::nullopt, opts, trace));
    }
    case MultimodalFusion::concat: {
      const Var parts[] = {in.visual, in.text};
      return linear(concat_cols(parts), require(p.multimodal_concat, "multimodal concat projection"));
    }
    case MultimodalFusion::sum:
      return add(in.visual, in.text);
  }
  throw ConfigError("fuse_multimodal: unknown strategy");
}

Var classify(Var pooled, const Linear& classifier) { return project(pooled, classifier); }

Var temporal_aggregate(Var frames, const EncoderStack& stack, const Parameter& cls, const EncoderOptions& opts) {
  if (frames.rows() == 0) throw DataError("temporal_aggregate: empty frame window");
  Var positioned = add(frames, frames.tape().constant(sinusoidal_pe(frames.rows(), frames.cols())));
  Var out = encoder_stack_forward(prepend_cls(positioned, cls), stack, std::nullopt, opts);
  return slice_rows(out, 0, 1);
}

std::vector<int> roll_history(std::vector<int> buffer, int predicted, std::size_t n) {
  buffer.push_back(predicted);
  if (buffer.size() > n) buffer.erase(buffer.begin(), buffer.end() - static_cast<std::ptrdiff_t>(n));
  return buffer;
}

AagModel::AagModel(ModelConfig cfg) : cfg_(std::move(cfg)), params_(std::make_unique<AagParameters>()) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  AagParameters& p = *params_;
  const std::size_t D = cfg_.d_model;
  const std::size_t ffn = static_cast<std::size_t>(cfg_.ffn_mult) * D;
  const bool bypass_visual = cfg_.multimodal_fusion == MultimodalFusion::self_attn_three;

  if (cfg_.input == InputMode::video) {
    const std::size_t ffn_video = static_cast<std::size_t>(cfg_.ffn_mult) * cfg_.d_ft;
    p.video_rgb = make_encoder_stack("video_rgb", cfg_.d_ft, cfg_.video_heads, cfg_.video_layers,
                                     AttentionMode::self, rng, ffn_video);
    p.video_rgb_cls = Parameter("video_rgb.cls", normal_tensor(1, cfg_.d_ft, 0.02, rng));
    if (cfg_.uses_depth()) {
      p.video_depth = make_encoder_stack("video_depth", cfg_.d_ft, cfg_.video_heads, cfg_.video_layers,
                                         AttentionMode::self, rng, ffn_video);
      p.video_depth_cls = Parameter("video_depth.cls", normal_tensor(1, cfg_.d_ft, 0.02, rng));
    }
  }

  p.proj_rgb = make_linear("proj_rgb", cfg_.d_ft, D, rng);
  if (cfg_.uses_depth()) p.proj_depth = make_linear("proj_depth", cfg_.d_ft, D, rng);

  if (!bypass_visual) {
    switch (cfg_.visual_fusion) {
      case VisualFusion::cross_q_rgb:
      case VisualFusion::cross_q_depth:
        p.visual_stack = make_encoder_stack("visual", D, cfg_.fusion_heads, cfg_.fusion_layers,
                                            AttentionMode::cross, rng, ffn);
        break;
      case VisualFusion::self_attention:
        p.visual_stack = make_encoder_stack("visual", D, cfg_.fusion_heads, cfg_.fusion_layers,
                                            AttentionMode::self, rng, ffn);
        break;
      case VisualFusion::concat:
        p.visual_concat = make_linear("visual.concat", 2 * D, D, rng);
        break;
      default:
        break;
    }
  }

  const std::string history = "history." + to_string(cfg_.history_strategy);
  if (cfg_.history_strategy == HistoryStrategy::transformer) {
    p.history_stack = make_encoder_stack(history, cfg_.d_txt, cfg_.fusion_heads, cfg_.fusion_layers,
                                         AttentionMode::self, rng, static_cast<std::size_t>(cfg_.ffn_mult) * cfg_.d_txt);
  }
  p.proj_txt = make_linear(history + ".proj", cfg_.history_width(), D, rng);

  switch (cfg_.multimodal_fusion) {
    case MultimodalFusion::self_attn_vis_text:
    case MultimodalFusion::self_attn_three:
      p.multimodal_stack = make_encoder_stack("multimodal", D, cfg_.fusion_heads, cfg_.fusion_layers,
                                              AttentionMode::self, rng, ffn);
      break;
    case MultimodalFusion::concat:
      p.multimodal_concat = make_linear("multimodal.concat", 2 * D, D, rng);
      break;
    case MultimodalFusion::sum:
      break;
  }

  p.classifier = make_linear("classifier", D, cfg_.n_classes, rng);

  if (p.video_rgb) append_parameters(*p.video_rgb, registry_);
  if (p.video_rgb_cls) registry_.push_back(&*p.video_rgb_cls);
  if (p.video_depth) append_parameters(*p.video_depth, registry_);
  if (p.video_depth_cls) registry_.push_back(&*p.video_depth_cls);
  append_parameters(p.proj_rgb, registry_);
  if (p.proj_depth) append_parameters(*p.proj_depth, registry_);
  if (p.visual_stack) append_parameters(*p.visual_stack, registry_);
  if (p.visual_concat) append_parameters(*p.visual_concat, registry_);
  if (p.history_stack) append_parameters(*p.history_stack, registry_);
  append_parameters(p.proj_txt, registry_);
  if (p.multimodal_stack) append_parameters(*p.multimodal_stack, registry_);
  if (p.multimodal_concat) append_parameters(*p.multimodal_concat, registry_);
  append_parameters(p.classifier, registry_);
}

std::vector<const Parameter*> AagModel::parameters() const {
  return std::vector<const Parameter*>(registry_.begin(), registry_.end());
}

std::size_t AagModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : registry_) n += p->value.size();
  return n;
}

void AagModel::zero_grad() {
  for (Parameter* p : registry_) p->zero_grad();
}

HistoryEncoding AagModel::history_for(const EmbeddingRecord& rec) const {
  HistoryEncoding h;
  h.strategy = cfg_.history_strategy;
  if (h.strategy == HistoryStrategy::concat || h.strategy == HistoryStrategy::transformer) {
    h.ids = fit_history(rec.history, cfg_.history_len);
  }
  if (h.strategy == HistoryStrategy::description) h.description = rec.description;
  return h;
}

Var AagModel::forward(Tape& tape, const EmbeddingRecord& rec, const ClassTextTable& table,
                      AttentionTrace* trace) const {
  return with_context("sample " + std::to_string(rec.sample_id),
                      [&] { return forward_impl(tape, rec, table, trace); });
}

Var AagModel::forward_impl(Tape& tape, const EmbeddingRecord& rec, const ClassTextTable& table,
                           AttentionTrace* trace) const {
  const AagParameters& p = *params_;
  const EncoderOptions opts = cfg_.encoder_options();
  const bool video = cfg_.input == InputMode::video;
  const std::size_t frames = video ? cfg_.window : 1;

  auto visual_input = [&](const Tensor& features, const char* which) {
    if (features.rows() != frames || features.cols() != cfg_.d_ft) {
      throw DataError(std::string(which) + " features " + features.shape_string() + ", model expects [" +
                      std::to_string(frames) + "x" + std::to_string(cfg_.d_ft) + "]");
    }
    return tape.constant(features);
  };

  Var rgb_feat = visual_input(rec.rgb, "rgb");
  if (video) rgb_feat = temporal_aggregate(rgb_feat, *p.video_rgb, *p.video_rgb_cls, opts);
  Var rgb = project(rgb_feat, p.proj_rgb);

  Var depth;
  if (cfg_.uses_depth()) {
    Var depth_feat = visual_input(rec.depth, "depth");
    if (video) depth_feat = temporal_aggregate(depth_feat, *p.video_depth, *p.video_depth_cls, opts);
    depth = project(depth_feat, *p.proj_depth);
  }

  Var text = project(encode_history(tape, history_for(rec), table, p, cfg_), p.proj_txt);

  MultimodalInputs in{Var{}, text, rgb, depth};
  if (cfg_.multimodal_fusion != MultimodalFusion::self_attn_three) {
    in.visual = fuse_visual(rgb, depth, cfg_.visual_fusion, p, opts, trace);
  }
  return classify(fuse_multimodal(in, cfg_.multimodal_fusion, p, opts, trace), p.classifier);
}

Var AagModel::forward_batch(Tape& tape, std::span<const EmbeddingRecord* const> batch,
                            const ClassTextTable& table) const {
  if (batch.empty()) throw UsageError("forward_batch: empty batch");
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (const EmbeddingRecord* rec : batch) rows.push_back(forward(tape, *rec, table));
  return rows.size() == 1 ? rows.front() : concat_rows(rows);
}

Tensor AagModel::predict_logits(std::span<const EmbeddingRecord> records, const ClassTextTable& table,
                                unsigned threads) const {
  Tensor out(records.size(), cfg_.n_classes);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Tape tape;
      Var logits = forward(tape, records[i], table);
      auto src = logits.value().data();
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(records.size())));
  if (threads <= 1) {
    work(0, records.size());
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (records.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(records.size(), begin + chunk);
      pool.emplace_back([&, t, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<Tensor> AagModel::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(registry_.size());
  for (const Parameter* p : registry_) out.push_back(p->value);
  return out;
}

void AagModel::restore(const std::vector<Tensor>& values) {
  if (values.size() != registry_.size()) throw UsageError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(registry_[i]->value)) {
      throw DimensionError("restore: shape mismatch for " + registry_[i]->name);
    }
    registry_[i]->value = values[i];
  }
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<int> anticipate_with_predicted_history(const AagModel& anticipator, const AagModel& recognizer,
                                                   std::span<const EmbeddingRecord> stream,
                                                   const ClassTextTable& table) {
  const std::size_t n = anticipator.config().history_len;
  std::vector<int> buffer;
  std::vector<int> anticipated;
  anticipated.reserve(stream.size());
  for (const EmbeddingRecord& rec : stream) {
    EmbeddingRecord current = rec;
    current.history = fit_history(buffer, n);
    Tape tape;
    anticipated.push_back(argmax_rows(anticipator.forward(tape, current, table).value()).front());
    Tape rtape;
    const int recognized = argmax_rows(recognizer.forward(rtape, current, table).value()).front();
    buffer = roll_history(std::move(buffer), recognized, n);
  }
  return anticipated;
}

}  // namespace aag
