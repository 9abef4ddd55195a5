// SPDX-License-Identifier: Apache-2.0
#include "aag/model_config.hpp"

#include <array>
#include <utility>

#include "aag/errors.hpp"

namespace aag {

namespace {

template <typename E, std::size_t N>
std::string name_of(E v, const std::array<std::pair<E, const char*>, N>& table) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  return "unknown";
}

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<E, const char*>, N>& table, const char* what) {
  for (const auto& [e, name] : table)
    if (s == name) return e;
  std::string allowed;
  for (const auto& [e, name] : table) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "' (expected one of: " + allowed + ")");
}

constexpr std::array<std::pair<VisualFusion, const char*>, 7> kVisual{{
    {VisualFusion::none_rgb_only, "none_rgb_only"},
    {VisualFusion::concat, "concat"},
    {VisualFusion::sum, "sum"},
    {VisualFusion::soft_attention, "soft_attention"},
    {VisualFusion::self_attention, "self_attention"},
    {VisualFusion::cross_q_rgb, "cross_q_rgb"},
    {VisualFusion::cross_q_depth, "cross_q_depth"},
}};
constexpr std::array<std::pair<HistoryStrategy, const char*>, 4> kHistory{{
    {HistoryStrategy::none, "none"},
    {HistoryStrategy::concat, "concat"},
    {HistoryStrategy::transformer, "transformer"},
    {HistoryStrategy::description, "description"},
}};
constexpr std::array<std::pair<MultimodalFusion, const char*>, 4> kMultimodal{{
    {MultimodalFusion::concat, "concat"},
    {MultimodalFusion::sum, "sum"},
    {MultimodalFusion::self_attn_three, "self_attn_three"},
    {MultimodalFusion::self_attn_vis_text, "self_attn_vis_text"},
}};
constexpr std::array<std::pair<TaskMode, const char*>, 2> kMode{{
    {TaskMode::anticipation, "anticipation"},
    {TaskMode::recognition, "recognition"},
}};
constexpr std::array<std::pair<InputMode, const char*>, 2> kInput{{
    {InputMode::frame, "frame"},
    {InputMode::video, "video"},
}};
constexpr std::array<std::pair<AttentionScale, const char*>, 2> kScale{{
    {AttentionScale::per_head, "per_head"},
    {AttentionScale::full_d, "full_d"},
}};
constexpr std::array<std::pair<Activation, const char*>, 2> kActivation{{
    {Activation::gelu, "gelu"},
    {Activation::relu, "relu"},
}};

template <typename T>
T get_number(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  } else {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
      throw ConfigError("config key '" + key + "' must be a non-negative integer");
    }
  }
  return v.get<T>();
}

std::string get_string(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

std::string to_string(VisualFusion v) { return name_of(v, kVisual); }
std::string to_string(HistoryStrategy v) { return name_of(v, kHistory); }
std::string to_string(MultimodalFusion v) { return name_of(v, kMultimodal); }
std::string to_string(TaskMode v) { return name_of(v, kMode); }
std::string to_string(InputMode v) { return name_of(v, kInput); }
std::string to_string(AttentionScale v) { return name_of(v, kScale); }
std::string to_string(Activation v) { return name_of(v, kActivation); }

VisualFusion visual_fusion_from_string(const std::string& s) { return parse_enum(s, kVisual, "visual_fusion"); }
HistoryStrategy history_strategy_from_string(const std::string& s) {
  return parse_enum(s, kHistory, "history_strategy");
}
MultimodalFusion multimodal_fusion_from_string(const std::string& s) {
  return parse_enum(s, kMultimodal, "multimodal_fusion");
}

const std::vector<VisualFusion>& visual_fusion_grid() {
  static const std::vector<VisualFusion> grid{VisualFusion::concat,         VisualFusion::sum,
                                              VisualFusion::soft_attention, VisualFusion::self_attention,
                                              VisualFusion::cross_q_depth,  VisualFusion::cross_q_rgb};
  return grid;
}

const std::vector<HistoryStrategy>& all_history_strategies() {
  static const std::vector<HistoryStrategy> all{HistoryStrategy::none, HistoryStrategy::concat,
                                                HistoryStrategy::transformer, HistoryStrategy::description};
  return all;
}

const std::vector<MultimodalFusion>& all_multimodal_fusions() {
  static const std::vector<MultimodalFusion> all{MultimodalFusion::concat, MultimodalFusion::sum,
                                                 MultimodalFusion::self_attn_three,
                                                 MultimodalFusion::self_attn_vis_text};
  return all;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d_model == 0 || d_ft == 0 || d_txt == 0) fail("d_model, d_ft and d_txt must be positive");
  if (n_classes < 1) fail("n_classes must be at least 1");
  if (fusion_layers < 1) fail("fusion_layers must be at least 1");
  if (fusion_heads < 1 || d_model % fusion_heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by fusion_heads (" +
         std::to_string(fusion_heads) + ")");
  }
  if (ffn_mult < 1) fail("ffn_mult must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
  if ((history_strategy == HistoryStrategy::concat || history_strategy == HistoryStrategy::transformer) &&
      history_len == 0) {
    fail("history_strategy " + to_string(history_strategy) + " needs history_len >= 1");
  }
  if (history_strategy == HistoryStrategy::transformer && (d_txt % fusion_heads != 0 || d_txt % 2 != 0)) {
    fail("transformer history encoding needs an even d_txt divisible by fusion_heads");
  }
  if (multimodal_fusion == MultimodalFusion::self_attn_three && visual_fusion == VisualFusion::none_rgb_only) {
    fail("self_attn_three consumes depth and cannot be combined with none_rgb_only");
  }
  if (input == InputMode::video) {
    if (window < 1) fail("window must be at least 1 in video mode");
    if (video_layers < 1) fail("video_layers must be at least 1");
    if (video_heads < 1 || d_ft % video_heads != 0 || d_ft % 2 != 0) {
      fail("video mode needs an even d_ft (" + std::to_string(d_ft) + ") divisible by video_heads (" +
           std::to_string(video_heads) + ")");
    }
  }
}

bool ModelConfig::uses_depth() const { return visual_fusion != VisualFusion::none_rgb_only; }

std::size_t ModelConfig::history_width() const {
  return history_strategy == HistoryStrategy::concat ? static_cast<std::size_t>(history_len) * d_txt : d_txt;
}

EncoderOptions ModelConfig::encoder_options() const {
  return EncoderOptions{attn_scale, activation, dropout, norm_eps};
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"d_model", c.d_model},
      {"d_ft", c.d_ft},
      {"d_txt", c.d_txt},
      {"n_classes", c.n_classes},
      {"history_len", c.history_len},
      {"fusion_layers", c.fusion_layers},
      {"fusion_heads", c.fusion_heads},
      {"video_layers", c.video_layers},
      {"video_heads", c.video_heads},
      {"window", c.window},
      {"ffn_mult", c.ffn_mult},
      {"visual_fusion", to_string(c.visual_fusion)},
      {"history_strategy", to_string(c.history_strategy)},
      {"multimodal_fusion", to_string(c.multimodal_fusion)},
      {"mode", to_string(c.mode)},
      {"input", to_string(c.input)},
      {"attn_scale", to_string(c.attn_scale)},
      {"activation", to_string(c.activation)},
      {"dropout", c.dropout},
      {"norm_eps", c.norm_eps},
      {"seed", c.seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "d_model") c.d_model = get_number<std::uint32_t>(j, key);
    else if (key == "d_ft") c.d_ft = get_number<std::uint32_t>(j, key);
    else if (key == "d_txt") c.d_txt = get_number<std::uint32_t>(j, key);
    else if (key == "n_classes") c.n_classes = get_number<std::uint32_t>(j, key);
    else if (key == "history_len") c.history_len = get_number<std::uint32_t>(j, key);
    else if (key == "fusion_layers") c.fusion_layers = get_number<std::uint32_t>(j, key);
    else if (key == "fusion_heads") c.fusion_heads = get_number<std::uint32_t>(j, key);
    else if (key == "video_layers") c.video_layers = get_number<std::uint32_t>(j, key);
    else if (key == "video_heads") c.video_heads = get_number<std::uint32_t>(j, key);
    else if (key == "window") c.window = get_number<std::uint32_t>(j, key);
    else if (key == "ffn_mult") c.ffn_mult = get_number<std::uint32_t>(j, key);
    else if (key == "visual_fusion") c.visual_fusion = parse_enum(get_string(j, key), kVisual, "visual_fusion");
    else if (key == "history_strategy") c.history_strategy = parse_enum(get_string(j, key), kHistory, "history_strategy");
    else if (key == "multimodal_fusion") c.multimodal_fusion = parse_enum(get_string(j, key), kMultimodal, "multimodal_fusion");
    else if (key == "mode") c.mode = parse_enum(get_string(j, key), kMode, "mode");
    else if (key == "input") c.input = parse_enum(get_string(j, key), kInput, "input");
    else if (key == "attn_scale") c.attn_scale = parse_enum(get_string(j, key), kScale, "attn_scale");
    else if (key == "activation") c.activation = parse_enum(get_string(j, key), kActivation, "activation");
    else if (key == "dropout") c.dropout = get_number<double>(j, key);
    else if (key == "norm_eps") c.norm_eps = get_number<double>(j, key);
    else if (key == "seed") c.seed = get_number<std::uint64_t>(j, key);
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  return c;
}

void bind_to_dataset(ModelConfig& cfg, const DatasetMeta& meta) {
  cfg.d_ft = meta.d_ft;
  cfg.d_txt = meta.d_txt;
  cfg.n_classes = meta.n_classes;
  if (cfg.input == InputMode::video) cfg.window = meta.frames;
}

void check_compatible(const ModelConfig& cfg, const DatasetMeta& meta) {
  auto mismatch = [](const char* what, std::uint32_t model, std::uint32_t data) {
    throw DataError(std::string(what) + " mismatch: model " + std::to_string(model) + ", data " +
                    std::to_string(data));
  };
  if (cfg.d_ft != meta.d_ft) mismatch("d_ft", cfg.d_ft, meta.d_ft);
  if (cfg.d_txt != meta.d_txt) mismatch("d_txt", cfg.d_txt, meta.d_txt);
  if (cfg.n_classes != meta.n_classes) mismatch("n_classes", cfg.n_classes, meta.n_classes);
  const std::uint32_t frames = cfg.input == InputMode::video ? cfg.window : 1;
  if (frames != meta.frames) mismatch("frames per sample", frames, meta.frames);
  if (meta.depth_source == DepthSource::absent && cfg.uses_depth()) {
    throw DataError("dataset has no depth (depth_source = absent) but visual_fusion " +
                    to_string(cfg.visual_fusion) + " consumes depth; use none_rgb_only");
  }
  if (cfg.history_strategy == HistoryStrategy::description && !meta.has_description) {
    throw DataError("history_strategy description needs description embeddings, the dataset has none");
  }
}

}  // namespace aag
