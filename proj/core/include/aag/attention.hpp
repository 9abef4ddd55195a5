// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aag/layers.hpp"

namespace aag {

/// Divisor inside the attention softmax: sqrt(D / H) or sqrt(D).
enum class AttentionScale { per_head, full_d };
enum class Activation { gelu, relu };
enum class AttentionMode { self, cross };

struct EncoderOptions {
  AttentionScale scale = AttentionScale::per_head;
  Activation activation = Activation::gelu;
  double dropout = 0.0;
  double norm_eps = 1e-5;
};

/// Query/key/value/output projections, all D x D, split across `n_heads`.
struct MHAParams {
  Parameter w_q;
  Parameter w_k;
  Parameter w_v;
  Parameter w_o;
  std::size_t n_heads = 1;

  std::size_t width() const { return w_q.value.rows(); }
};

/// Pre-norm transformer layer: x + MHA(norm1(x), kv), then + FFN(norm2(.)).
struct EncoderLayer {
  MHAParams mha;
  Linear ffn_in;
  Linear ffn_out;
  LayerNormParams norm1;
  LayerNormParams norm2;
};

struct EncoderStack {
  std::vector<EncoderLayer> layers;
  AttentionMode mode = AttentionMode::self;

  std::size_t width() const { return layers.empty() ? 0 : layers.front().mha.width(); }
};

/// Collects every per-head attention map (Lq x Lkv) in evaluation order.
struct AttentionTrace {
  std::vector<Tensor> maps;
};

MHAParams make_mha(const std::string& name, std::size_t d, std::size_t heads, Rng& rng);
EncoderLayer make_encoder_layer(const std::string& name, std::size_t d, std::size_t heads,
                                std::size_t ffn_width, Rng& rng);
/// FFN hidden width defaults to 4 * d.
EncoderStack make_encoder_stack(const std::string& name, std::size_t d, std::size_t heads,
                                std::size_t n_layers, AttentionMode mode, Rng& rng,
                                std::size_t ffn_width = 0);

void append_parameters(MHAParams& mha, std::vector<Parameter*>& out);
void append_parameters(EncoderLayer& layer, std::vector<Parameter*>& out);
void append_parameters(EncoderStack& stack, std::vector<Parameter*>& out);

/// Queries from `q_in`, keys and values from `kv_in`; heads concatenated and
/// projected by W_O. Self-attention passes the same value twice.
Var multi_head_attention(Var q_in, Var kv_in, const MHAParams& p, AttentionScale scale,
                         AttentionTrace* trace = nullptr);

/// `kv` selects cross-attention; without it the layer attends to itself.
Var encoder_layer_forward(Var x, const EncoderLayer& layer, std::optional<Var> kv,
                          const EncoderOptions& opts, AttentionTrace* trace = nullptr);

/// Runs every layer. A cross-mode stack requires `kv` and feeds it to each layer.
Var encoder_stack_forward(Var x, const EncoderStack& stack, std::optional<Var> kv,
                          const EncoderOptions& opts, AttentionTrace* trace = nullptr);

/// PE[pos, 2i] = sin(pos / 10000^(2i/D)), PE[pos, 2i+1] = cos(same).
Tensor sinusoidal_pe(std::size_t length, std::size_t d);

/// Row 0 becomes the CLS vector; `seq` follows unchanged.
Var prepend_cls(Var seq, const Parameter& cls);

/// Binary dump: u32 map count, then per map u32 rows, u32 cols and
/// rows*cols little-endian f32 values.
void write_attention_maps(const std::filesystem::path& path, const AttentionTrace& trace);
AttentionTrace read_attention_maps(const std::filesystem::path& path);

}  // namespace aag
