// SPDX-License-Identifier: Apache-2.0
#include "aag/attention.hpp"

#include <cmath>

#include "aag/binary_io.hpp"
#include "aag/errors.hpp"

namespace aag {

MHAParams make_mha(const std::string& name, std::size_t d, std::size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError(name + ": width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MHAParams p;
  p.w_q = Parameter(name + ".w_q", glorot_uniform(d, d, rng));
  p.w_k = Parameter(name + ".w_k", glorot_uniform(d, d, rng));
  p.w_v = Parameter(name + ".w_v", glorot_uniform(d, d, rng));
  p.w_o = Parameter(name + ".w_o", glorot_uniform(d, d, rng));
  p.n_heads = heads;
  return p;
}

EncoderLayer make_encoder_layer(const std::string& name, std::size_t d, std::size_t heads,
                                std::size_t ffn_width, Rng& rng) {
  EncoderLayer layer;
  layer.mha = make_mha(name + ".mha", d, heads, rng);
  layer.ffn_in = make_linear(name + ".ffn_in", d, ffn_width, rng);
  layer.ffn_out = make_linear(name + ".ffn_out", ffn_width, d, rng);
  layer.norm1 = make_layer_norm(name + ".norm1", d);
  layer.norm2 = make_layer_norm(name + ".norm2", d);
  return layer;
}

EncoderStack make_encoder_stack(const std::string& name, std::size_t d, std::size_t heads,
                                std::size_t n_layers, AttentionMode mode, Rng& rng,
                                std::size_t ffn_width) {
  if (n_layers == 0) throw ConfigError(name + ": an encoder stack needs at least one layer");
  if (ffn_width == 0) ffn_width = 4 * d;
  EncoderStack stack;
  stack.mode = mode;
  stack.layers.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    stack.layers.push_back(make_encoder_layer(name + ".layer" + std::to_string(i), d, heads, ffn_width, rng));
  }
  return stack;
}

void append_parameters(MHAParams& mha, std::vector<Parameter*>& out) {
  out.insert(out.end(), {&mha.w_q, &mha.w_k, &mha.w_v, &mha.w_o});
}

void append_parameters(EncoderLayer& layer, std::vector<Parameter*>& out) {
  append_parameters(layer.mha, out);
  append_parameters(layer.ffn_in, out);
  append_parameters(layer.ffn_out, out);
  append_parameters(layer.norm1, out);
  append_parameters(layer.norm2, out);
}

void append_parameters(EncoderStack& stack, std::vector<Parameter*>& out) {
  for (EncoderLayer& layer : stack.layers) append_parameters(layer, out);
}

Var multi_head_attention(Var q_in, Var kv_in, const MHAParams& p, AttentionScale scale,
                         AttentionTrace* trace) {
  const std::size_t d = p.width();
  if (q_in.cols() != d || kv_in.cols() != d) {
    throw DimensionError("multi_head_attention: expected width " + std::to_string(d) + ", got queries " +
                         q_in.value().shape_string() + " and keys/values " + kv_in.value().shape_string());
  }
  Tape& t = q_in.tape();
  const std::size_t heads = p.n_heads;
  const std::size_t head_dim = d / heads;
  const double divisor = std::sqrt(static_cast<double>(scale == AttentionScale::per_head ? head_dim : d));

  Var q = matmul(q_in, t.parameter(p.w_q));
  Var k = matmul(kv_in, t.parameter(p.w_k));
  Var v = matmul(kv_in, t.parameter(p.w_v));

  std::vector<Var> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice_cols(q, h * head_dim, head_dim);
    Var kh = heads == 1 ? k : slice_cols(k, h * head_dim, head_dim);
    Var vh = heads == 1 ? v : slice_cols(v, h * head_dim, head_dim);
    Var attn = softmax(aag::scale(matmul(qh, transpose(kh)), 1.0 / divisor), 1);
    if (trace) trace->maps.push_back(attn.value());
    outputs.push_back(matmul(attn, vh));
  }
  Var merged = heads == 1 ? outputs.front() : concat_cols(outputs);
  return matmul(merged, t.parameter(p.w_o));
}

namespace {

Var activate(Var x, Activation act) { return act == Activation::gelu ? gelu(x) : relu(x); }

}  // namespace

Var encoder_layer_forward(Var x, const EncoderLayer& layer, std::optional<Var> kv,
                          const EncoderOptions& opts, AttentionTrace* trace) {
  Tape& t = x.tape();
  Var normed = layer_norm(x, t.parameter(layer.norm1.gamma), t.parameter(layer.norm1.beta), opts.norm_eps);
  Var attended = multi_head_attention(normed, kv ? *kv : normed, layer.mha, opts.scale, trace);
  Var h = add(x, dropout(attended, opts.dropout));
  Var normed2 = layer_norm(h, t.parameter(layer.norm2.gamma), t.parameter(layer.norm2.beta), opts.norm_eps);
  Var ff = linear(activate(linear(normed2, layer.ffn_in), opts.activation), layer.ffn_out);
  return add(h, dropout(ff, opts.dropout));
}

Var encoder_stack_forward(Var x, const EncoderStack& stack, std::optional<Var> kv,
                          const EncoderOptions& opts, AttentionTrace* trace) {
  if (stack.mode == AttentionMode::cross && !kv) {
    throw UsageError("encoder_stack_forward: cross-attention stack needs a key/value input");
  }
  if (stack.mode == AttentionMode::self) kv.reset();
  for (const EncoderLayer& layer : stack.layers) x = encoder_layer_forward(x, layer, kv, opts, trace);
  return x;
}

Tensor sinusoidal_pe(std::size_t length, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ConfigError("sinusoidal_pe: width must be even and positive, got " + std::to_string(d));
  }
  Tensor pe(length, d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  pe.quantize_in_place();
  return pe;
}

Var prepend_cls(Var seq, const Parameter& cls) {
  if (cls.value.rows() != 1 || cls.value.cols() != seq.cols()) {
    throw DimensionError("prepend_cls: CLS " + cls.value.shape_string() + " does not match sequence " +
                         seq.value().shape_string());
  }
  const Var parts[] = {seq.tape().parameter(cls), seq};
  return concat_rows(parts);
}

void write_attention_maps(const std::filesystem::path& path, const AttentionTrace& trace) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(trace.maps.size()));
  for (const Tensor& m : trace.maps) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) w.f32(static_cast<float>(v));
  }
  write_file_atomic(path, w.bytes());
}

AttentionTrace read_attention_maps(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  AttentionTrace trace;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Tensor m(rows, cols);
    for (double& v : m.data()) v = r.f32();
    trace.maps.push_back(std::move(m));
  }
  return trace;
}

}  // namespace aag
