// SPDX-License-Identifier: Apache-2.0
#include "aag/binary_io.hpp"
#include "aag/errors.hpp"
#include "aag/model.hpp"

namespace aag {

namespace {

constexpr std::string_view kMagic = "AAGM";

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const AagModel& model) {
  ByteWriter w;
  w.raw(kMagic);
  w.u16(kAagmVersion);
  const std::string config = to_json(model.config()).dump();
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.raw(config);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.u16(static_cast<std::uint16_t>(p->name.size()));
    w.raw(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t dim : p->value.shape()) w.u32(static_cast<std::uint32_t>(dim));
    for (double v : p->value.data()) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

void save_checkpoint(const AagModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(model));
}

AagModel decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  const std::string magic = r.raw(4);
  if (magic != kMagic) throw FormatError(source + ": bad magic '" + magic + "', expected AAGM");
  const std::uint16_t version = r.u16();
  if (version != kAagmVersion) {
    throw FormatError(source + ": unsupported AAGM version " + std::to_string(version));
  }
  const std::uint32_t config_len = r.u32();
  const std::string config_text = r.raw(config_len);
  nlohmann::json config_json;
  try {
    config_json = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(source + ": embedded config is not valid JSON: " + e.what());
  }
  AagModel model(model_config_from_json(config_json));
  const std::uint32_t count = r.u32();
  auto params = model.parameters();
  if (count != params.size()) {
    throw FormatError(source + ": " + std::to_string(count) + " parameters stored, config implies " +
                      std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const std::size_t at = r.offset();
    const std::string name = r.raw(r.u16());
    if (name != p->name) {
      throw FormatError(source + ": expected parameter '" + p->name + "' at byte offset " + std::to_string(at) +
                        ", found '" + name + "'");
    }
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) dim = r.u32();
    if (shape != p->value.shape()) {
      throw FormatError(source + ": parameter '" + name + "' has stored shape that differs from the config");
    }
    for (double& v : p->value.data()) v = r.f32();
    if (!p->value.all_finite()) throw FormatError(source + ": parameter '" + name + "' is not finite");
  }
  if (r.remaining() != 0) {
    throw FormatError(source + ": " + std::to_string(r.remaining()) + " trailing bytes at byte offset " +
                      std::to_string(r.offset()));
  }
  return model;
}

AagModel load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace aag
