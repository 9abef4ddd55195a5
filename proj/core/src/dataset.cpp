// SPDX-License-Identifier: Apache-2.0
#include "aag/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aag/binary_io.hpp"
#include "aag/errors.hpp"

namespace aag {

namespace {

constexpr std::string_view kAagfMagic = "AAGF";
constexpr std::string_view kAagcMagic = "AAGC";
constexpr std::uint16_t kFlagDescription = 1;

std::string record_name(std::size_t index, std::uint64_t sample_id) {
  return "record " + std::to_string(index) + " (sample_id " + std::to_string(sample_id) + ")";
}

DatasetMeta read_header(ByteReader& r, std::uint64_t& n_samples) {
  const std::string magic = r.raw(4);
  if (magic != kAagfMagic) {
    throw FormatError(r.source() + ": bad magic '" + magic + "', expected AAGF");
  }
  const std::uint16_t version = r.u16();
  if (version != kAagfVersion) {
    throw FormatError(r.source() + ": unsupported AAGF version " + std::to_string(version));
  }
  const std::uint16_t flags = r.u16();
  if ((flags & ~kFlagDescription) != 0) {
    throw FormatError(r.source() + ": unknown flag bits " + std::to_string(flags));
  }
  DatasetMeta meta;
  meta.has_description = (flags & kFlagDescription) != 0;
  n_samples = r.u64();
  meta.d_ft = r.u32();
  meta.d_txt = r.u32();
  meta.n_classes = r.u32();
  meta.history_len = r.u32();
  meta.frames = r.u32();
  meta.delta_ms = r.u32();
  const std::uint8_t depth = r.u8();
  if (depth > static_cast<std::uint8_t>(DepthSource::absent)) {
    throw FormatError(r.source() + ": unknown depth source tag " + std::to_string(depth));
  }
  meta.depth_source = static_cast<DepthSource>(depth);
  r.skip(7);
  if (meta.frames == 0) throw FormatError(r.source() + ": frames must be at least 1");
  return meta;
}

}  // namespace

std::string to_string(DepthSource s) {
  switch (s) {
    case DepthSource::gt: return "gt";
    case DepthSource::estimated: return "estimated";
    case DepthSource::absent: return "absent";
  }
  return "unknown";
}

DepthSource depth_source_from_string(const std::string& s) {
  if (s == "gt") return DepthSource::gt;
  if (s == "estimated") return DepthSource::estimated;
  if (s == "absent") return DepthSource::absent;
  throw ConfigError("unknown depth source '" + s + "'");
}

const std::string& ClassTextTable::name(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names.size()) {
    throw DataError("class id " + std::to_string(id) + " outside [0, " + std::to_string(names.size()) + ")");
  }
  return names[static_cast<std::size_t>(id)];
}

void validate_record(const EmbeddingRecord& rec, const DatasetMeta& meta, std::size_t index) {
  const std::string who = record_name(index, rec.sample_id);
  if (rec.label < 0 || static_cast<std::uint32_t>(rec.label) >= meta.n_classes) {
    throw DataError(who + ": label " + std::to_string(rec.label) + " outside [0, " +
                    std::to_string(meta.n_classes) + ")");
  }
  if (rec.history.size() != meta.history_len) {
    throw DataError(who + ": history length " + std::to_string(rec.history.size()) + ", header says " +
                    std::to_string(meta.history_len));
  }
  for (int id : rec.history) {
    if (id < kPadId || id >= static_cast<int>(meta.n_classes)) {
      throw DataError(who + ": history id " + std::to_string(id) + " outside [-1, " +
                      std::to_string(meta.n_classes) + ")");
    }
  }
  for (const Tensor* t : {&rec.rgb, &rec.depth}) {
    if (t->rows() != meta.frames || t->cols() != meta.d_ft || t->rank() != 2) {
      throw DataError(who + ": visual features " + t->shape_string() + ", header expects [" +
                      std::to_string(meta.frames) + "x" + std::to_string(meta.d_ft) + "]");
    }
    if (!t->all_finite()) throw DataError(who + ": non-finite visual features");
  }
  if (meta.has_description != rec.description.has_value()) {
    throw DataError(who + (meta.has_description ? ": missing description embedding"
                                                : ": unexpected description embedding"));
  }
  if (rec.description) {
    if (rec.description->size() != meta.d_txt) {
      throw DataError(who + ": description width " + std::to_string(rec.description->size()) +
                      ", header expects " + std::to_string(meta.d_txt));
    }
    if (!rec.description->all_finite()) throw DataError(who + ": non-finite description embedding");
  }
}

std::vector<std::uint8_t> encode_aagf(const Dataset& data) {
  const DatasetMeta& m = data.meta;
  for (std::size_t i = 0; i < data.records.size(); ++i) validate_record(data.records[i], m, i);
  ByteWriter w;
  w.raw(kAagfMagic);
  w.u16(kAagfVersion);
  w.u16(m.has_description ? kFlagDescription : 0);
  w.u64(data.records.size());
  w.u32(m.d_ft);
  w.u32(m.d_txt);
  w.u32(m.n_classes);
  w.u32(m.history_len);
  w.u32(m.frames);
  w.u32(m.delta_ms);
  w.u8(static_cast<std::uint8_t>(m.depth_source));
  w.zeros(7);
  for (const EmbeddingRecord& rec : data.records) {
    w.u64(rec.sample_id);
    w.u32(static_cast<std::uint32_t>(rec.label));
    for (int id : rec.history) w.i32(id);
    for (double v : rec.rgb.data()) w.f32(static_cast<float>(v));
    for (double v : rec.depth.data()) w.f32(static_cast<float>(v));
    if (rec.description) {
      for (double v : rec.description->data()) w.f32(static_cast<float>(v));
    }
  }
  return w.bytes();
}

void write_aagf(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, encode_aagf(data));
}

Dataset decode_aagf(std::vector<std::uint8_t> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  Dataset out;
  std::uint64_t n = 0;
  out.meta = read_header(r, n);
  const DatasetMeta& m = out.meta;
  const std::uint64_t record_bytes = 8 + 4 + 4ull * m.history_len + 2ull * 4 * m.frames * m.d_ft +
                                     (m.has_description ? 4ull * m.d_txt : 0);
  if (n > r.remaining() / std::max<std::uint64_t>(record_bytes, 1)) {
    throw FormatError(source + ": header declares " + std::to_string(n) + " records but only " +
                      std::to_string(r.remaining()) + " bytes follow the header at byte offset " +
                      std::to_string(r.offset()));
  }
  out.records.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    EmbeddingRecord rec;
    rec.sample_id = r.u64();
    rec.label = static_cast<int>(r.u32());
    rec.history.resize(m.history_len);
    for (int& id : rec.history) id = r.i32();
    rec.rgb = Tensor(m.frames, m.d_ft);
    for (double& v : rec.rgb.data()) v = r.f32();
    rec.depth = Tensor(m.frames, m.d_ft);
    for (double& v : rec.depth.data()) v = r.f32();
    if (m.has_description) {
      Tensor d(1, m.d_txt);
      for (double& v : d.data()) v = r.f32();
      rec.description = std::move(d);
    }
    try {
      validate_record(rec, m, i);
    } catch (const DataError& e) {
      throw FormatError(source + ": " + e.what());
    }
    out.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw FormatError(source + ": " + std::to_string(r.remaining()) + " trailing bytes at byte offset " +
                      std::to_string(r.offset()));
  }
  return out;
}

Dataset read_aagf(const std::filesystem::path& path) {
  return decode_aagf(read_file_bytes(path), path.string());
}

DatasetMeta read_aagf_header(const std::filesystem::path& path, std::uint64_t* n_samples) {
  ByteReader r(read_file_bytes(path), path.string());
  std::uint64_t n = 0;
  DatasetMeta meta = read_header(r, n);
  if (n_samples) *n_samples = n;
  return meta;
}

std::vector<std::uint8_t> encode_aagc(const ClassTextTable& table) {
  const std::size_t n = table.names.size();
  if (table.rows.rows() != n || table.rows.cols() != table.d_txt) {
    throw DataError("class table: " + std::to_string(n) + " names but embedding rows " +
                    table.rows.shape_string() + " with d_txt " + std::to_string(table.d_txt));
  }
  if (!table.rows.all_finite()) throw DataError("class table: non-finite embedding rows");
  ByteWriter w;
  w.raw(kAagcMagic);
  w.u16(kAagcVersion);
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(table.d_txt);
  for (double v : table.rows.data()) w.f32(static_cast<float>(v));
  for (const std::string& name : table.names) {
    if (name.size() > 0xFFFF) throw DataError("class table: name longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
  }
  return w.bytes();
}

void write_class_table(const ClassTextTable& table, const std::filesystem::path& path) {
  write_file_atomic(path, encode_aagc(table));
}

ClassTextTable decode_aagc(std::vector<std::uint8_t> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  const std::string magic = r.raw(4);
  if (magic != kAagcMagic) throw FormatError(source + ": bad magic '" + magic + "', expected AAGC");
  const std::uint16_t version = r.u16();
  if (version != kAagcVersion) {
    throw FormatError(source + ": unsupported AAGC version " + std::to_string(version));
  }
  ClassTextTable table;
  const std::uint32_t n = r.u32();
  table.d_txt = r.u32();
  if (static_cast<std::uint64_t>(n) * table.d_txt > r.remaining() / 4) {
    throw FormatError(source + ": truncated embedding block at byte offset " + std::to_string(r.offset()));
  }
  table.rows = Tensor(n, table.d_txt);
  for (double& v : table.rows.data()) v = r.f32();
  if (!table.rows.all_finite()) throw FormatError(source + ": non-finite class embedding");
  table.names.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint16_t len = r.u16();
    table.names.push_back(r.raw(len));
  }
  if (r.remaining() != 0) {
    throw FormatError(source + ": " + std::to_string(r.remaining()) + " trailing bytes at byte offset " +
                      std::to_string(r.offset()));
  }
  return table;
}

ClassTextTable load_class_table(const std::filesystem::path& path) {
  return decode_aagc(read_file_bytes(path), path.string());
}

void validate_against(const ClassTextTable& table, const DatasetMeta& meta) {
  if (table.n_classes() != meta.n_classes) {
    throw DataError("class table has " + std::to_string(table.n_classes()) + " classes, dataset header has " +
                    std::to_string(meta.n_classes));
  }
  if (table.d_txt != meta.d_txt) {
    throw DataError("class table d_txt " + std::to_string(table.d_txt) + ", dataset header d_txt " +
                    std::to_string(meta.d_txt));
  }
}

ClassTextTable load_class_table(const std::filesystem::path& path, const DatasetMeta& expected) {
  ClassTextTable table = load_class_table(path);
  validate_against(table, expected);
  return table;
}

std::vector<int> fit_history(const std::vector<int>& history, std::size_t n) {
  std::vector<int> out(n, kPadId);
  const std::size_t keep = std::min(n, history.size());
  std::copy(history.end() - static_cast<std::ptrdiff_t>(keep), history.end(),
            out.end() - static_cast<std::ptrdiff_t>(keep));
  return out;
}

std::string to_string(LabelRule r) {
  switch (r) {
    case LabelRule::history_determined: return "history_determined";
    case LabelRule::rgb_cluster_determined: return "rgb_cluster_determined";
    case LabelRule::mixed: return "mixed";
  }
  return "unknown";
}

LabelRule label_rule_from_string(const std::string& s) {
  if (s == "history_determined") return LabelRule::history_determined;
  if (s == "rgb_cluster_determined") return LabelRule::rgb_cluster_determined;
  if (s == "mixed") return LabelRule::mixed;
  throw ConfigError("unknown label_rule '" + s + "'");
}

void validate(const SyntheticSpec& spec) {
  if (spec.n_classes < 1) throw ConfigError("synthetic spec: n_classes must be at least 1");
  if (spec.n_samples < spec.n_classes) {
    throw ConfigError("synthetic spec: n_samples (" + std::to_string(spec.n_samples) +
                      ") must be at least n_classes (" + std::to_string(spec.n_classes) + ")");
  }
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("synthetic spec: noise_sigma must be non-negative");
  if (spec.d_ft == 0 || spec.d_txt == 0) throw ConfigError("synthetic spec: d_ft and d_txt must be positive");
  if (spec.frames == 0) throw ConfigError("synthetic spec: frames must be at least 1");
  if (spec.history_len == 0 && spec.label_rule != LabelRule::rgb_cluster_determined) {
    throw ConfigError("synthetic spec: " + to_string(spec.label_rule) + " needs history_len >= 1");
  }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::uint32_t C = spec.n_classes;
  const std::uint32_t N = spec.history_len;
  std::uniform_int_distribution<int> any_class(0, static_cast<int>(C) - 1);

  auto quantized = [](double v) { return static_cast<double>(static_cast<float>(v)); };

  ClassTextTable table;
  table.d_txt = spec.d_txt;
  table.rows = Tensor(C, spec.d_txt);
  for (std::uint32_t c = 0; c < C; ++c) {
    auto row = table.rows.row(c);
    double norm = 0.0;
    for (double& v : row) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : row) v = quantized(v / norm);
    table.names.push_back("action_" + std::to_string(c));
  }

  std::vector<int> perm(C);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> inverse(C);
  for (std::uint32_t c = 0; c < C; ++c) inverse[static_cast<std::size_t>(perm[c])] = static_cast<int>(c);

  Tensor centroids(C, spec.d_ft);
  for (double& v : centroids.data()) v = normal(rng);

  DatasetMeta meta;
  meta.d_ft = spec.d_ft;
  meta.d_txt = spec.d_txt;
  meta.n_classes = C;
  meta.history_len = N;
  meta.frames = spec.frames;
  meta.delta_ms = 1000;
  meta.depth_source = DepthSource::estimated;
  meta.has_description = spec.with_description;

  std::vector<EmbeddingRecord> all;
  all.reserve(spec.n_samples);
  for (std::uint32_t i = 0; i < spec.n_samples; ++i) {
    EmbeddingRecord rec;
    rec.sample_id = i;
    rec.label = static_cast<int>(i % C);
    rec.history.resize(N);
    for (int& id : rec.history) id = any_class(rng);

    int cluster = -1;
    switch (spec.label_rule) {
      case LabelRule::history_determined:
        rec.history.back() = inverse[static_cast<std::size_t>(rec.label)];
        break;
      case LabelRule::rgb_cluster_determined:
        cluster = rec.label;
        break;
      case LabelRule::mixed: {
        cluster = any_class(rng);
        const int target = (rec.label - cluster + static_cast<int>(C)) % static_cast<int>(C);
        rec.history.back() = inverse[static_cast<std::size_t>(target)];
        break;
      }
    }

    rec.rgb = Tensor(spec.frames, spec.d_ft);
    for (std::uint32_t f = 0; f < spec.frames; ++f) {
      for (std::uint32_t j = 0; j < spec.d_ft; ++j) {
        const double v = cluster >= 0 ? centroids(static_cast<std::size_t>(cluster), j) + spec.noise_sigma * normal(rng)
                                      : normal(rng);
        rec.rgb(f, j) = quantized(v);
      }
    }
    rec.depth = Tensor(spec.frames, spec.d_ft);
    for (double& v : rec.depth.data()) v = quantized(normal(rng));

    if (spec.with_description) {
      Tensor desc(1, spec.d_txt);
      double weight = 1.0;
      for (std::size_t k = N; k-- > 0;) {
        const int id = rec.history[k];
        if (id != kPadId) {
          auto row = table.rows.row(static_cast<std::size_t>(id));
          for (std::uint32_t j = 0; j < spec.d_txt; ++j) desc[j] += weight * row[j];
        }
        weight *= 0.5;
      }
      for (double& v : desc.data()) v = quantized(v);
      rec.description = std::move(desc);
    }
    all.push_back(std::move(rec));
  }

  // Stratified 80/20 split: every class with at least one sample keeps one in train.
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < all.size(); ++i) by_class[static_cast<std::size_t>(all[i].label)].push_back(i);
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n_val = members.size() / 5;
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::shuffle(train_idx.begin(), train_idx.end(), rng);
  std::shuffle(val_idx.begin(), val_idx.end(), rng);

  SyntheticData out;
  out.table = std::move(table);
  out.train.meta = meta;
  out.val.meta = meta;
  for (std::size_t i : train_idx) out.train.records.push_back(all[i]);
  for (std::size_t i : val_idx) out.val.records.push_back(all[i]);
  return out;
}

}  // namespace aag
