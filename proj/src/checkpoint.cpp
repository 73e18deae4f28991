// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fabricnet/data_io.hpp"

namespace fabricnet {

namespace {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

constexpr std::size_t kMaxRank = 8;
const std::string kAdamM = "adam.m/";
const std::string kAdamV = "adam.v/";
const std::string kAdamStep = "adam.step";

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  template <typename T>
  void values(std::span<const T> data) {
    for (T v : data) {
      if constexpr (sizeof(T) == 4) {
        u32(std::bit_cast<std::uint32_t>(v));
      } else {
        u64(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  std::size_t size() const { return bytes_.size(); }
  void patch_u64(std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    const auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) malformed("record runs past the end of the header");
    const auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }

  [[noreturn]] static void malformed(const std::string& what) {
    throw CheckpointError(CheckpointError::Kind::kMalformed, "malformed checkpoint: " + what);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

template <typename T>
BasicTensor<T> decode_values(std::span<const std::uint8_t> bytes, Shape shape) {
  std::vector<T> values(bytes.size() / sizeof(T));
  Reader r(bytes);
  for (T& v : values) {
    if constexpr (sizeof(T) == 4) {
      v = std::bit_cast<T>(r.u32());
    } else {
      v = std::bit_cast<T>(r.u64());
    }
  }
  return BasicTensor<T>(std::move(shape), std::move(values));
}

}  // namespace

const Shape& CheckpointArray::shape() const {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, data);
}

const CheckpointArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::optional<std::string> Checkpoint::meta(std::string_view key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.raw(kCheckpointMagic);
  w.u32(checkpoint.version);
  const std::size_t length_at = w.size();
  w.u64(0);  // total length, patched below
  w.str(checkpoint.model_config);
  w.u32(static_cast<std::uint32_t>(checkpoint.metadata.size()));
  for (const auto& [k, v] : checkpoint.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(checkpoint.arrays.size()));
  std::uint64_t offset = 0;
  for (const auto& a : checkpoint.arrays) {
    const bool is64 = std::holds_alternative<Tensor64>(a.data);
    const Shape& shape = a.shape();
    const std::uint64_t nbytes = shape_numel(shape) * (is64 ? 8 : 4);
    w.str(a.name);
    w.u8(static_cast<std::uint8_t>(is64 ? DType::kFloat64 : DType::kFloat32));
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) w.u64(d);
    w.u64(offset);
    w.u64(nbytes);
    offset += nbytes;
  }
  w.u64(offset);
  for (const auto& a : checkpoint.arrays) {
    std::visit([&](const auto& t) { w.values(t.data()); }, a.data);
  }
  w.patch_u64(length_at, w.size() + 4);
  const std::uint32_t crc = crc32_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  const std::size_t prefix = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    if (bytes.size() < kCheckpointMagic.size() &&
        std::memcmp(bytes.data(), kCheckpointMagic.data(), bytes.size()) == 0) {
      throw CheckpointError(CheckpointError::Kind::kTruncated, "checkpoint is truncated inside the magic");
    }
    throw CheckpointError(CheckpointError::Kind::kMagicMismatch, "not a FabricNet checkpoint (bad magic)");
  }
  if (bytes.size() < prefix) throw CheckpointError(CheckpointError::Kind::kTruncated, "checkpoint header is truncated");
  Reader head(bytes, kCheckpointMagic.size());
  Checkpoint out;
  out.version = head.u32();
  if (out.version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::kUnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(out.version));
  }
  const std::uint64_t declared = head.u64();
  if (bytes.size() < declared) {
    throw CheckpointError(CheckpointError::Kind::kTruncated, "checkpoint is truncated: " +
                                                                 std::to_string(bytes.size()) + " of " +
                                                                 std::to_string(declared) + " bytes");
  }
  if (bytes.size() > declared || declared < prefix + 4) {
    throw CheckpointError(CheckpointError::Kind::kMalformed, "checkpoint length field does not match the file");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes, bytes.size() - 4);
  if (crc32_of(body) != tail.u32()) throw CheckpointError(CheckpointError::Kind::kCrcMismatch, "checkpoint CRC mismatch");

  Reader r(body, prefix);
  out.model_config = r.str();
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    out.metadata.emplace_back(std::move(k), std::move(v));
  }
  struct EntryHeader {
    std::string name;
    DType dtype;
    Shape shape;
    std::uint64_t offset;
    std::uint64_t nbytes;
  };
  const std::uint32_t n_entries = r.u32();
  std::vector<EntryHeader> entries;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    EntryHeader e;
    e.name = r.str();
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) Reader::malformed("unknown dtype for '" + e.name + "'");
    e.dtype = static_cast<DType>(dtype);
    const std::uint8_t rank = r.u8();
    if (rank == 0 || rank > kMaxRank) Reader::malformed("bad rank for '" + e.name + "'");
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64();
      if (dim == 0 || dim > (std::uint64_t{1} << 40)) Reader::malformed("bad dimension for '" + e.name + "'");
      e.shape.push_back(dim);
    }
    e.offset = r.u64();
    e.nbytes = r.u64();
    const std::uint64_t width = e.dtype == DType::kFloat64 ? 8 : 4;
    if (e.nbytes != shape_numel(e.shape) * width) Reader::malformed("size mismatch for '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  const std::uint64_t data_len = r.u64();
  const std::size_t data_start = r.pos();
  if (data_len != body.size() - data_start) Reader::malformed("data section length mismatch");
  for (auto& e : entries) {
    if (e.offset > data_len || e.nbytes > data_len - e.offset) Reader::malformed("entry '" + e.name + "' out of range");
    const auto span = body.subspan(data_start + e.offset, e.nbytes);
    CheckpointArray a;
    a.name = std::move(e.name);
    if (e.dtype == DType::kFloat32) {
      a.data = decode_values<float>(span, std::move(e.shape));
    } else {
      a.data = decode_values<double>(span, std::move(e.shape));
    }
    out.arrays.push_back(std::move(a));
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "error writing checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw CheckpointError(CheckpointError::Kind::kIo, "error reading checkpoint '" + path.string() + "'");
  return parse_checkpoint(bytes);
}

Checkpoint make_checkpoint(const ModelGraph& model, const ModelConfig& config,
                           std::vector<std::pair<std::string, std::string>> metadata, const Adam* optimizer) {
  Checkpoint out;
  out.model_config = config.to_string();
  out.metadata = std::move(metadata);
  for (const auto& e : model.params().entries()) out.arrays.push_back(CheckpointArray{e.name, e.var->value});
  if (optimizer != nullptr) {
    out.metadata.emplace_back(kAdamStep, std::to_string(optimizer->steps()));
    for (const auto& s : optimizer->slots()) out.arrays.push_back(CheckpointArray{kAdamM + s.name, s.m});
    for (const auto& s : optimizer->slots()) out.arrays.push_back(CheckpointArray{kAdamV + s.name, s.v});
  }
  return out;
}

namespace {

const Tensor& float_array(const Checkpoint& checkpoint, const std::string& name, const Shape& expected) {
  const CheckpointArray* a = checkpoint.find(name);
  if (a == nullptr) throw CheckpointError(CheckpointError::Kind::kMalformed, "checkpoint lacks '" + name + "'");
  const Tensor* t = std::get_if<Tensor>(&a->data);
  if (t == nullptr) {
    throw CheckpointError(CheckpointError::Kind::kMalformed, "checkpoint array '" + name + "' is not 32-bit");
  }
  if (t->shape() != expected) {
    throw CheckpointError(CheckpointError::Kind::kMalformed, "checkpoint array '" + name + "' has shape " +
                                                                 shape_to_string(t->shape()) + ", model expects " +
                                                                 shape_to_string(expected));
  }
  return *t;
}

}  // namespace

void apply_checkpoint(const Checkpoint& checkpoint, ModelGraph& model, Adam* optimizer) {
  // Validate everything before touching the model.
  auto& entries = model.params().entries();
  std::vector<const Tensor*> values;
  for (const auto& e : entries) values.push_back(&float_array(checkpoint, e.name, e.var->value.shape()));
  std::vector<std::pair<const Tensor*, const Tensor*>> moments;
  std::uint64_t step = 0;
  if (optimizer != nullptr) {
    const auto s = checkpoint.meta(kAdamStep);
    if (!s) throw CheckpointError(CheckpointError::Kind::kMalformed, "checkpoint has no optimizer state");
    try {
      step = std::stoull(*s);
    } catch (const std::exception&) {
      throw CheckpointError(CheckpointError::Kind::kMalformed, "bad optimizer step '" + *s + "'");
    }
    for (const auto& slot : optimizer->slots()) {
      moments.emplace_back(&float_array(checkpoint, kAdamM + slot.name, slot.m.shape()),
                           &float_array(checkpoint, kAdamV + slot.name, slot.v.shape()));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].var->value = *values[i];
  if (optimizer != nullptr) {
    auto& slots = optimizer->slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      slots[i].m = *moments[i].first;
      slots[i].v = *moments[i].second;
    }
    optimizer->set_steps(step);
  }
}

ModelGraph model_from_checkpoint(const Checkpoint& checkpoint) {
  ModelGraph model = build_model<float>(ModelConfig::parse(checkpoint.model_config));
  apply_checkpoint(checkpoint, model);
  return model;
}

}  // namespace fabricnet
