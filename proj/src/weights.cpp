#include "nst/weights.hpp"

#include <bit>
#include <limits>

#include "nst/fileio.hpp"

namespace nst {

namespace {

constexpr char kMagic[4] = {'N', 'S', 'T', 'W'};

Shape padded_shape(const std::vector<std::uint32_t>& extents) {
  Index dims[4] = {1, 1, 1, 1};
  const std::size_t offset = 4 - extents.size();
  for (std::size_t i = 0; i < extents.size(); ++i) dims[offset + i] = extents[i];
  return Shape{dims[0], dims[1], dims[2], dims[3]};
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes_[pos_++]); }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view take(std::size_t n) {
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void need(const Reader& r, std::size_t n, const std::string& what) {
  if (!r.has(n)) {
    throw FormatError(FormatError::Kind::Truncated,
                      "weight file truncated while reading " + what + ": need " +
                          std::to_string(n) + " bytes, " + std::to_string(r.remaining()) +
                          " left");
  }
}

std::string join_metadata(const WeightStore::Metadata& meta) {
  std::string out;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (i) out += '\n';
    out += meta[i].first + '=' + meta[i].second;
  }
  return out;
}

WeightStore::Metadata split_metadata(std::string_view blob) {
  WeightStore::Metadata out;
  while (!blob.empty()) {
    const auto nl = blob.find('\n');
    const std::string_view line = blob.substr(0, nl);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw FormatError(FormatError::Kind::Malformed,
                        "metadata line is not key=value: " + std::string(line));
    }
    out.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    if (nl == std::string_view::npos) break;
    blob.remove_prefix(nl + 1);
  }
  return out;
}

}  // namespace

std::string bias_entry_name(const std::string& layer) { return layer + ".bias"; }

std::optional<std::string> WeightStore::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata_)
    if (k == key) return v;
  return std::nullopt;
}

void WeightStore::set_meta(const std::string& key, std::string value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos ||
      value.find('\n') != std::string::npos) {
    throw ContractError("metadata key/value may not contain '=' in the key or newlines: " + key);
  }
  for (auto& [k, v] : metadata_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  metadata_.emplace_back(key, std::move(value));
}

const WeightEntry* WeightStore::find(const std::string& name) const {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second;
}

void WeightStore::put(const std::string& name, std::vector<std::uint32_t> extents, Tensor values) {
  if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ContractError("weight entry name must be 1..65535 bytes");
  }
  if (extents.size() > 4) {
    throw ContractError("weight entry '" + name + "' has rank " + std::to_string(extents.size()) +
                        "; at most 4 is supported");
  }
  const Shape shape = padded_shape(extents);
  if (shape.count() != values.size()) {
    throw ShapeError("weight entry '" + name + "' declares " + std::to_string(shape.count()) +
                     " values but holds " + std::to_string(values.size()));
  }
  require_finite(values, "weight entry '" + name + "'");
  entries_[name] = WeightEntry{std::move(extents),
                               std::make_shared<const Tensor>(values.reshaped(shape))};
}

void WeightStore::put_conv(const std::string& layer, Tensor kernel, Tensor bias) {
  const Shape k = kernel.shape();
  put(layer,
      {static_cast<std::uint32_t>(k.n), static_cast<std::uint32_t>(k.c),
       static_cast<std::uint32_t>(k.h), static_cast<std::uint32_t>(k.w)},
      std::move(kernel));
  const auto count = static_cast<std::uint32_t>(bias.size());
  put(bias_entry_name(layer), {count}, std::move(bias));
}

std::string serialize_weights(const WeightStore& store) {
  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kWeightFormatVersion);
  const std::string meta = join_metadata(store.metadata());
  if (meta.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ContractError("weight metadata exceeds 65535 bytes");
  }
  w.u16(static_cast<std::uint16_t>(meta.size()));
  w.bytes(meta);
  w.u32(static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& [name, entry] : store.entries()) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(entry.extents.size()));
    for (std::uint32_t e : entry.extents) w.u32(e);
    for (float v : entry.tensor->values()) w.f32(v);
  }
  return w.take();
}

WeightStore parse_weights(std::string_view bytes) {
  Reader r(bytes);
  need(r, 4, "magic");
  if (r.take(4) != std::string_view(kMagic, 4)) {
    throw FormatError(FormatError::Kind::BadMagic, "not an NSTW weight file (bad magic)");
  }
  need(r, 2, "version");
  const std::uint16_t version = r.u16();
  if (version != kWeightFormatVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      "unsupported NSTW version " + std::to_string(version) + " (expected " +
                          std::to_string(kWeightFormatVersion) + ")");
  }
  need(r, 2, "metadata length");
  const std::uint16_t meta_len = r.u16();
  need(r, meta_len, "metadata");
  WeightStore store;
  for (auto& [k, v] : split_metadata(r.take(meta_len))) store.set_meta(k, std::move(v));

  need(r, 4, "entry count");
  const std::uint32_t count = r.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string label = "entry #" + std::to_string(e);
    need(r, 2, label + " name length");
    const std::uint16_t name_len = r.u16();
    need(r, name_len, label + " name");
    const std::string name(r.take(name_len));
    if (name.empty()) throw FormatError(FormatError::Kind::Malformed, label + " has an empty name");
    need(r, 1, "rank of entry '" + name + "'");
    const std::uint8_t rank = r.u8();
    if (rank > 4) {
      throw FormatError(FormatError::Kind::Malformed,
                        "entry '" + name + "' has rank " + std::to_string(rank) +
                            "; at most 4 is supported");
    }
    need(r, 4u * rank, "extents of entry '" + name + "'");
    std::vector<std::uint32_t> extents(rank);
    std::uint64_t values = 1;
    for (auto& x : extents) {
      x = r.u32();
      values *= x;
      if (values > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError(FormatError::Kind::SizeMismatch,
                          "entry '" + name + "' declares an implausible element count");
      }
    }
    if (!r.has(values * 4)) {
      throw FormatError(FormatError::Kind::Truncated,
                        "entry '" + name + "' truncated: declares " + std::to_string(values) +
                            " values, file holds " + std::to_string(r.remaining() / 4));
    }
    Tensor t(padded_shape(extents));
    for (Index i = 0; i < t.size(); ++i) t[i] = r.f32();
    if (store.find(name)) {
      throw FormatError(FormatError::Kind::Malformed, "duplicate entry '" + name + "'");
    }
    if (!t.all_finite()) {
      throw FormatError(FormatError::Kind::Malformed, "entry '" + name + "' holds NaN/Inf");
    }
    store.put(name, std::move(extents), std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::SizeMismatch,
                      std::to_string(r.remaining()) +
                          " trailing bytes after the declared entries");
  }
  return store;
}

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_weights(store));
}

WeightStore load_weights(const std::filesystem::path& path) {
  return parse_weights(read_file(path));
}

}  // namespace nst
