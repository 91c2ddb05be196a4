#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nst/error.hpp"
#include "nst/tensor.hpp"

namespace nst {

// NSTW weight file, all integers little-endian, no padding:
//
//   "NSTW"  u16 version(=1)  u16 meta_len  meta[meta_len]  u32 entry_count
//   entry: u16 name_len  name  u8 rank  u32 extents[rank]  f32 values[prod(extents)]
//
// The metadata blob is UTF-8 "key=value" lines joined by '\n'. Conv layers
// store their kernel (out×in×kh×kw, cross-correlation, no flip) under the
// layer name and their bias (out) under "<layer>.bias".

inline constexpr std::uint16_t kWeightFormatVersion = 1;

class FormatError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, SizeMismatch, Malformed };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct WeightEntry {
  std::vector<std::uint32_t> extents;
  // Values laid out row-major over `extents`, held in a rank-4 tensor whose
  // shape is the extents right-aligned and padded with leading 1s.
  std::shared_ptr<const Tensor> tensor;

  friend bool operator==(const WeightEntry& a, const WeightEntry& b) {
    return a.extents == b.extents && *a.tensor == *b.tensor;
  }
};

class WeightStore {
 public:
  using Metadata = std::vector<std::pair<std::string, std::string>>;

  const Metadata& metadata() const { return metadata_; }
  std::optional<std::string> meta(const std::string& key) const;
  /// Replaces an existing key in place or appends a new one.
  void set_meta(const std::string& key, std::string value);

  const std::map<std::string, WeightEntry>& entries() const { return entries_; }
  const WeightEntry* find(const std::string& name) const;

  /// Rank is inferred from `extents` (at most 4); the tensor must hold
  /// exactly prod(extents) values.
  void put(const std::string& name, std::vector<std::uint32_t> extents, Tensor values);
  void put_conv(const std::string& layer, Tensor kernel, Tensor bias);

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  Metadata metadata_;
  std::map<std::string, WeightEntry> entries_;
};

std::string bias_entry_name(const std::string& layer);

/// Byte image of `store` in NSTW format.
std::string serialize_weights(const WeightStore& store);
/// Parses a complete NSTW byte image. Nothing is returned on failure.
WeightStore parse_weights(std::string_view bytes);

/// Writes to a temporary sibling and renames it over `path`.
void save_weights(const WeightStore& store, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

}  // namespace nst
