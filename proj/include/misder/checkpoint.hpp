#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "misder/autodiff.hpp"

namespace misder {

/// Versioned parameter container.
///
/// Layout (all integers little-endian):
///   magic "MSDRCKPT" | u32 format_version (=1) | u32 entry_count | u32 crc32(body)
///   body: per entry, sorted by name:
///     u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 values (row-major)
class Checkpoint {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  void put(const std::string& name, const Matrix& values);
  void put(const ParamTensor& p) { put(p.name, p.values); }
  void put_all(std::span<ParamTensor* const> params);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Matrix& get(const std::string& name) const;
  /// Copies stored values into `p`, checking the shape.
  void restore(ParamTensor& p) const;
  void restore_all(std::span<ParamTensor* const> params) const;

  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  /// Serialized body bytes of every entry whose name starts with `prefix`.
  std::string group_bytes(const std::string& prefix) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, Matrix> entries_;
};

}  // namespace misder
