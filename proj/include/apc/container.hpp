#pragma once

// Named float32 array container used for weights, memory banks and anomaly maps.
//
// Layout: magic bytes, uint64 little-endian header length, UTF-8 JSON header
// {"version", "meta", "arrays": [{"name", "shape"}...]}, then each array as raw
// little-endian float32 in header order. Nothing may follow the last array.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace apc {

inline constexpr std::string_view kBankMagic = "APCBANK1";
inline constexpr std::string_view kWeightsMagic = "APCWTS1";
inline constexpr std::string_view kMapMagic = "APCMAP1";

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  std::size_t count() const;
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  const NamedArray& at(std::string_view name) const;
};

std::vector<std::uint8_t> encode_container(std::string_view magic, const Container& c);
Container decode_container(std::string_view magic, const std::vector<std::uint8_t>& bytes, const std::string& origin);

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c);
Container read_container(const std::filesystem::path& path, std::string_view magic);

/// 64-bit FNV-1a, used for feature signatures and config hashes.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 14695981039346656037ull;
};

}  // namespace apc
