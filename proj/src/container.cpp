#include "apc/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "apc/error.hpp"

namespace apc {

namespace {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

constexpr std::uint32_t kVersion = 1;

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint64_t read_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t NamedArray::count() const {
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  return n;
}

const NamedArray* Container::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Container::at(std::string_view name) const {
  if (const auto* a = find(name)) return *a;
  throw IntegrityError("container has no array named '" + std::string(name) + "'");
}

std::vector<std::uint8_t> encode_container(std::string_view magic, const Container& c) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    if (a.count() != a.data.size()) throw ShapeError("array '" + a.name + "' shape does not match its data");
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}});
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(magic.begin(), magic.end());
  append_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : c.arrays) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(a.data.data());
    out.insert(out.end(), p, p + a.data.size() * sizeof(float));
  }
  return out;
}

Container decode_container(std::string_view magic, const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  const std::string_view family = magic.substr(0, magic.size() - 1);
  if (bytes.size() < magic.size() || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    if (bytes.size() >= magic.size() && std::memcmp(bytes.data(), family.data(), family.size()) == 0)
      throw UnsupportedVersionError(origin + ": unsupported container version '" +
                                    std::string(reinterpret_cast<const char*>(bytes.data()), magic.size()) +
                                    "', expected '" + std::string(magic) + "'");
    throw IntegrityError(origin + ": not a '" + std::string(magic) + "' container");
  }
  std::size_t pos = magic.size();
  if (bytes.size() < pos + 8) throw IntegrityError(origin + ": truncated header length");
  const std::uint64_t len = read_u64(bytes.data() + pos);
  pos += 8;
  if (len > bytes.size() - pos) throw IntegrityError(origin + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(origin + ": corrupt header: " + e.what());
  }
  pos += len;
  if (header.value("version", 0u) != kVersion)
    throw UnsupportedVersionError(origin + ": unsupported header version " + header.value("version", nlohmann::json()).dump());

  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<int>>();
    const std::size_t n = a.count();
    if (n > (bytes.size() - pos) / sizeof(float))
      throw IntegrityError(origin + ": truncated data for array '" + a.name + "'");
    a.data.resize(n);
    std::memcpy(a.data.data(), bytes.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
    c.arrays.push_back(std::move(a));
  }
  if (pos != bytes.size()) throw IntegrityError(origin + ": trailing bytes after last array");
  return c;
}

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c) {
  const auto bytes = encode_container(magic, c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw NotFoundError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw Error("write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("file not found: '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(magic, bytes, path.string());
}

void Fnv1a::update(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h_ ^= p[i];
    h_ *= 1099511628211ull;
  }
}

std::string Fnv1a::hex() const {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 0; i < 16; ++i) s[15 - i] = digits[(h_ >> (4 * i)) & 0xf];
  return s;
}

}  // namespace apc
