#include "clipvos/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace clipvos {

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

bool get_u64(std::istream& is, std::uint64_t& v) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return true;
}

void put_f32(std::ostream& os, float f) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("weights " + path.string() + ": " + what);
}

}  // namespace

void write_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("weights: cannot open " + path.string() + " for writing");
  os.write(kWeightMagic, sizeof(kWeightMagic));
  os.put(static_cast<char>(kWeightVersion));
  for (const auto& r : records) {
    if (numel(r.shape) != r.values.size()) {
      throw ShapeError("weights: record " + r.name + " shape " + shape_str(r.shape) +
                       " does not match payload size");
    }
    put_u64(os, r.name.size());
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u64(os, r.shape.size());
    for (std::size_t d : r.shape) put_u64(os, d);
    for (float v : r.values) put_f32(os, v);
  }
  if (!os) throw std::runtime_error("weights: write failed for " + path.string());
}

std::vector<NamedTensor> read_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("weights: cannot open " + path.string());
  char magic[sizeof(kWeightMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kWeightMagic, sizeof(magic)) != 0) {
    corrupt(path, "bad magic header");
  }
  const int version = is.get();
  if (version != kWeightVersion) corrupt(path, "unsupported version " + std::to_string(version));

  std::vector<NamedTensor> records;
  std::uint64_t name_len = 0;
  while (get_u64(is, name_len)) {
    if (name_len > (1u << 16)) corrupt(path, "implausible name length");
    NamedTensor r;
    r.name.resize(name_len);
    if (!is.read(r.name.data(), static_cast<std::streamsize>(name_len))) corrupt(path, "truncated name");
    std::uint64_t rank = 0;
    if (!get_u64(is, rank) || rank > 8) corrupt(path, "bad rank for " + r.name);
    for (std::uint64_t i = 0; i < rank; ++i) {
      std::uint64_t d = 0;
      if (!get_u64(is, d)) corrupt(path, "truncated dims for " + r.name);
      r.shape.push_back(d);
    }
    const std::size_t n = numel(r.shape);
    std::vector<unsigned char> raw(n * 4);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      corrupt(path, "truncated payload for " + r.name);
    }
    r.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
      r.values[i] = std::bit_cast<float>(bits);
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace clipvos
