#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "mglab/nn/layers.hpp"

namespace mglab::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File layout (all integers little-endian u32 unless noted):
//   magic "MGLBCKPT" (8 bytes) | version | tag_len | tag bytes | entry_count
//   per entry: name_len | name | trainable (u8) | rank | dims[rank]
//   then each entry's float32 blob, in table order.
inline constexpr std::array<char, 8> kCheckpointMagic = {'M', 'G', 'L', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  bool trainable = true;
  Shape shape;
  std::vector<float> data;

  bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
  std::string tag;
  std::vector<CheckpointEntry> entries;

  bool operator==(const Checkpoint&) const = default;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {
inline void put_u32(std::vector<char>& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
  std::string str(std::size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};
}  // namespace detail

inline std::vector<char> serialize(const Checkpoint& ckpt) {
  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tag.size()));
  out.insert(out.end(), ckpt.tag.begin(), ckpt.tag.end());
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<char>(e.trainable ? 1 : 0));
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& e : ckpt.entries) {
    const auto* p = reinterpret_cast<const char*>(e.data.data());
    out.insert(out.end(), p, p + e.data.size() * sizeof(float));
  }
  return out;
}

inline Checkpoint deserialize(const std::vector<char>& bytes) {
  detail::Reader r(bytes);
  const char* magic = r.take(kCheckpointMagic.size());
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), magic)) {
    throw CheckpointError("bad checkpoint magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.tag = r.str(r.u32());
  const std::uint32_t count = r.u32();
  ckpt.entries.resize(count);
  for (auto& e : ckpt.entries) {
    e.name = r.str(r.u32());
    e.trainable = r.u8() != 0;
    const std::uint32_t rank = r.u32();
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(r.u32());
  }
  for (auto& e : ckpt.entries) {
    e.data.resize(shape_size(e.shape));
    std::memcpy(e.data.data(), r.take(e.data.size() * sizeof(float)), e.data.size() * sizeof(float));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

/// FNV-1a over entry names and parameter bytes.
inline std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : ckpt.entries) {
    mix(e.name.data(), e.name.size());
    mix(e.data.data(), e.data.size() * sizeof(float));
  }
  return h;
}

template <typename T>
CheckpointEntry to_entry(const Param<T>& p) {
  return {p.name, p.trainable, p.value.shape(), std::vector<float>(p.value.values().begin(), p.value.values().end())};
}

template <typename T>
void load_entry(Param<T>& p, const CheckpointEntry& e) {
  if (e.shape != p.value.shape()) {
    throw CheckpointError("checkpoint entry " + e.name + " has shape " + shape_str(e.shape) + ", expected " +
                          shape_str(p.value.shape()));
  }
  for (std::size_t i = 0; i < e.data.size(); ++i) p.value[i] = static_cast<T>(e.data[i]);
  p.trainable = e.trainable;
}

}  // namespace mglab::nn
