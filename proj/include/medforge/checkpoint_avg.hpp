#pragma once

// MFTA tensor container and uniform checkpoint averaging.
//
// Layout (all integers little-endian):
//   "MFTA" | u32 version=1 | u32 tensor_count
//   per tensor, names in ascending byte order:
//     u32 name_len | name (UTF-8) | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
//   u64 FNV-1a of every preceding byte

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "medforge/errors.hpp"
#include "medforge/hash.hpp"

namespace medforge::ckpt {

static_assert(std::endian::native == std::endian::little, "MFTA I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

inline constexpr char kMagic[4] = {'M', 'F', 'T', 'A'};
inline constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;

  std::uint64_t element_count() const noexcept {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

/// std::map keeps names in ascending byte order, which is the on-disk order.
using TensorArchive = std::map<std::string, Tensor>;

namespace detail {

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::byte>& bytes() noexcept { return buf_; }

 private:
  std::vector<std::byte> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> b) : bytes_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw IoError("truncated archive");
  }
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

inline void validate(const std::string& name, const Tensor& t) {
  if (t.data.size() != t.element_count()) {
    throw ValidationError("tensor \"" + name + "\": data length " + std::to_string(t.data.size()) +
                          " does not match shape product " + std::to_string(t.element_count()));
  }
}

}  // namespace detail

inline std::vector<std::byte> serialize(const TensorArchive& archive) {
  detail::Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.size()));
  for (const auto& [name, t] : archive) {
    detail::validate(name, t);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    w.put_bytes(t.data.data(), t.data.size() * sizeof(float));
  }
  Fnv1a64 h;
  h.update(w.bytes());
  w.put<std::uint64_t>(h.digest());
  return std::move(w.bytes());
}

/// Throws FormatError for bad magic/version/checksum or malformed structure,
/// IoError when the input ends early.
inline TensorArchive deserialize(std::span<const std::byte> bytes) {
  detail::Reader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  TensorArchive out;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > r.remaining()) throw IoError("truncated archive");
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    if (i > 0 && !(prev < name)) throw FormatError("tensor names not strictly ascending at \"" + name + "\"");
    const auto rank = r.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(rank) * 8 > r.remaining()) throw IoError("truncated archive");
    Tensor t;
    t.shape.resize(rank);
    for (auto& d : t.shape) d = r.get<std::uint64_t>();
    std::uint64_t n = 1;
    for (auto d : t.shape) {
      if (d != 0 && n > r.remaining() / d) throw IoError("truncated archive");
      n *= d;
    }
    if (n * sizeof(float) > r.remaining()) throw IoError("truncated archive");
    t.data.resize(n);
    r.get_bytes(t.data.data(), n * sizeof(float));
    prev = name;
    out.emplace(std::move(name), std::move(t));
  }
  const std::size_t body = bytes.size() - r.remaining();
  const auto stored = r.get<std::uint64_t>();
  if (r.remaining() != 0) throw FormatError("trailing bytes after checksum");
  Fnv1a64 h;
  h.update(bytes.first(body));
  if (h.digest() != stored) throw FormatError("checksum mismatch");
  return out;
}

inline TensorArchive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path);
  try {
    return deserialize(std::as_bytes(std::span<const char>(raw)));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

/// Returns the number of bytes written.
inline std::size_t write_archive(const TensorArchive& archive, const std::string& path) {
  const auto bytes = serialize(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on " + path);
  return bytes.size();
}

/// Element-wise arithmetic mean. Sums accumulate in double in input order and
/// are rounded to float once. Requires >= 2 archives with identical names and
/// shapes; the error names the first divergent tensor in name order.
inline TensorArchive average(std::span<const TensorArchive> archives) {
  if (archives.size() < 2) throw ValidationError("averaging needs at least two archives");
  const TensorArchive& ref = archives[0];
  for (std::size_t k = 1; k < archives.size(); ++k) {
    auto a = ref.begin();
    auto b = archives[k].begin();
    while (a != ref.end() || b != archives[k].end()) {
      if (a == ref.end() || (b != archives[k].end() && b->first < a->first)) {
        throw ValidationError("tensor \"" + b->first + "\" missing from archive 0");
      }
      if (b == archives[k].end() || a->first < b->first) {
        throw ValidationError("tensor \"" + a->first + "\" missing from archive " + std::to_string(k));
      }
      if (a->second.shape != b->second.shape) {
        throw ValidationError("tensor \"" + a->first + "\" shape differs in archive " + std::to_string(k));
      }
      ++a, ++b;
    }
  }
  for (const auto& arc : archives) {
    for (const auto& [name, t] : arc) detail::validate(name, t);
  }

  TensorArchive out;
  const double k = static_cast<double>(archives.size());
  std::vector<double> acc;
  for (const auto& [name, t] : ref) {
    acc.assign(t.data.size(), 0.0);
    for (const auto& arc : archives) {
      const auto& src = arc.at(name).data;
      for (std::size_t i = 0; i < src.size(); ++i) acc[i] += static_cast<double>(src[i]);
    }
    Tensor mean{t.shape, std::vector<float>(acc.size())};
    for (std::size_t i = 0; i < acc.size(); ++i) mean.data[i] = static_cast<float>(acc[i] / k);
    out.emplace(name, std::move(mean));
  }
  return out;
}

inline TensorArchive average(std::initializer_list<TensorArchive> archives) {
  return average(std::span<const TensorArchive>(archives.begin(), archives.size()));
}

}  // namespace medforge::ckpt
