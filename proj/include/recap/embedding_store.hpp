#pragma once

// Binary embedding store ("RECAPEMB v1").
//
// Layout, little-endian throughout:
//
//   magic        8 bytes  "RECAPEMB"
//   version      u32      1
//   flags        u32      bit 0 set <=> patch matrices present
//   dim          u32      D >= 1
//   patch_count  u32      P (0 when bit 0 clear, >= 1 otherwise)
//   record_count u64
//   records      id_len:u16, id bytes (UTF-8), D x f32 global,
//                then P*D x f32 patches (row-major) when bit 0 is set

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "recap/errors.hpp"

namespace recap {

inline constexpr char kEmbeddingMagic[8] = {'R', 'E', 'C', 'A', 'P', 'E', 'M', 'B'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::uint32_t kFlagPatches = 1u;
inline constexpr std::size_t kEmbeddingHeaderSize = 8 + 4 + 4 + 4 + 4 + 8;

// Vectors whose norm is already this close to 1 are left untouched by
// normalization, which makes ingest(write(S)) bit-exact.
inline constexpr double kUnitNormSlack = 1e-6;

// Read-only view of a row-major rows x dim matrix of unit rows.
struct PatchView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t dim = 0;

  std::span<const float> row(std::size_t i) const { return {data + i * dim, dim}; }
  bool empty() const { return rows == 0; }
};

struct EmbeddingRecord {
  std::string id;
  std::vector<float> global;
  // Row-major patch_rows x dim, empty when the record carries no patches.
  std::vector<float> patches;
  std::size_t patch_rows = 0;

  std::size_t dim() const { return global.size(); }
  bool has_patches() const { return patch_rows > 0; }
  PatchView patch_view() const { return {patches.data(), patch_rows, global.size()}; }
};

// Bitwise float comparison; operator== on float would equate -0 and +0.
inline bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

inline bool operator==(const EmbeddingRecord& a, const EmbeddingRecord& b) {
  return a.id == b.id && a.patch_rows == b.patch_rows && bit_equal(a.global, b.global) &&
         bit_equal(a.patches, b.patches);
}

namespace detail {

// Scales v to unit length, computing the norm in double. Returns false for
// zero or non-finite input.
inline bool normalize_unit(std::span<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) return false;
  if (std::abs(norm - 1.0) <= kUnitNormSlack) return true;
  for (float& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
  return true;
}

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (extra >= s.size() - i) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void le(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
  }
  void f32(float x) { le(std::bit_cast<std::uint32_t>(x)); }
  void f32s(std::span<const float> xs) {
    if constexpr (std::endian::native == std::endian::little) {
      raw(xs.data(), xs.size() * sizeof(float));
    } else {
      for (float x : xs) f32(x);
    }
  }
  std::string take() { return std::move(buf_); }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string_view source) : bytes_(bytes), source_(source) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string(source_) + ": truncated while reading " + what + " at byte " +
                        std::to_string(pos_));
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T le(const char* what) {
    auto b = take(sizeof(T), what);
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(b[i])) << (8 * i);
    }
    return static_cast<T>(u);
  }
  void f32s(std::span<float> out, const char* what) {
    auto b = take(out.size() * sizeof(float), what);
    if constexpr (std::endian::native == std::endian::little) {
      if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (std::size_t k = 0; k < 4; ++k) u |= std::uint32_t(static_cast<unsigned char>(b[4 * i + k])) << (8 * k);
        out[i] = std::bit_cast<float>(u);
      }
    }
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string_view bytes_;
  std::string_view source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Immutable collection of embedding records sharing one dimension and one
// patch count. Safe to share between threads once built.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  // Validates and indexes records. With normalize set, every global vector
  // and patch row is scaled to unit L2 norm (zero vectors are rejected).
  static EmbeddingStore from_records(std::size_t dim, std::size_t patch_count,
                                     std::vector<EmbeddingRecord> records, bool normalize = true) {
    if (dim == 0) throw FormatError("embedding dimension must be >= 1");
    EmbeddingStore store;
    store.dim_ = dim;
    store.patch_count_ = patch_count;
    store.index_.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      auto& r = records[i];
      if (r.id.empty()) throw FormatError("record " + std::to_string(i) + " has an empty id");
      if (r.global.size() != dim) {
        throw DimensionError("record '" + r.id + "' has global dim " + std::to_string(r.global.size()) +
                             ", store dim is " + std::to_string(dim));
      }
      if (r.patch_rows != patch_count || r.patches.size() != patch_count * dim) {
        throw DimensionError("record '" + r.id + "' has " + std::to_string(r.patch_rows) +
                             " patch rows, store declares " + std::to_string(patch_count));
      }
      if (normalize) {
        if (!detail::normalize_unit(r.global)) {
          throw DegenerateVectorError("record '" + r.id + "' has a zero or non-finite global vector");
        }
        for (std::size_t p = 0; p < r.patch_rows; ++p) {
          if (!detail::normalize_unit(std::span<float>(r.patches).subspan(p * dim, dim))) {
            throw DegenerateVectorError("record '" + r.id + "' has a zero or non-finite patch row " +
                                        std::to_string(p));
          }
        }
      }
      if (!store.index_.emplace(r.id, i).second) throw DuplicateIdError("duplicate id '" + r.id + "'");
    }
    store.records_ = std::move(records);
    return store;
  }

  std::size_t dim() const { return dim_; }
  // 0 when records carry no patches.
  std::size_t patch_count() const { return patch_count_; }
  bool has_patches() const { return patch_count_ > 0; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  std::span<const EmbeddingRecord> records() const { return records_; }
  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }

  const EmbeddingRecord* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const EmbeddingRecord& get(std::string_view id) const {
    if (const auto* r = find(id)) return *r;
    throw NotFoundError("no embedding with id '" + std::string(id) + "'");
  }

  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    return a.dim_ == b.dim_ && a.patch_count_ == b.patch_count_ && a.records_ == b.records_;
  }

 private:
  std::size_t dim_ = 1;
  std::size_t patch_count_ = 0;
  std::vector<EmbeddingRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Exact byte size of the serialized store.
inline std::uint64_t serialized_size(const EmbeddingStore& store) {
  std::uint64_t total = kEmbeddingHeaderSize;
  const std::uint64_t per_vec = static_cast<std::uint64_t>(store.dim()) * sizeof(float);
  for (const auto& r : store.records()) {
    total += 2 + r.id.size() + per_vec * (1 + store.patch_count());
  }
  return total;
}

inline std::string serialize_embeddings(const EmbeddingStore& store) {
  detail::ByteWriter w;
  w.reserve(static_cast<std::size_t>(serialized_size(store)));
  w.raw(kEmbeddingMagic, sizeof kEmbeddingMagic);
  w.le<std::uint32_t>(kEmbeddingVersion);
  w.le<std::uint32_t>(store.has_patches() ? kFlagPatches : 0u);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(store.dim()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(store.patch_count()));
  w.le<std::uint64_t>(store.size());
  for (const auto& r : store.records()) {
    if (r.id.size() > 0xFFFF) throw FormatError("id longer than 65535 bytes: '" + r.id.substr(0, 32) + "...'");
    w.le<std::uint16_t>(static_cast<std::uint16_t>(r.id.size()));
    w.raw(r.id.data(), r.id.size());
    w.f32s(r.global);
    w.f32s(r.patches);
  }
  return w.take();
}

inline EmbeddingStore parse_embeddings(std::string_view bytes, bool normalize = true,
                                       std::string_view source = "<memory>") {
  detail::ByteReader in(bytes, source);
  const std::string src(source);
  if (in.remaining() < sizeof kEmbeddingMagic ||
      std::memcmp(in.take(sizeof kEmbeddingMagic, "magic").data(), kEmbeddingMagic, sizeof kEmbeddingMagic) != 0) {
    throw FormatError(src + ": bad magic, not a RECAPEMB file");
  }
  const auto version = in.le<std::uint32_t>("version");
  if (version != kEmbeddingVersion) throw FormatError(src + ": unsupported version " + std::to_string(version));
  const auto flags = in.le<std::uint32_t>("flags");
  if (flags & ~kFlagPatches) throw FormatError(src + ": unknown flag bits " + std::to_string(flags));
  const auto dim = in.le<std::uint32_t>("dim");
  if (dim == 0) throw FormatError(src + ": dim must be >= 1");
  const auto patch_count = in.le<std::uint32_t>("patch_count");
  const bool with_patches = (flags & kFlagPatches) != 0;
  if (with_patches && patch_count == 0) throw FormatError(src + ": patch flag set but patch_count is 0");
  if (!with_patches && patch_count != 0) throw FormatError(src + ": patch_count set without patch flag");
  const auto count = in.le<std::uint64_t>("record_count");

  // Every record needs at least its id length and global vector.
  const std::uint64_t min_record = 2 + 4ull * dim * (1ull + patch_count);
  if (count > in.remaining() / min_record) {
    throw FormatError(src + ": header declares " + std::to_string(count) + " records but payload holds fewer");
  }

  std::vector<EmbeddingRecord> records(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    const auto id_len = in.le<std::uint16_t>("id_len");
    if (id_len == 0) throw FormatError(src + ": record " + std::to_string(i) + " has an empty id");
    r.id = std::string(in.take(id_len, "id"));
    if (!detail::valid_utf8(r.id)) throw FormatError(src + ": record " + std::to_string(i) + " id is not UTF-8");
    r.global.resize(dim);
    in.f32s(r.global, "global vector");
    if (with_patches) {
      r.patch_rows = patch_count;
      r.patches.resize(static_cast<std::size_t>(patch_count) * dim);
      in.f32s(r.patches, "patch matrix");
    }
  }
  if (in.remaining() != 0) {
    throw FormatError(src + ": " + std::to_string(in.remaining()) + " trailing bytes after last record");
  }
  return EmbeddingStore::from_records(dim, with_patches ? patch_count : 0, std::move(records), normalize);
}

inline EmbeddingStore ingest_embeddings(const std::filesystem::path& path, bool normalize = true) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open embedding file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("error reading " + path.string());
  return parse_embeddings(bytes, normalize, path.string());
}

inline void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& path) {
  const std::string bytes = serialize_embeddings(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw IoError("error writing " + path.string());
}

}  // namespace recap
