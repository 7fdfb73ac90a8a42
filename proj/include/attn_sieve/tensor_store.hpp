#pragma once

// ATNE attention-tensor container and the line-delimited sample manifest.
//
// ATNE layout, little-endian, 48-byte header:
//   0  magic "ATNE"
//   4  u32 format version (1)
//   8  u32 flags: bit 0 per-head payload, bit 1 slices renormalized over
//      image tokens by the producer
//   12 u64 N (samples)
//   20 u32 L (layers)
//   24 u32 T (image tokens)
//   28 u32 H (heads, 1 when head-averaged)
//   32 16 reserved zero bytes
//   48 payload: N*L*H*T f32, order [sample][layer][head][token]

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "attn_sieve/detail/util.hpp"
#include "attn_sieve/error.hpp"

namespace attn_sieve {

inline constexpr std::uint32_t kAtneVersion = 1;
inline constexpr std::size_t kAtneHeaderBytes = 48;
inline constexpr std::uint32_t kFlagPerHead = 1u << 0;
inline constexpr std::uint32_t kFlagRenormalized = 1u << 1;

struct AttentionTensorSet {
  std::uint64_t n_samples = 0;
  std::uint32_t n_layers = 0;
  std::uint32_t n_tokens = 0;
  std::uint32_t n_heads = 1;
  bool per_head = false;
  bool renormalized = false;
  std::vector<float> values;

  std::size_t heads_stored() const { return per_head ? n_heads : 1; }

  std::size_t slice_values() const { return heads_stored() * n_tokens; }

  std::size_t expected_values() const {
    return static_cast<std::size_t>(n_samples) * n_layers * slice_values();
  }

  // All stored values of one (sample, layer) cell: H*T when per-head,
  // otherwise T.
  std::span<const float> slice(std::size_t sample, std::size_t layer) const {
    const std::size_t offset = (sample * n_layers + layer) * slice_values();
    return std::span<const float>(values).subspan(offset, slice_values());
  }

  std::span<float> slice(std::size_t sample, std::size_t layer) {
    const std::size_t offset = (sample * n_layers + layer) * slice_values();
    return std::span<float>(values).subspan(offset, slice_values());
  }

  // Bitwise equality of header and payload.
  friend bool operator==(const AttentionTensorSet& a,
                         const AttentionTensorSet& b) {
    return a.n_samples == b.n_samples && a.n_layers == b.n_layers &&
           a.n_tokens == b.n_tokens && a.heads_stored() == b.heads_stored() &&
           a.per_head == b.per_head && a.renormalized == b.renormalized &&
           a.values.size() == b.values.size() &&
           (a.values.empty() ||
            std::memcmp(a.values.data(), b.values.data(),
                        a.values.size() * sizeof(float)) == 0);
  }
};

inline std::string coordinate(const AttentionTensorSet& set, std::size_t flat) {
  const std::size_t token = flat % set.n_tokens;
  std::size_t rest = flat / set.n_tokens;
  std::string head;
  if (set.per_head) {
    head = std::to_string(rest % set.n_heads) + ",";
    rest /= set.n_heads;
  }
  const std::size_t layer = rest % set.n_layers;
  const std::size_t sample = rest / set.n_layers;
  return "(" + std::to_string(sample) + "," + std::to_string(layer) + "," +
         head + std::to_string(token) + ")";
}

inline void validate(const AttentionTensorSet& set) {
  if (set.n_samples < 1 || set.n_layers < 1 || set.n_tokens < 1) {
    fail(ErrorKind::format, "tensor set dimensions must be >= 1 (N=" +
                                std::to_string(set.n_samples) +
                                ", L=" + std::to_string(set.n_layers) +
                                ", T=" + std::to_string(set.n_tokens) + ")");
  }
  if (set.per_head && set.n_heads < 1) {
    fail(ErrorKind::format, "per-head tensor set with zero heads");
  }
  if (set.values.size() != set.expected_values()) {
    fail(ErrorKind::format,
         "value count " + std::to_string(set.values.size()) +
             " does not match layout (expected " +
             std::to_string(set.expected_values()) + ")");
  }
  for (std::size_t i = 0; i < set.values.size(); ++i) {
    const float v = set.values[i];
    if (!std::isfinite(v)) {
      fail(ErrorKind::format, "non-finite value at " + coordinate(set, i));
    }
    if (v < 0.0f) {
      fail(ErrorKind::format, "negative value at " + coordinate(set, i));
    }
  }
}

namespace detail {

inline void put_u32(unsigned char* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

inline void put_u64(unsigned char* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

inline std::uint32_t get_u32(const unsigned char* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const unsigned char* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

}  // namespace detail

// Returns the number of bytes written.
inline std::uint64_t write_tensor_set(const AttentionTensorSet& set,
                                      std::ostream& sink) {
  validate(set);
  unsigned char header[kAtneHeaderBytes] = {};
  std::memcpy(header, "ATNE", 4);
  detail::put_u32(header + 4, kAtneVersion);
  std::uint32_t flags = 0;
  if (set.per_head) flags |= kFlagPerHead;
  if (set.renormalized) flags |= kFlagRenormalized;
  detail::put_u32(header + 8, flags);
  detail::put_u64(header + 12, set.n_samples);
  detail::put_u32(header + 20, set.n_layers);
  detail::put_u32(header + 24, set.n_tokens);
  detail::put_u32(header + 28, static_cast<std::uint32_t>(set.heads_stored()));
  sink.write(reinterpret_cast<const char*>(header), kAtneHeaderBytes);

  std::vector<unsigned char> payload(set.values.size() * 4);
  for (std::size_t i = 0; i < set.values.size(); ++i) {
    detail::put_u32(payload.data() + 4 * i,
                    std::bit_cast<std::uint32_t>(set.values[i]));
  }
  sink.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
  if (!sink) fail(ErrorKind::io, "failed writing ATNE container");
  return kAtneHeaderBytes + payload.size();
}

inline AttentionTensorSet read_tensor_set(std::istream& source) {
  unsigned char header[kAtneHeaderBytes];
  source.read(reinterpret_cast<char*>(header), kAtneHeaderBytes);
  if (source.gcount() < 4 || std::memcmp(header, "ATNE", 4) != 0) {
    fail(ErrorKind::format, "not an ATNE container");
  }
  if (source.gcount() != static_cast<std::streamsize>(kAtneHeaderBytes)) {
    fail(ErrorKind::format, "truncated ATNE header");
  }
  const std::uint32_t version = detail::get_u32(header + 4);
  if (version != kAtneVersion) {
    fail(ErrorKind::format, "unsupported ATNE version " +
                                std::to_string(version) + " (expected " +
                                std::to_string(kAtneVersion) + ")");
  }
  const std::uint32_t flags = detail::get_u32(header + 8);
  if ((flags & ~(kFlagPerHead | kFlagRenormalized)) != 0) {
    fail(ErrorKind::format, "unknown ATNE flag bits");
  }
  for (std::size_t i = 32; i < kAtneHeaderBytes; ++i) {
    if (header[i] != 0) fail(ErrorKind::format, "reserved header bytes not zero");
  }

  AttentionTensorSet set;
  set.per_head = (flags & kFlagPerHead) != 0;
  set.renormalized = (flags & kFlagRenormalized) != 0;
  set.n_samples = detail::get_u64(header + 12);
  set.n_layers = detail::get_u32(header + 20);
  set.n_tokens = detail::get_u32(header + 24);
  set.n_heads = detail::get_u32(header + 28);
  if (!set.per_head && set.n_heads != 1) {
    fail(ErrorKind::format, "head-averaged container must declare H=1");
  }
  if (set.n_samples < 1 || set.n_layers < 1 || set.n_tokens < 1 ||
      set.n_heads < 1) {
    fail(ErrorKind::format, "ATNE dimensions must be >= 1");
  }

  // Guard N*L*H*T*4 against overflow before allocating.
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t count = set.n_samples;
  for (std::uint64_t factor :
       {std::uint64_t{set.n_layers}, std::uint64_t{set.n_heads},
        std::uint64_t{set.n_tokens}, std::uint64_t{4}}) {
    if (count > kMax / factor) fail(ErrorKind::format, "ATNE dimensions overflow");
    count *= factor;
  }
  const std::uint64_t payload_bytes = count;

  std::vector<unsigned char> payload;
  // Read in bounded chunks so a lying header cannot force a huge allocation
  // before the stream runs dry.
  constexpr std::size_t kChunk = std::size_t{1} << 24;
  while (payload.size() < payload_bytes) {
    const std::size_t want = static_cast<std::size_t>(
        std::min<std::uint64_t>(kChunk, payload_bytes - payload.size()));
    const std::size_t before = payload.size();
    payload.resize(before + want);
    source.read(reinterpret_cast<char*>(payload.data() + before),
                static_cast<std::streamsize>(want));
    const auto got = static_cast<std::size_t>(source.gcount());
    if (got < want) {
      fail(ErrorKind::format,
           "expected N*L*H*T*4 = " + std::to_string(payload_bytes) +
               " payload bytes, got " + std::to_string(before + got));
    }
  }
  if (source.peek() != std::char_traits<char>::eof()) {
    fail(ErrorKind::format, "trailing bytes after ATNE payload (expected " +
                                std::to_string(payload_bytes) +
                                " payload bytes)");
  }

  set.values.resize(static_cast<std::size_t>(count / 4));
  for (std::size_t i = 0; i < set.values.size(); ++i) {
    set.values[i] = std::bit_cast<float>(detail::get_u32(payload.data() + 4 * i));
  }
  validate(set);
  return set;
}

inline void save_tensor_set(const AttentionTensorSet& set,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  write_tensor_set(set, out);
}

inline AttentionTensorSet load_tensor_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  return read_tensor_set(in);
}

// ---------------------------------------------------------------------------
// Sample manifest: `<index>\t<sample_id>\t<label>` per line, label one of
// `poisoned`, `clean`, `-`.

struct ManifestEntry {
  std::size_t index = 0;
  std::string sample_id;
  std::optional<bool> poisoned;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct SampleManifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }

  bool fully_labeled() const {
    for (const auto& e : entries) {
      if (!e.poisoned) return false;
    }
    return true;
  }

  std::vector<std::optional<bool>> truth() const {
    std::vector<std::optional<bool>> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.poisoned);
    return out;
  }

  friend bool operator==(const SampleManifest&, const SampleManifest&) = default;
};

inline void validate(const SampleManifest& manifest) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.index > i) fail(ErrorKind::format, "gap at index " + std::to_string(i));
    if (e.index < i) {
      fail(ErrorKind::format, "index " + std::to_string(e.index) +
                                  " out of order at position " +
                                  std::to_string(i));
    }
    if (e.sample_id.empty() ||
        e.sample_id.find_first_of(" \t\r\n") != std::string::npos) {
      fail(ErrorKind::format,
           "invalid sample_id at index " + std::to_string(i));
    }
    if (!seen.insert(e.sample_id).second) {
      fail(ErrorKind::format, "duplicate sample_id '" + e.sample_id + "'");
    }
  }
}

inline std::uint64_t write_manifest(const SampleManifest& manifest,
                                    std::ostream& sink) {
  validate(manifest);
  std::uint64_t bytes = 0;
  for (const auto& e : manifest.entries) {
    std::string line = std::to_string(e.index) + '\t' + e.sample_id + '\t' +
                       (e.poisoned ? (*e.poisoned ? "poisoned" : "clean") : "-") +
                       '\n';
    sink << line;
    bytes += line.size();
  }
  if (!sink) fail(ErrorKind::io, "failed writing manifest");
  return bytes;
}

inline SampleManifest read_manifest(std::istream& source) {
  SampleManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    const std::string where = "manifest line " + std::to_string(line_no);
    if (fields.size() != 3) {
      fail(ErrorKind::format, where + ": expected 3 tab-separated fields");
    }
    ManifestEntry entry;
    try {
      std::size_t consumed = 0;
      const std::string index_text(fields[0]);
      const unsigned long long index = std::stoull(index_text, &consumed);
      if (consumed != index_text.size() || index_text.front() == '-' ||
          index_text.front() == '+') {
        throw std::invalid_argument("index");
      }
      entry.index = static_cast<std::size_t>(index);
    } catch (const std::exception&) {
      fail(ErrorKind::format, where + ": malformed index '" +
                                  std::string(fields[0]) + "'");
    }
    entry.sample_id = std::string(fields[1]);
    if (entry.sample_id.empty()) {
      fail(ErrorKind::format, where + ": empty sample_id");
    }
    if (fields[2] == "poisoned") {
      entry.poisoned = true;
    } else if (fields[2] == "clean") {
      entry.poisoned = false;
    } else if (fields[2] != "-") {
      fail(ErrorKind::format,
           where + ": unknown label '" + std::string(fields[2]) + "'");
    }
    manifest.entries.push_back(std::move(entry));
  }
  validate(manifest);
  return manifest;
}

inline void save_manifest(const SampleManifest& manifest,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  write_manifest(manifest, out);
}

inline SampleManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  return read_manifest(in);
}

// Manifest with ids "sample_<i>" and no labels, for tensor sets that arrive
// without one.
inline SampleManifest default_manifest(std::size_t n_samples) {
  SampleManifest manifest;
  manifest.entries.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    manifest.entries.push_back({i, "sample_" + std::to_string(i), std::nullopt});
  }
  return manifest;
}

}  // namespace attn_sieve
