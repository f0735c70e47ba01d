#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file trace_store.hpp
 * @brief Binary dataset of generation traces.
 *
 * Layout (little-endian throughout):
 *
 *   "EVPT"                 4-byte magic
 *   u32 version            kFormatVersion
 *   u64 manifest_len       followed by manifest_len bytes of UTF-8 JSON
 *   records...             back to back, starting at the "records base"
 *
 * Each record is `u64 body_len | body | u32 crc32c(body)`. Manifest index
 * entries hold the record offset relative to the records base and the body
 * length, so the manifest can be written last without patching offsets.
 *
 * Record body:
 *
 *   u32 qid_len, qid bytes, u8 condition, u32 sample_index,
 *   u32 T, u32 k_store,
 *   i32[T] response_token_ids, f32[T] chosen_logprobs,
 *   i32[T*k_store] topk_token_ids, f32[T*k_store] topk_logits,
 *   u8 has_p_true, f64 p_true (only when has_p_true == 1),
 *   u32 text_len, text bytes,
 *   u32 n_layers, then per layer: i32 layer_index, u32 d, f32[T*d] rows.
 */

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evprobe/trace.hpp"

namespace evprobe {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'E', 'V', 'P', 'T'};
inline constexpr std::size_t kDefaultKStore = 20;
inline constexpr std::size_t kDefaultMSamples = 15;

/// CRC-32C (Castagnoli) of a byte buffer.
std::uint32_t crc32c(std::span<const std::uint8_t> bytes) noexcept;

struct IndexEntry {
  TraceKey key;
  std::uint64_t offset = 0;  // relative to the records base
  std::uint64_t length = 0;  // body length in bytes

  bool operator==(const IndexEntry&) const = default;
};

struct DatasetManifest {
  std::uint32_t format_version = kFormatVersion;
  std::string model_name;
  std::uint32_t k_store = kDefaultKStore;
  std::vector<int> layer_indices;
  std::uint32_t hidden_dim = 0;
  std::uint32_t m_samples = kDefaultMSamples;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<IndexEntry> traces;

  /// Throws Schema when layer_indices are not strictly increasing or sizes
  /// are zero.
  void check() const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Encodes a trace body (no length prefix or checksum).
std::vector<std::uint8_t> encode_trace(const GenerationTrace& trace);
/// Decodes a trace body. Throws Integrity when the bytes are malformed.
GenerationTrace decode_trace(std::span<const std::uint8_t> body);

/// Single writer. Records are staged in `<path>.part` and the dataset file
/// is assembled by finalize(); an unfinalized writer removes its staging
/// file on destruction.
class TraceWriter {
 public:
  TraceWriter(std::filesystem::path path, DatasetManifest manifest);
  ~TraceWriter();
  TraceWriter(const TraceWriter&) = delete;
  TraceWriter& operator=(const TraceWriter&) = delete;

  /// Throws Schema on dimension mismatch with the manifest or a duplicate
  /// key.
  IndexEntry write(const GenerationTrace& trace);
  void finalize();

  const DatasetManifest& manifest() const noexcept { return manifest_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path staging_;
  DatasetManifest manifest_;
  std::ofstream out_;
  std::uint64_t cursor_ = 0;
  std::map<TraceKey, std::size_t> seen_;
  bool finalized_ = false;
};

/// Read-only view of a finalized dataset. Each read opens its own stream,
/// so a const TraceStore can be shared between threads.
class TraceStore {
 public:
  /// Throws Io if the file cannot be opened and Integrity if the header or
  /// manifest is malformed.
  static TraceStore open(const std::filesystem::path& path);

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& path() const noexcept { return path_; }
  const std::vector<IndexEntry>& entries() const noexcept {
    return manifest_.traces;
  }
  bool contains(const TraceKey& key) const;

  /// Throws NotFound for unknown keys and Integrity for truncated or
  /// corrupted records.
  GenerationTrace read(const TraceKey& key) const;
  GenerationTrace read(const std::string& question_id, Condition condition,
                       std::uint32_t sample_index) const;
  GenerationTrace read(const IndexEntry& entry) const;

 private:
  std::filesystem::path path_;
  DatasetManifest manifest_;
  std::uint64_t records_base_ = 0;
  std::uint64_t file_size_ = 0;
  std::map<TraceKey, std::size_t> index_;
};

}  // namespace evprobe
