// SPDX-License-Identifier: Apache-2.0

#include "evprobe/trace_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <set>

#include <boost/crc.hpp>

#include "evprobe/error.hpp"

namespace evprobe {

namespace {

static_assert(std::endian::native == std::endian::little,
              "trace store assumes a little-endian host");

using Bytes = std::vector<std::uint8_t>;

// 8 bytes of length prefix + 4 bytes of checksum around every body.
constexpr std::uint64_t kRecordOverhead = 12;
constexpr std::uint64_t kHeaderFixed = 4 + 4 + 8;

class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  template <typename T>
  void put_array(std::span<const T> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    out_.insert(out_.end(), p, p + values.size_bytes());
  }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }

 private:
  Bytes& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <typename T>
  std::vector<T> get_array(std::uint64_t count) {
    if (count > (in_.size() - pos_) / sizeof(T)) truncated();
    std::vector<T> out(count);
    std::memcpy(out.data(), in_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    return out;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const noexcept { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) truncated();
  }
  [[noreturn]] static void truncated() {
    fail(ErrorKind::Integrity, "record body ends prematurely");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// Guards against absurd allocations from corrupted size fields.
void check_count(std::uint64_t count, std::uint64_t limit, const char* what) {
  if (count > limit) {
    fail(ErrorKind::Integrity, std::string("implausible ") + what + " in record");
  }
}

void read_exact(std::ifstream& in, void* dst, std::uint64_t n,
                const std::string& what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::uint64_t>(in.gcount()) != n) {
    fail(ErrorKind::Integrity, "truncated " + what);
  }
}

}  // namespace

std::uint32_t crc32c(std::span<const std::uint8_t> bytes) noexcept {
  boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

void DatasetManifest::check() const {
  if (k_store < 2) fail(ErrorKind::Schema, "manifest k_store must be >= 2");
  if (hidden_dim == 0 && !layer_indices.empty()) {
    fail(ErrorKind::Schema, "manifest hidden_dim must be positive");
  }
  if (m_samples == 0) fail(ErrorKind::Schema, "manifest m_samples must be >= 1");
  for (std::size_t i = 1; i < layer_indices.size(); ++i) {
    if (layer_indices[i] <= layer_indices[i - 1]) {
      fail(ErrorKind::Schema, "manifest layer_indices must be strictly increasing");
    }
  }
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& e : m.traces) {
    traces.push_back({{"question_id", e.key.question_id},
                      {"condition", to_string(e.key.condition)},
                      {"sample_index", e.key.sample_index},
                      {"offset", e.offset},
                      {"length", e.length}});
  }
  return {{"format_version", m.format_version},
          {"model_name", m.model_name},
          {"k_store", m.k_store},
          {"layer_indices", m.layer_indices},
          {"hidden_dim", m.hidden_dim},
          {"m_samples", m.m_samples},
          {"metadata", m.metadata},
          {"traces", std::move(traces)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<std::uint32_t>();
    m.model_name = j.at("model_name").get<std::string>();
    m.k_store = j.at("k_store").get<std::uint32_t>();
    m.layer_indices = j.at("layer_indices").get<std::vector<int>>();
    m.hidden_dim = j.at("hidden_dim").get<std::uint32_t>();
    m.m_samples = j.at("m_samples").get<std::uint32_t>();
    if (j.contains("metadata")) m.metadata = j.at("metadata");
    for (const auto& t : j.at("traces")) {
      IndexEntry e;
      e.key.question_id = t.at("question_id").get<std::string>();
      e.key.condition = parse_condition(t.at("condition").get<std::string>());
      e.key.sample_index = t.at("sample_index").get<std::uint32_t>();
      e.offset = t.at("offset").get<std::uint64_t>();
      e.length = t.at("length").get<std::uint64_t>();
      m.traces.push_back(std::move(e));
    }
    m.check();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::Integrity, std::string("malformed manifest: ") + ex.what());
  } catch (const Error& ex) {
    fail(ErrorKind::Integrity, std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

std::vector<std::uint8_t> encode_trace(const GenerationTrace& trace) {
  Bytes out;
  ByteWriter w(out);
  const auto t = static_cast<std::uint32_t>(trace.length());
  w.put_string(trace.key.question_id);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(trace.key.condition));
  w.put<std::uint32_t>(trace.key.sample_index);
  w.put<std::uint32_t>(t);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(trace.k_store()));
  w.put_array<std::int32_t>(trace.response_token_ids);
  w.put_array<float>(trace.chosen_logprobs);
  w.put_array<std::int32_t>(trace.topk_token_ids);
  w.put_array<float>(trace.topk_logits.data());
  w.put<std::uint8_t>(trace.p_true ? 1 : 0);
  if (trace.p_true) w.put<double>(*trace.p_true);
  w.put_string(trace.response_text);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(trace.hidden_states.size()));
  for (const auto& [layer, h] : trace.hidden_states) {
    w.put<std::int32_t>(layer);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(h.cols()));
    w.put_array<float>(h.data());
  }
  return out;
}

GenerationTrace decode_trace(std::span<const std::uint8_t> body) {
  ByteReader r(body);
  GenerationTrace trace;
  const std::uint64_t cap = body.size();
  trace.key.question_id = r.get_string();
  const auto cond = r.get<std::uint8_t>();
  if (cond > 2) fail(ErrorKind::Integrity, "invalid condition code in record");
  trace.key.condition = static_cast<Condition>(cond);
  trace.key.sample_index = r.get<std::uint32_t>();
  const auto t = r.get<std::uint32_t>();
  const auto k = r.get<std::uint32_t>();
  check_count(std::uint64_t{t} * std::max<std::uint32_t>(k, 1), cap, "top-K size");
  trace.response_token_ids = r.get_array<std::int32_t>(t);
  trace.chosen_logprobs = r.get_array<float>(t);
  trace.topk_token_ids = r.get_array<std::int32_t>(std::uint64_t{t} * k);
  trace.topk_logits = Matrix(t, k, r.get_array<float>(std::uint64_t{t} * k));
  const auto has_p = r.get<std::uint8_t>();
  if (has_p > 1) fail(ErrorKind::Integrity, "invalid p_true flag in record");
  if (has_p == 1) trace.p_true = r.get<double>();
  trace.response_text = r.get_string();
  const auto n_layers = r.get<std::uint32_t>();
  check_count(n_layers, cap, "layer count");
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto layer = r.get<std::int32_t>();
    const auto d = r.get<std::uint32_t>();
    check_count(std::uint64_t{t} * d, cap, "hidden size");
    Matrix h(t, d, r.get_array<float>(std::uint64_t{t} * d));
    if (!trace.hidden_states.emplace(layer, std::move(h)).second) {
      fail(ErrorKind::Integrity, "duplicate layer in record");
    }
  }
  if (!r.done()) fail(ErrorKind::Integrity, "trailing bytes in record body");
  return trace;
}

// ---------------------------------------------------------------------------
// Writer

TraceWriter::TraceWriter(std::filesystem::path path, DatasetManifest manifest)
    : path_(std::move(path)), manifest_(std::move(manifest)) {
  manifest_.check();
  manifest_.format_version = kFormatVersion;
  manifest_.traces.clear();
  staging_ = path_;
  staging_ += ".part";
  out_.open(staging_, std::ios::binary | std::ios::trunc);
  if (!out_) fail(ErrorKind::Io, "cannot open " + staging_.string() + " for writing");
}

TraceWriter::~TraceWriter() {
  if (!finalized_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(staging_, ec);
  }
}

IndexEntry TraceWriter::write(const GenerationTrace& trace) {
  if (finalized_) fail(ErrorKind::Io, "writer already finalized");
  check_trace(trace);
  const std::string where = " in trace " + to_string(trace.key);
  if (trace.k_store() != manifest_.k_store) {
    fail(ErrorKind::Schema, "k_store " + std::to_string(trace.k_store()) +
                                " != manifest " + std::to_string(manifest_.k_store) + where);
  }
  if (trace.hidden_states.size() != manifest_.layer_indices.size()) {
    fail(ErrorKind::Schema, "layer set differs from manifest" + where);
  }
  for (int layer : manifest_.layer_indices) {
    auto it = trace.hidden_states.find(layer);
    if (it == trace.hidden_states.end()) {
      fail(ErrorKind::Schema, "missing layer " + std::to_string(layer) + where);
    }
    if (it->second.cols() != manifest_.hidden_dim) {
      fail(ErrorKind::Schema, "hidden dim " + std::to_string(it->second.cols()) +
                                  " != manifest " +
                                  std::to_string(manifest_.hidden_dim) + where);
    }
  }
  if (seen_.contains(trace.key)) fail(ErrorKind::Schema, "duplicate trace" + where);

  const Bytes body = encode_trace(trace);
  const std::uint64_t len = body.size();
  const std::uint32_t crc = crc32c(body);
  out_.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out_.write(reinterpret_cast<const char*>(body.data()),
             static_cast<std::streamsize>(body.size()));
  out_.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
  if (!out_) fail(ErrorKind::Io, "write failed on " + staging_.string());

  IndexEntry entry{trace.key, cursor_, len};
  cursor_ += len + kRecordOverhead;
  seen_.emplace(trace.key, manifest_.traces.size());
  manifest_.traces.push_back(entry);
  return entry;
}

void TraceWriter::finalize() {
  if (finalized_) return;
  out_.close();
  if (!out_) fail(ErrorKind::Io, "closing " + staging_.string() + " failed");

  const std::string manifest = to_json(manifest_).dump();
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path_.string() + " for writing");
  const std::uint32_t version = kFormatVersion;
  const std::uint64_t mlen = manifest.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  if (std::filesystem::file_size(staging_) > 0) {
    std::ifstream staged(staging_, std::ios::binary);
    out << staged.rdbuf();
  }
  out.close();
  if (!out) fail(ErrorKind::Io, "write failed on " + path_.string());
  std::filesystem::remove(staging_);
  finalized_ = true;
}

// ---------------------------------------------------------------------------
// Reader

TraceStore TraceStore::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open dataset " + path.string());
  TraceStore store;
  store.path_ = path;
  store.file_size_ = std::filesystem::file_size(path);

  char magic[4];
  read_exact(in, magic, sizeof(magic), "header");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::Integrity, path.string() + " is not an EVPT dataset");
  }
  std::uint32_t version = 0;
  std::uint64_t mlen = 0;
  read_exact(in, &version, sizeof(version), "header");
  if (version != kFormatVersion) {
    fail(ErrorKind::Integrity, "unsupported format version " + std::to_string(version));
  }
  read_exact(in, &mlen, sizeof(mlen), "header");
  if (mlen > store.file_size_ - kHeaderFixed) {
    fail(ErrorKind::Integrity, "manifest length exceeds file size");
  }
  std::string text(mlen, '\0');
  read_exact(in, text.data(), mlen, "manifest");
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::Integrity, "manifest is not valid JSON");
  store.manifest_ = manifest_from_json(j);
  try {
    store.manifest_.check();
  } catch (const Error& ex) {
    fail(ErrorKind::Integrity, ex.what());
  }
  store.records_base_ = kHeaderFixed + mlen;
  for (std::size_t i = 0; i < store.manifest_.traces.size(); ++i) {
    if (!store.index_.emplace(store.manifest_.traces[i].key, i).second) {
      fail(ErrorKind::Integrity, "duplicate index entry " +
                                     to_string(store.manifest_.traces[i].key));
    }
  }
  return store;
}

bool TraceStore::contains(const TraceKey& key) const { return index_.contains(key); }

GenerationTrace TraceStore::read(const TraceKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) fail(ErrorKind::NotFound, "no trace " + to_string(key));
  return read(manifest_.traces[it->second]);
}

GenerationTrace TraceStore::read(const std::string& question_id,
                                 Condition condition,
                                 std::uint32_t sample_index) const {
  return read(TraceKey{question_id, condition, sample_index});
}

GenerationTrace TraceStore::read(const IndexEntry& entry) const {
  const std::string where = " for " + to_string(entry.key);
  const std::uint64_t start = records_base_ + entry.offset;
  if (entry.length > file_size_ || entry.offset > file_size_ ||
      start + entry.length + kRecordOverhead > file_size_) {
    fail(ErrorKind::Integrity, "record extends past end of file" + where);
  }
  std::ifstream in(path_, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open dataset " + path_.string());
  in.seekg(static_cast<std::streamoff>(start));

  std::uint64_t len = 0;
  read_exact(in, &len, sizeof(len), "record length" + where);
  if (len != entry.length) {
    fail(ErrorKind::Integrity, "record length disagrees with index" + where);
  }
  Bytes body(len);
  read_exact(in, body.data(), len, "record body" + where);
  std::uint32_t stored = 0;
  read_exact(in, &stored, sizeof(stored), "record checksum" + where);
  if (crc32c(body) != stored) fail(ErrorKind::Integrity, "checksum mismatch" + where);

  GenerationTrace trace = decode_trace(body);
  if (trace.key != entry.key) {
    fail(ErrorKind::Integrity, "record key disagrees with index" + where);
  }
  try {
    check_trace(trace);
  } catch (const Error& ex) {
    fail(ErrorKind::Integrity, ex.what());
  }
  return trace;
}

}  // namespace evprobe
