// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <thread>

#include "evprobe/error.hpp"
#include "evprobe/labels.hpp"
#include "evprobe/trace_store.hpp"
#include "test_support.hpp"

using namespace evprobe;
using evprobe::testing::TempDir;
using evprobe::testing::random_trace;
using evprobe::testing::small_manifest;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no evprobe::Error thrown");
  return ErrorKind::Io;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

GenerationTrace minimal_trace() {
  GenerationTrace tr;
  tr.key = {"q1", Condition::WOC, 0};
  tr.response_token_ids = {5};
  tr.chosen_logprobs = {-0.5f};
  tr.topk_token_ids = {5, 6};
  tr.topk_logits = Matrix(1, 2, {2.0f, 1.0f});
  tr.hidden_states.emplace(3, Matrix(1, 4, {1, 2, 3, 4}));
  tr.response_text = "x";
  return tr;
}

}  // namespace

TEST_CASE("crc32c check value") {
  const char* s = "123456789";
  CHECK(crc32c({reinterpret_cast<const std::uint8_t*>(s), 9}) == 0xE3069283u);
}

TEST_CASE("minimal trace round-trip") {
  TempDir dir;
  const auto path = dir / "min.evpt";
  {
    TraceWriter w(path, small_manifest(2, {3}, 4));
    w.write(minimal_trace());
    w.finalize();
  }
  const auto store = TraceStore::open(path);
  CHECK(store.entries().size() == 1);
  CHECK(store.read("q1", Condition::WOC, 0) == minimal_trace());
  CHECK(kind_of([&] { store.read("q2", Condition::WOC, 0); }) == ErrorKind::NotFound);
  CHECK(kind_of([&] { store.read("q1", Condition::WCC, 0); }) == ErrorKind::NotFound);
}

TEST_CASE("writer rejects shape mismatches") {
  TempDir dir;
  TraceWriter w(dir / "bad.evpt", small_manifest(2, {3}, 4));

  auto short_hidden = minimal_trace();
  short_hidden.response_token_ids = {5, 6};
  short_hidden.chosen_logprobs = {-0.5f, -0.1f};
  short_hidden.topk_token_ids = {5, 6, 7, 8};
  short_hidden.topk_logits = Matrix(2, 2, {2, 1, 2, 1});
  CHECK(kind_of([&] { w.write(short_hidden); }) == ErrorKind::Schema);

  auto wrong_layer = minimal_trace();
  wrong_layer.hidden_states.clear();
  wrong_layer.hidden_states.emplace(4, Matrix(1, 4));
  CHECK(kind_of([&] { w.write(wrong_layer); }) == ErrorKind::Schema);

  auto wrong_d = minimal_trace();
  wrong_d.hidden_states.clear();
  wrong_d.hidden_states.emplace(3, Matrix(1, 3));
  CHECK(kind_of([&] { w.write(wrong_d); }) == ErrorKind::Schema);

  auto wrong_k = minimal_trace();
  wrong_k.topk_token_ids = {1, 2, 3};
  wrong_k.topk_logits = Matrix(1, 3, {3, 2, 1});
  CHECK(kind_of([&] { w.write(wrong_k); }) == ErrorKind::Schema);

  auto unsorted = minimal_trace();
  unsorted.topk_logits = Matrix(1, 2, {1.0f, 2.0f});
  CHECK(kind_of([&] { w.write(unsorted); }) == ErrorKind::Schema);

  auto positive_lp = minimal_trace();
  positive_lp.chosen_logprobs = {0.1f};
  CHECK(kind_of([&] { w.write(positive_lp); }) == ErrorKind::Schema);

  auto bad_p = minimal_trace();
  bad_p.p_true = 1.5;
  CHECK(kind_of([&] { w.write(bad_p); }) == ErrorKind::Schema);

  w.write(minimal_trace());
  CHECK(kind_of([&] { w.write(minimal_trace()); }) == ErrorKind::Schema);
}

TEST_CASE("unfinalized writer leaves no file behind") {
  TempDir dir;
  const auto path = dir / "partial.evpt";
  {
    TraceWriter w(path, small_manifest(2, {3}, 4));
    w.write(minimal_trace());
  }
  CHECK_FALSE(std::filesystem::exists(path));
  CHECK(std::filesystem::is_empty(dir.path()));
}

TEST_CASE("100 randomized round-trips are bit-exact") {
  TempDir dir;
  const auto path = dir / "rand.evpt";
  const std::vector<int> layers = {-3, 0, 7};
  SplitMix64 rng(31337);
  std::vector<GenerationTrace> written;
  {
    TraceWriter w(path, small_manifest(6, layers, 5));
    for (int i = 0; i < 100; ++i) {
      const Condition c = kAllConditions[static_cast<std::size_t>(i % 3)];
      written.push_back(random_trace(rng, {"q" + std::to_string(i / 3), c,
                                           static_cast<std::uint32_t>(i % 7)},
                                     6, layers, 5));
      w.write(written.back());
    }
    w.finalize();
  }
  const auto store = TraceStore::open(path);
  REQUIRE(store.entries().size() == 100);
  for (const auto& tr : written) {
    const auto back = store.read(tr.key);
    const auto a = encode_trace(tr);
    const auto b = encode_trace(back);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size()) == 0);
    // Field-level bit comparison of the float payloads.
    CHECK(std::memcmp(tr.chosen_logprobs.data(), back.chosen_logprobs.data(),
                      tr.chosen_logprobs.size() * sizeof(float)) == 0);
    for (const auto& [layer, h] : tr.hidden_states) {
      const auto& hb = back.hidden_states.at(layer);
      CHECK(std::memcmp(h.data().data(), hb.data().data(), h.data().size_bytes()) == 0);
    }
    CHECK(back.p_true == tr.p_true);
    CHECK(back.response_text == tr.response_text);
    CHECK(back.key == tr.key);
  }
}

TEST_CASE("any single-byte corruption of a record is detected") {
  TempDir dir;
  const auto path = dir / "c.evpt";
  SplitMix64 rng(5);
  {
    TraceWriter w(path, small_manifest(3, {1}, 2));
    w.write(random_trace(rng, {"a", Condition::WOC, 0}, 3, {1}, 2));
    w.write(random_trace(rng, {"b", Condition::WIC, 1}, 3, {1}, 2));
    w.finalize();
  }
  const auto original = slurp(path);
  const std::uint64_t manifest_len = [&] {
    std::uint64_t n = 0;
    std::memcpy(&n, original.data() + 8, 8);
    return n;
  }();
  const std::uint64_t base = 16 + manifest_len;

  const auto corrupt = dir / "corrupt.evpt";
  std::size_t checked = 0;
  for (std::size_t pos = base; pos < original.size(); ++pos) {
    for (std::uint8_t flip : {std::uint8_t{0x01}, std::uint8_t{0x80}, std::uint8_t{0xFF}}) {
      auto bytes = original;
      bytes[pos] = static_cast<char>(static_cast<std::uint8_t>(bytes[pos]) ^ flip);
      spit(corrupt, bytes);
      const auto bad = TraceStore::open(corrupt);
      bool detected = false;
      for (const auto& e : bad.entries()) {
        try {
          bad.read(e);
        } catch (const Error& ex) {
          detected = detected || ex.kind() == ErrorKind::Integrity;
        }
      }
      CAPTURE(pos);
      CHECK(detected);
      ++checked;
    }
  }
  CHECK(checked == 3 * (original.size() - base));
}

TEST_CASE("header and manifest damage") {
  TempDir dir;
  const auto path = dir / "h.evpt";
  {
    TraceWriter w(path, small_manifest(2, {3}, 4));
    w.write(minimal_trace());
    w.finalize();
  }
  const auto original = slurp(path);
  auto bad_magic = original;
  bad_magic[0] = 'X';
  spit(dir / "m.evpt", bad_magic);
  CHECK(kind_of([&] { TraceStore::open(dir / "m.evpt"); }) == ErrorKind::Integrity);

  auto bad_version = original;
  bad_version[4] = 9;
  spit(dir / "v.evpt", bad_version);
  CHECK(kind_of([&] { TraceStore::open(dir / "v.evpt"); }) == ErrorKind::Integrity);

  auto bad_json = original;
  bad_json[16] = '#';
  spit(dir / "j.evpt", bad_json);
  CHECK(kind_of([&] { TraceStore::open(dir / "j.evpt"); }) == ErrorKind::Integrity);

  CHECK(kind_of([&] { TraceStore::open(dir / "missing.evpt"); }) == ErrorKind::Io);
}

TEST_CASE("truncation yields integrity errors, not crashes") {
  TempDir dir;
  const auto path = dir / "t.evpt";
  SplitMix64 rng(8);
  {
    TraceWriter w(path, small_manifest(4, {0, 1}, 3));
    for (std::uint32_t i = 0; i < 4; ++i) {
      w.write(random_trace(rng, {"q", Condition::WCC, i}, 4, {0, 1}, 3));
    }
    w.finalize();
  }
  const auto original = slurp(path);
  for (std::size_t cut = 0; cut < original.size(); ++cut) {
    spit(dir / "cut.evpt", {original.begin(), original.begin() + static_cast<long>(cut)});
    try {
      const auto store = TraceStore::open(dir / "cut.evpt");
      bool any_error = false;
      for (const auto& e : store.entries()) {
        try {
          store.read(e);
        } catch (const Error& ex) {
          CHECK(ex.kind() == ErrorKind::Integrity);
          any_error = true;
        }
      }
      CHECK(any_error);
    } catch (const Error& ex) {
      CHECK(ex.kind() == ErrorKind::Integrity);
    }
  }
}

TEST_CASE("manifest json round-trip") {
  auto m = small_manifest(20, {10, 11, 12}, 64);
  m.metadata = {{"temperature", 1.0}};
  m.traces.push_back({{"q", Condition::WIC, 2}, 123, 456});
  const auto back = manifest_from_json(to_json(m));
  CHECK(back.k_store == 20);
  CHECK(back.layer_indices == m.layer_indices);
  CHECK(back.traces.size() == 1);
  CHECK(back.traces[0].key == m.traces[0].key);
  CHECK(back.traces[0].offset == 123);
  CHECK(back.metadata == m.metadata);

  auto j = to_json(m);
  j["layer_indices"] = {3, 2};
  CHECK(kind_of([&] { manifest_from_json(j); }) == ErrorKind::Integrity);
}

TEST_CASE("concurrent readers") {
  TempDir dir;
  const auto path = dir / "cr.evpt";
  SplitMix64 rng(77);
  std::vector<GenerationTrace> written;
  {
    TraceWriter w(path, small_manifest(3, {2}, 3));
    for (std::uint32_t i = 0; i < 30; ++i) {
      written.push_back(random_trace(rng, {"q", Condition::WOC, i}, 3, {2}, 3));
      w.write(written.back());
    }
    w.finalize();
  }
  const auto store = TraceStore::open(path);
  std::atomic<int> mismatches{0};
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < 4; ++t) {
      pool.emplace_back([&] {
        for (const auto& tr : written) {
          if (encode_trace(store.read(tr.key)) != encode_trace(tr)) ++mismatches;
        }
      });
    }
  }
  CHECK(mismatches == 0);
}
