// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <functional>

#include "evprobe/error.hpp"
#include "evprobe/labels.hpp"
#include "test_support.hpp"

using namespace evprobe;
using evprobe::testing::TempDir;

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

const TraceKey kKey{"q7", Condition::WIC, 3};

}  // namespace

TEST_CASE("normalization and F1") {
  CHECK(normalize_answer("  The, Capital!  is PARIS. ") ==
        std::vector<std::string>{"the", "capital", "is", "paris"});
  CHECK(token_f1("the capital is Paris", "Paris") == doctest::Approx(0.4));
  CHECK(token_f1("Paris", "paris.") == 1.0);
  CHECK(token_f1("London", "Paris") == 0.0);
  CHECK(token_f1("a a b", "a b b") == doctest::Approx(2.0 / 3.0));
  CHECK(token_f1("", "") == 1.0);
  CHECK(token_f1("...", "Paris") == 0.0);
}

TEST_CASE("fallback judge") {
  const auto exact = fallback_label(kKey, "Paris", "paris.");
  CHECK(exact.z == 1);
  CHECK(exact.judge == JudgeKind::ExactMatch);
  CHECK(exact.key == kKey);
  CHECK_FALSE(exact.exact_answer_span.has_value());

  const auto partial = fallback_label(kKey, "the capital is Paris", "Paris", 0.5);
  CHECK(partial.z == 0);
  CHECK(partial.judge == JudgeKind::TokenF1);
  CHECK(fallback_label(kKey, "the capital is Paris", "Paris", 0.4).z == 1);

  const auto wrong = fallback_label(kKey, "London", "Paris");
  CHECK(wrong.z == 0);
}

TEST_CASE("label json") {
  LabelRecord r{kKey, 1, TokenSpan{2, 4}, JudgeKind::Llm};
  const auto j = to_json(r);
  CHECK(j.at("question_id") == "q7");
  CHECK(j.at("condition") == "WIC");
  CHECK(j.at("sample_index") == 3);
  CHECK(j.at("z") == 1);
  CHECK(j.at("exact_answer_span") == nlohmann::json{{"begin", 2}, {"end", 4}});
  CHECK(j.at("judge") == "llm");
  CHECK(label_from_json(j) == r);

  r.exact_answer_span.reset();
  CHECK(to_json(r).at("exact_answer_span").is_null());
  CHECK(label_from_json(to_json(r)) == r);

  auto bad = j;
  bad["z"] = 2;
  CHECK(kind_of([&] { label_from_json(bad); }) == ErrorKind::Data);
  bad = j;
  bad["exact_answer_span"] = {{"begin", 3}, {"end", 3}};
  CHECK(kind_of([&] { label_from_json(bad); }) == ErrorKind::Data);
  bad = j;
  bad.erase("z");
  CHECK(kind_of([&] { label_from_json(bad); }) == ErrorKind::Data);
}

TEST_CASE("label files are order independent") {
  TempDir dir;
  std::vector<LabelRecord> labels;
  for (std::uint32_t i = 0; i < 40; ++i) {
    labels.push_back({{"q" + std::to_string(i % 7), kAllConditions[i % 3], i},
                      static_cast<int>(i % 2),
                      i % 5 == 0 ? std::nullopt : std::optional<TokenSpan>(TokenSpan{0, 1 + i % 3}),
                      JudgeKind::Llm});
  }
  write_labels(dir / "a.jsonl", labels);
  SplitMix64 rng(3);
  auto shuffled = labels;
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  write_labels(dir / "b.jsonl", shuffled);
  const auto a = read_labels(dir / "a.jsonl");
  const auto b = read_labels(dir / "b.jsonl");
  CHECK(a.size() == 40);
  CHECK(a == b);
}

TEST_CASE("label file errors") {
  TempDir dir;
  {
    std::ofstream out(dir / "dup.jsonl");
    const auto line = to_json(LabelRecord{kKey, 1, std::nullopt, JudgeKind::Llm}).dump();
    out << line << "\n\n" << line << "\n";
  }
  CHECK(kind_of([&] { read_labels(dir / "dup.jsonl"); }) == ErrorKind::Data);
  {
    std::ofstream out(dir / "garbage.jsonl");
    out << "{not json\n";
  }
  try {
    read_labels(dir / "garbage.jsonl");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }
}
