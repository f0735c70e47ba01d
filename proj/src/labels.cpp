// SPDX-License-Identifier: Apache-2.0

#include "evprobe/labels.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "evprobe/error.hpp"

namespace evprobe {

std::string_view to_string(JudgeKind j) noexcept {
  switch (j) {
    case JudgeKind::Llm: return "llm";
    case JudgeKind::ExactMatch: return "exact-match";
    case JudgeKind::TokenF1: return "token-f1";
  }
  return "llm";
}

JudgeKind parse_judge(std::string_view name) {
  if (name == "llm") return JudgeKind::Llm;
  if (name == "exact-match") return JudgeKind::ExactMatch;
  if (name == "token-f1") return JudgeKind::TokenF1;
  fail(ErrorKind::Data, "unknown judge '" + std::string(name) + "'");
}

nlohmann::json to_json(const LabelRecord& label) {
  nlohmann::json j = {{"question_id", label.key.question_id},
                      {"condition", to_string(label.key.condition)},
                      {"sample_index", label.key.sample_index},
                      {"z", label.z},
                      {"exact_answer_span", nullptr},
                      {"judge", to_string(label.judge)}};
  if (label.exact_answer_span) {
    j["exact_answer_span"] = {{"begin", label.exact_answer_span->begin},
                              {"end", label.exact_answer_span->end}};
  }
  return j;
}

LabelRecord label_from_json(const nlohmann::json& j) {
  LabelRecord label;
  try {
    label.key.question_id = j.at("question_id").get<std::string>();
    label.key.condition = parse_condition(j.at("condition").get<std::string>());
    label.key.sample_index = j.at("sample_index").get<std::uint32_t>();
    label.z = j.at("z").get<int>();
    if (j.contains("judge")) label.judge = parse_judge(j.at("judge").get<std::string>());
    if (j.contains("exact_answer_span") && !j.at("exact_answer_span").is_null()) {
      const auto& s = j.at("exact_answer_span");
      label.exact_answer_span = TokenSpan{s.at("begin").get<std::uint32_t>(),
                                          s.at("end").get<std::uint32_t>()};
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::Data, std::string("malformed label: ") + ex.what());
  } catch (const Error& ex) {
    fail(ErrorKind::Data, std::string("malformed label: ") + ex.what());
  }
  if (label.z != 0 && label.z != 1) fail(ErrorKind::Data, "label z must be 0 or 1");
  if (label.exact_answer_span &&
      label.exact_answer_span->begin >= label.exact_answer_span->end) {
    fail(ErrorKind::Data, "exact_answer_span must be non-empty");
  }
  return label;
}

LabelMap read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open labels " + path.string());
  LabelMap labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      fail(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) +
                                ": not valid JSON");
    }
    LabelRecord label;
    try {
      label = label_from_json(j);
    } catch (const Error& ex) {
      fail(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    const TraceKey key = label.key;
    if (!labels.emplace(key, std::move(label)).second) {
      fail(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) +
                                ": duplicate label for " + to_string(key));
    }
  }
  return labels;
}

void write_labels(const std::filesystem::path& path,
                  const std::vector<LabelRecord>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write labels " + path.string());
  for (const auto& l : labels) out << to_json(l).dump() << '\n';
}

std::vector<std::string> normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::vector<std::string> tokens;
  std::istringstream ss(cleaned);
  for (std::string tok; ss >> tok;) tokens.push_back(std::move(tok));
  return tokens;
}

double token_f1(std::string_view prediction, std::string_view gold) {
  const auto pred = normalize_answer(prediction);
  const auto ref = normalize_answer(gold);
  if (pred.empty() || ref.empty()) return pred.empty() && ref.empty() ? 1.0 : 0.0;
  std::map<std::string, int> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

LabelRecord fallback_label(const TraceKey& key, std::string_view response_text,
                           std::string_view gold_answer, double theta) {
  LabelRecord label;
  label.key = key;
  if (normalize_answer(response_text) == normalize_answer(gold_answer)) {
    label.z = 1;
    label.judge = JudgeKind::ExactMatch;
    return label;
  }
  label.judge = JudgeKind::TokenF1;
  label.z = token_f1(response_text, gold_answer) >= theta ? 1 : 0;
  return label;
}

}  // namespace evprobe
