#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evprobe/trace.hpp"

namespace evprobe {

enum class JudgeKind { Llm, ExactMatch, TokenF1 };

std::string_view to_string(JudgeKind j) noexcept;
JudgeKind parse_judge(std::string_view name);

/// Half-open token range [begin, end) into the response.
struct TokenSpan {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  bool operator==(const TokenSpan&) const = default;
};

struct LabelRecord {
  TraceKey key;
  int z = 0;
  std::optional<TokenSpan> exact_answer_span;
  JudgeKind judge = JudgeKind::Llm;

  bool operator==(const LabelRecord&) const = default;
};

using LabelMap = std::map<TraceKey, LabelRecord>;

/// Default similarity threshold of the fallback judge.
inline constexpr double kDefaultTheta = 0.5;

nlohmann::json to_json(const LabelRecord& label);
/// Throws Data for missing fields, z outside {0,1} or an empty span.
LabelRecord label_from_json(const nlohmann::json& j);

/// One JSON object per line. Blank lines are skipped. Throws Data naming
/// the line on malformed input and on duplicate keys.
LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path,
                  const std::vector<LabelRecord>& labels);

/// Lower-cases ASCII, drops ASCII punctuation and splits on whitespace.
std::vector<std::string> normalize_answer(std::string_view text);
/// SQuAD-style bag-of-tokens F1 between normalized strings.
double token_f1(std::string_view prediction, std::string_view gold);

/// z = 1 when the normalized strings match exactly or token F1 >= theta.
LabelRecord fallback_label(const TraceKey& key, std::string_view response_text,
                           std::string_view gold_answer,
                           double theta = kDefaultTheta);

}  // namespace evprobe
