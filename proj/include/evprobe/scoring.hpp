#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstddef>
#include <optional>
#include <vector>

#include <json.hpp>

#include "evprobe/evidential.hpp"
#include "evprobe/trace.hpp"

namespace evprobe {

struct ScoringConfig {
  std::size_t k_evidence = evidential::kDefaultKEvidence;
  evidential::EvidenceTransform transform = evidential::EvidenceTransform::Relu;
  evidential::AleatoricForm au_form = evidential::AleatoricForm::Verbatim;
  std::size_t k_agg = evidential::kDefaultKAgg;
  std::size_t k_bound = evidential::kDefaultKAgg;
};

/// Per-token AU/EU/log-prob/reliability of a whole response.
std::vector<evidential::TokenScores> score_tokens(const GenerationTrace& trace,
                                                  const ScoringConfig& config);

/// Every response-level score of one trace.
struct ResponseScoreRow {
  TraceKey key;
  std::size_t length = 0;
  double logprob = 0.0;
  double logtoku = 0.0;
  std::optional<double> p_true;
  double mean_au = 0.0;
  double mean_eu = 0.0;
  evidential::UncertaintyBounds eu;
  evidential::UncertaintyBounds au;
  evidential::UncertaintyBounds reliability;
};

/// Scores a trace. An invalid stored p_true is dropped (left empty) rather
/// than failing the whole row.
ResponseScoreRow score_response(const GenerationTrace& trace,
                                const ScoringConfig& config);

nlohmann::json to_json(const ResponseScoreRow& row);

}  // namespace evprobe
