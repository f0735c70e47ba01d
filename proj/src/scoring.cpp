// SPDX-License-Identifier: Apache-2.0

#include "evprobe/scoring.hpp"

#include "evprobe/error.hpp"
#include "evprobe/probe.hpp"

namespace evprobe {

namespace {

double mean(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

}  // namespace

std::vector<evidential::TokenScores> score_tokens(const GenerationTrace& trace,
                                                  const ScoringConfig& config) {
  std::vector<evidential::TokenScores> out;
  out.reserve(trace.length());
  for (std::size_t t = 0; t < trace.length(); ++t) {
    out.push_back(evidential::score_token(trace.topk_logits.row(t),
                                          trace.chosen_logprobs[t], config.k_evidence,
                                          config.transform, config.au_form));
  }
  return out;
}

ResponseScoreRow score_response(const GenerationTrace& trace,
                                const ScoringConfig& config) {
  const auto tokens = score_tokens(trace, config);
  if (tokens.empty()) fail(ErrorKind::Data, "empty response " + to_string(trace.key));
  std::vector<double> lp, au, eu, rel;
  for (const auto& s : tokens) {
    lp.push_back(s.logprob);
    au.push_back(s.au);
    eu.push_back(s.eu);
    rel.push_back(s.reliability);
  }
  ResponseScoreRow row;
  row.key = trace.key;
  row.length = tokens.size();
  row.logprob = evidential::score_response_logprob(lp);
  row.logtoku = evidential::score_response_logtoku(rel, config.k_agg);
  row.mean_au = mean(au);
  row.mean_eu = mean(eu);
  row.eu = evidential::uncertainty_bounds(eu, config.k_bound);
  row.au = evidential::uncertainty_bounds(au, config.k_bound);
  row.reliability = evidential::uncertainty_bounds(rel, config.k_bound);
  try {
    row.p_true = probe::score_p_true(trace);
  } catch (const Error&) {
    row.p_true.reset();
  }
  return row;
}

nlohmann::json to_json(const ResponseScoreRow& row) {
  nlohmann::json j = {{"question_id", row.key.question_id},
                      {"condition", to_string(row.key.condition)},
                      {"sample_index", row.key.sample_index},
                      {"T", row.length},
                      {"logprob", row.logprob},
                      {"logtoku", row.logtoku},
                      {"mean_au", row.mean_au},
                      {"mean_eu", row.mean_eu},
                      {"eu_lower", row.eu.lower},
                      {"eu_upper", row.eu.upper},
                      {"au_lower", row.au.lower},
                      {"au_upper", row.au.upper},
                      {"rel_lower", row.reliability.lower},
                      {"rel_upper", row.reliability.upper}};
  if (row.p_true) j["p_true"] = *row.p_true;
  return j;
}

}  // namespace evprobe
