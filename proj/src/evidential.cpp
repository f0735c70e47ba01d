// SPDX-License-Identifier: Apache-2.0

#include "evprobe/evidential.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "evprobe/error.hpp"

namespace evprobe::evidential {

namespace {

// Below this the recurrence is applied before the asymptotic series.
constexpr double kAsymptoticFrom = 10.0;

double softplus(double x) {
  // log(1 + e^x) without overflow for large x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
EvidenceVector make_evidence(std::span<const T> logits,
                             EvidenceTransform transform) {
  if (logits.size() < 2) {
    fail(ErrorKind::Shape, "evidence needs at least 2 logits, got " +
                               std::to_string(logits.size()));
  }
  std::vector<double> values(logits.begin(), logits.end());
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::Data, "non-finite logit");
  }
  switch (transform) {
    case EvidenceTransform::Relu:
      for (double& v : values) v = std::max(v, 0.0);
      break;
    case EvidenceTransform::Softplus:
      for (double& v : values) v = softplus(v);
      break;
    case EvidenceTransform::ShiftMin: {
      const double lo = *std::min_element(values.begin(), values.end());
      for (double& v : values) v -= lo;
      break;
    }
  }
  return EvidenceVector(std::move(values), transform);
}

double expected_entropy(std::span<const double> params) {
  const double total = std::accumulate(params.begin(), params.end(), 0.0);
  const double psi_total = digamma(total + 1.0);
  double acc = 0.0;
  for (double p : params) {
    // p == 0 contributes (0 / total) * finite == 0.
    if (p > 0.0) acc += (p / total) * (digamma(p + 1.0) - psi_total);
  }
  return -acc;
}

std::vector<std::size_t> ranked_indices(std::span<const double> values,
                                        std::size_t count, bool ascending) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return ascending ? values[a] < values[b] : values[a] > values[b];
  });
  idx.resize(std::min(count, idx.size()));
  return idx;
}

double mean_at(std::span<const double> values,
               const std::vector<std::size_t>& idx) {
  double acc = 0.0;
  for (std::size_t i : idx) acc += values[i];
  return acc / static_cast<double>(idx.size());
}

}  // namespace

std::string_view to_string(EvidenceTransform t) noexcept {
  switch (t) {
    case EvidenceTransform::Relu: return "relu";
    case EvidenceTransform::Softplus: return "softplus";
    case EvidenceTransform::ShiftMin: return "shift-min";
  }
  return "relu";
}

EvidenceTransform parse_transform(std::string_view name) {
  if (name == "relu") return EvidenceTransform::Relu;
  if (name == "softplus") return EvidenceTransform::Softplus;
  if (name == "shift-min") return EvidenceTransform::ShiftMin;
  fail(ErrorKind::Config, "unknown evidence transform '" + std::string(name) + "'");
}

std::string_view to_string(AleatoricForm f) noexcept {
  return f == AleatoricForm::Alpha ? "alpha" : "verbatim";
}

AleatoricForm parse_aleatoric_form(std::string_view name) {
  if (name == "verbatim") return AleatoricForm::Verbatim;
  if (name == "alpha") return AleatoricForm::Alpha;
  fail(ErrorKind::Config, "unknown aleatoric form '" + std::string(name) + "'");
}

EvidenceVector::EvidenceVector(std::vector<double> values,
                               EvidenceTransform transform)
    : values_(std::move(values)), transform_(transform) {
  if (values_.size() < 2) fail(ErrorKind::Shape, "evidence vector needs K >= 2");
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) {
      fail(ErrorKind::Data, "evidence must be finite and non-negative");
    }
  }
}

double EvidenceVector::total() const noexcept {
  return std::accumulate(values_.begin(), values_.end(), 0.0);
}

double digamma(double x) {
  if (!std::isfinite(x) || x <= 0.0) {
    fail(ErrorKind::Domain, "digamma requires a finite positive argument");
  }
  double result = 0.0;
  while (x < kAsymptoticFrom) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // Asymptotic expansion with Bernoulli-number coefficients.
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 -
                                              inv2 * (691.0 / 32760 -
                                                      inv2 * (1.0 / 12)))))));
  return result + std::log(x) - 0.5 * inv - series;
}

EvidenceVector evidence_from_logits(std::span<const double> topk_logits,
                                    EvidenceTransform transform) {
  return make_evidence(topk_logits, transform);
}

EvidenceVector evidence_from_logits(std::span<const float> topk_logits,
                                    EvidenceTransform transform) {
  return make_evidence(topk_logits, transform);
}

double aleatoric_uncertainty(const EvidenceVector& e, AleatoricForm form) {
  if (form == AleatoricForm::Alpha) {
    std::vector<double> alpha(e.values().begin(), e.values().end());
    for (double& a : alpha) a += 1.0;
    return expected_entropy(alpha);
  }
  if (e.total() <= kZeroEvidence) return std::log(static_cast<double>(e.k()));
  return expected_entropy(e.values());
}

double epistemic_uncertainty(const EvidenceVector& e) {
  const double k = static_cast<double>(e.k());
  return k / (e.total() + k);
}

double token_reliability(double au, double eu) { return -au * eu; }

TokenScores score_token(std::span<const float> topk_row, double logprob,
                        std::size_t k_evidence, EvidenceTransform transform,
                        AleatoricForm form) {
  if (k_evidence > topk_row.size()) {
    fail(ErrorKind::Shape, "k_evidence " + std::to_string(k_evidence) +
                               " exceeds stored top-K width " +
                               std::to_string(topk_row.size()));
  }
  const auto e = evidence_from_logits(topk_row.first(k_evidence), transform);
  TokenScores s;
  s.au = aleatoric_uncertainty(e, form);
  s.eu = epistemic_uncertainty(e);
  s.logprob = logprob;
  s.reliability = token_reliability(s.au, s.eu);
  return s;
}

double score_response_logprob(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) fail(ErrorKind::Data, "empty response");
  return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0) /
         static_cast<double>(token_logprobs.size());
}

double score_response_logtoku(std::span<const double> token_reliabilities,
                              std::size_t k_agg) {
  if (token_reliabilities.empty()) fail(ErrorKind::Data, "empty response");
  if (k_agg == 0) fail(ErrorKind::Config, "k_agg must be >= 1");
  return mean_at(token_reliabilities,
                 smallest_indices(token_reliabilities, k_agg));
}

UncertaintyBounds uncertainty_bounds(std::span<const double> token_scores,
                                     std::size_t k_bound) {
  if (token_scores.empty()) fail(ErrorKind::Data, "empty response");
  if (k_bound == 0) fail(ErrorKind::Config, "k_bound must be >= 1");
  UncertaintyBounds b;
  b.k_bound = k_bound;
  b.lower = mean_at(token_scores, smallest_indices(token_scores, k_bound));
  b.upper = mean_at(token_scores, largest_indices(token_scores, k_bound));
  return b;
}

std::vector<std::size_t> smallest_indices(std::span<const double> values,
                                          std::size_t count) {
  return ranked_indices(values, count, true);
}

std::vector<std::size_t> largest_indices(std::span<const double> values,
                                         std::size_t count) {
  return ranked_indices(values, count, false);
}

}  // namespace evprobe::evidential
