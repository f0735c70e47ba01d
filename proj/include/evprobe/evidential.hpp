#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file evidential.hpp
 * @brief Token-level Dirichlet uncertainty from top-K logits.
 *
 * The top-K logits at one generation step are turned into non-negative
 * evidence a_1..a_K (total a_0). From that evidence:
 *
 *   AU = -sum_k (a_k / a_0) * (psi(a_k + 1) - psi(a_0 + 1))
 *   EU = K / sum_k (a_k + 1)
 *   reliability = -AU * EU
 *
 * Response-level scores (mean log-prob, LogTokU, lower/upper bounds) are
 * aggregations over per-token values. Everything here is pure and
 * computed in double precision.
 */

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace evprobe::evidential {

/// Degenerate total-evidence threshold: at or below this, AU is ln K.
inline constexpr double kZeroEvidence = 1e-12;

/// Default number of top logits used as evidence per token.
inline constexpr std::size_t kDefaultKEvidence = 10;
/// Default K for LogTokU and for the uncertainty bounds.
inline constexpr std::size_t kDefaultKAgg = 10;

enum class EvidenceTransform { Relu, Softplus, ShiftMin };

std::string_view to_string(EvidenceTransform t) noexcept;
/// Accepts "relu", "softplus", "shift-min". Throws Config on anything else.
EvidenceTransform parse_transform(std::string_view name);

/// Which expected-entropy form AU uses. `Verbatim` divides by the raw
/// evidence a_k/a_0; `Alpha` uses Dirichlet parameters alpha_k = a_k + 1.
enum class AleatoricForm { Verbatim, Alpha };

std::string_view to_string(AleatoricForm f) noexcept;
AleatoricForm parse_aleatoric_form(std::string_view name);

class EvidenceVector {
 public:
  /// Validates K >= 2 and every value finite and >= 0.
  EvidenceVector(std::vector<double> values, EvidenceTransform transform);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t k() const noexcept { return values_.size(); }
  EvidenceTransform transform() const noexcept { return transform_; }
  double total() const noexcept;

 private:
  std::vector<double> values_;
  EvidenceTransform transform_;
};

struct TokenScores {
  double au = 0.0;
  double eu = 1.0;
  double logprob = 0.0;
  double reliability = 0.0;
};

struct UncertaintyBounds {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t k_bound = 0;
};

/// Digamma function. Throws Domain for x <= 0 or non-finite x.
double digamma(double x);

/// Maps raw logits to evidence, preserving order. Throws Shape for K < 2
/// and Data for non-finite logits.
EvidenceVector evidence_from_logits(std::span<const double> topk_logits,
                                    EvidenceTransform transform);
EvidenceVector evidence_from_logits(std::span<const float> topk_logits,
                                    EvidenceTransform transform);

double aleatoric_uncertainty(const EvidenceVector& e,
                             AleatoricForm form = AleatoricForm::Verbatim);
double epistemic_uncertainty(const EvidenceVector& e);
double token_reliability(double au, double eu);

/// Scores one token from its top-K logit row; only the first `k_evidence`
/// entries of the row are used.
TokenScores score_token(std::span<const float> topk_row, double logprob,
                        std::size_t k_evidence, EvidenceTransform transform,
                        AleatoricForm form = AleatoricForm::Verbatim);

/// Mean chosen-token log-probability. Throws Data on empty input.
double score_response_logprob(std::span<const double> token_logprobs);

/// Mean of the min(k_agg, T) smallest reliabilities; ties by token index.
double score_response_logtoku(std::span<const double> token_reliabilities,
                              std::size_t k_agg = kDefaultKAgg);

UncertaintyBounds uncertainty_bounds(std::span<const double> token_scores,
                                     std::size_t k_bound = kDefaultKAgg);

/// Indices of the `count` smallest values (stable by index), in rank order.
std::vector<std::size_t> smallest_indices(std::span<const double> values,
                                          std::size_t count);
/// Indices of the `count` largest values (stable by index), in rank order.
std::vector<std::size_t> largest_indices(std::span<const double> values,
                                         std::size_t count);

}  // namespace evprobe::evidential
