#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file probe.hpp
 * @brief Linear probes on hidden states and the AUROC metric.
 *
 * A probe is an L2-regularized logistic regression trained on one
 * feature vector per response: the hidden state of one selected token, or
 * the mean over a selected token subset. Token choice is driven by the
 * per-token epistemic uncertainty (or the exact answer span / last token).
 */

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evprobe/labels.hpp"
#include "evprobe/trace.hpp"

namespace evprobe::probe {

// ---------------------------------------------------------------------------
// Token selection

struct AvgSubset {
  enum class Kind { EuLow, EuHigh, EuLowPlusEos, EuHighPlusEos, FirstLast };
  Kind kind = Kind::FirstLast;
  int k = 0;  // 1..5, unused for FirstLast

  bool operator==(const AvgSubset&) const = default;
};

/// EOS, EXACT, EU_RANK(j) or AVG. An AVG selection without a subset means
/// "best subset chosen on an inner validation split" and is only meaningful
/// inside a sweep.
struct TokenSelection {
  enum class Strategy { Eos, Exact, EuRank, Avg };
  Strategy strategy = Strategy::Eos;
  int rank = 0;  // EuRank: j in -5..-1 (largest) or 1..5 (smallest)
  std::optional<AvgSubset> subset;

  static TokenSelection eos() { return {Strategy::Eos, 0, std::nullopt}; }
  static TokenSelection exact() { return {Strategy::Exact, 0, std::nullopt}; }
  static TokenSelection eu_rank(int j);
  static TokenSelection avg(std::optional<AvgSubset> subset = std::nullopt);

  bool operator==(const TokenSelection&) const = default;
};

/// "eos", "exact", "eu:-1", "avg", "avg:eu-low-3", "avg:eu-high-2-plus-eos",
/// "avg:first-last".
std::string to_string(const TokenSelection& s);
TokenSelection parse_selection(std::string_view text);

/// The fixed AVG candidate list: eu-low-k, eu-low-k-plus-eos, eu-high-k,
/// eu-high-k-plus-eos for k = 1..5, then first-last.
std::vector<AvgSubset> avg_candidates();

/// The default sweep columns: eos, exact, eu:1..5, eu:-1..-5, avg.
std::vector<TokenSelection> default_selections();

/// Sorted, deduplicated token indices for one response. `token_scores` has
/// one entry per token (T = size). Throws Selection for EXACT without a
/// usable span and for an AVG selection without a subset.
std::vector<std::size_t> select_tokens(std::span<const double> token_scores,
                                       const TokenSelection& selection,
                                       const std::optional<TokenSpan>& span = std::nullopt);

/// Mean of the selected rows of the layer's hidden states. Throws Schema for
/// a missing layer and Shape for empty/out-of-range indices.
std::vector<double> build_feature(const GenerationTrace& trace, int layer_index,
                                  std::span<const std::size_t> indices);
std::vector<double> build_feature(const Matrix& hidden,
                                  std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Logistic regression

/// Row-major N x d double matrix of probe features.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(std::size_t cols) : cols_(cols) {}
  FeatureMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  void append(std::span<const double> row);
  FeatureMatrix subset(std::span<const std::size_t> rows) const;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline constexpr double kDefaultL2 = 1.0;
inline constexpr int kDefaultMaxIter = 1000;
inline constexpr double kDefaultTol = 1e-6;
inline constexpr std::uint64_t kDefaultSplitSeed = 42;
inline constexpr double kTestFraction = 0.3;
inline constexpr double kInnerValFraction = 0.2;
inline constexpr double kMinStd = 1e-8;

struct ProbeHyper {
  double l2 = kDefaultL2;
  int max_iter = kDefaultMaxIter;
  double tol = kDefaultTol;
  std::uint64_t split_seed = kDefaultSplitSeed;
};

struct TrainMeta {
  std::uint64_t split_seed = 0;
  int iterations = 0;
  double final_loss = 0.0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::vector<double> loss_history;  // objective after each accepted step
};

struct ProbeModel {
  int layer_index = -1;
  TokenSelection selection;
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  TrainMeta train_meta;
};

/// Objective value and gradient at (w, b) for already-standardized features:
/// mean logistic loss + l2 * |w|^2 / 2 (the bias is not penalized).
struct Objective {
  double loss = 0.0;
  std::vector<double> grad_w;
  double grad_b = 0.0;
};

Objective logistic_objective(const FeatureMatrix& standardized,
                             std::span<const int> labels,
                             std::span<const double> w, double b, double l2);

/// Fits on every row given. Standardization stats come from these rows.
/// Throws Training when only one class is present and Data on non-finite
/// features.
ProbeModel fit_probe(const FeatureMatrix& features, std::span<const int> labels,
                     const ProbeHyper& hyper);

/// sigmoid(w . standardize(x) + b). Throws Schema on dimension mismatch.
double predict_probe(const ProbeModel& model, std::span<const double> feature);
std::vector<double> predict_probe(const ProbeModel& model,
                                  const FeatureMatrix& features);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded permutation; the first ceil(fraction * n) permuted indices form
/// the test part. Both parts are returned sorted.
Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

struct TrainResult {
  ProbeModel model;
  Split split;
  double test_auroc = 0.0;
};

/// 70/30 split by hyper.split_seed, fit on train, AUROC on test. Throws
/// Data for N < 10, Training for a single-class train split and Metric for
/// a single-class test split.
TrainResult train_probe(const FeatureMatrix& features, std::span<const int> labels,
                        const ProbeHyper& hyper);

// ---------------------------------------------------------------------------
// Metrics and baselines

/// Rank-statistic AUROC with average ranks for ties; positives are label 1.
/// Throws Metric if either class is absent and Shape on size mismatch.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// P(True) stored with the trace. Throws MethodUnavailable when absent and
/// Data when outside [0, 1].
double score_p_true(const GenerationTrace& trace);

}  // namespace evprobe::probe
