#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file behavior.hpp
 * @brief Correctness regimes across context conditions.
 *
 * Each question is sampled M times per condition. The fraction of correct
 * samples r puts the question in a regime: C (r > tau_c), E (r < tau_e) or
 * MID in between. Questions whose regime changes between two conditions
 * form transition sets, whose per-response uncertainty scores are then
 * summarized and smoothed with a Gaussian KDE.
 */

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evprobe/trace.hpp"

namespace evprobe::behavior {

inline constexpr double kDefaultTauC = 0.6;
inline constexpr double kDefaultTauE = 0.4;
inline constexpr std::size_t kKdeGridPoints = 256;

/// Ordered so that E < MID < C.
enum class Regime { E = 0, MID = 1, C = 2 };

std::string_view to_string(Regime r) noexcept;
Regime parse_regime(std::string_view name);

struct Thresholds {
  double tau_c = kDefaultTauC;
  double tau_e = kDefaultTauE;
};

/// Throws Data on empty input.
double correctness_ratio(std::span<const int> labels);
/// Throws Config unless 0 <= tau_e <= tau_c <= 1.
Regime classify_regime(double r, const Thresholds& t = {});

/// Per-response scores carried alongside the labels; the analysis picks one
/// of these as the KDE sample.
struct ResponseScores {
  std::uint32_t sample_index = 0;
  int z = 0;
  double eu_lower = 0.0;
  double eu_upper = 0.0;
  double au_lower = 0.0;
  double au_upper = 0.0;
  double rel_lower = 0.0;
  double rel_upper = 0.0;
};

enum class ScoreField { EuLower, EuUpper, AuLower, AuUpper, RelLower, RelUpper };

std::string_view to_string(ScoreField f) noexcept;
ScoreField parse_score_field(std::string_view name);
double field_value(const ResponseScores& s, ScoreField f) noexcept;

struct ConditionRecord {
  std::vector<ResponseScores> responses;  // sorted by sample_index
  double ratio = 0.0;
  Regime regime = Regime::MID;
};

struct QuestionRecord {
  std::string question_id;
  std::map<Condition, ConditionRecord> conditions;
};

/// Fills ratio and regime of every condition from its response labels.
/// Conditions with no responses are removed.
void classify(QuestionRecord& record, const Thresholds& t = {});

struct RegimeRef {
  Condition condition = Condition::WOC;
  Regime regime = Regime::E;

  bool operator==(const RegimeRef&) const = default;
};

std::string to_string(const RegimeRef& r);
/// Parses "WOC:E".
RegimeRef parse_regime_ref(std::string_view text);

struct Transition {
  RegimeRef from;
  RegimeRef to;

  bool operator==(const Transition&) const = default;
};

std::string to_string(const Transition& t);
/// Parses "WOC:E->WCC:C".
Transition parse_transition(std::string_view text);

/// The two transitions analysed by default.
inline const std::array<Transition, 2> kDefaultTransitions = {
    Transition{{Condition::WOC, Regime::E}, {Condition::WCC, Regime::C}},
    Transition{{Condition::WOC, Regime::C}, {Condition::WIC, Regime::E}},
};

enum class Pooling { PerResponse, PerQuestion };

std::string_view to_string(Pooling p) noexcept;
Pooling parse_pooling(std::string_view name);

struct TransitionSet {
  Transition transition;
  std::vector<std::string> question_ids;  // sorted
  std::size_t skipped = 0;                // questions lacking either condition
  std::vector<double> from_samples;
  std::vector<double> to_samples;
};

/// Questions in `records` (already classified) matching both regime
/// predicates. Samples are drawn from `field`, one per response or one mean
/// per question depending on `pooling`.
TransitionSet find_transitions(std::span<const QuestionRecord> records,
                               const Transition& transition,
                               ScoreField field = ScoreField::EuLower,
                               Pooling pooling = Pooling::PerResponse);

struct DensityCurve {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

struct Bandwidth {
  enum class Rule { Silverman, Fixed } rule = Rule::Silverman;
  double h = 0.0;  // used when rule == Fixed

  static Bandwidth silverman() { return {}; }
  static Bandwidth fixed(double h) { return {Rule::Fixed, h}; }
};

/// 0.9 * min(sd, IQR / 1.34) * N^(-1/5); when that is zero the degenerate
/// width 1e-3 * max(|x|, 1) is returned.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE over 256 points spanning [min - 3h, max + 3h]. Each grid
/// value is the average of the density over the grid cell centred on that
/// point, so the curve keeps unit mass even when h is smaller than the
/// grid spacing. Throws Data for N < 2 or non-finite samples.
DensityCurve kde(std::span<const double> samples,
                 Bandwidth bandwidth = Bandwidth::silverman());

/// Trapezoidal integral of the curve.
double integrate(const DensityCurve& curve);
/// Linear interpolation of the density; 0 outside the grid.
double density_at(const DensityCurve& curve, double x);

struct DistributionSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased (N - 1)
  double skewness = 0.0;  // adjusted Fisher-Pearson
  std::array<double, 5> quantiles{};  // 5, 25, 50, 75, 95
};

inline constexpr std::array<double, 5> kSummaryQuantiles = {0.05, 0.25, 0.5,
                                                            0.75, 0.95};

/// Linear-interpolation quantile of already sorted data.
double quantile_sorted(std::span<const double> sorted, double q);
/// Throws Data on empty input.
DistributionSummary summarize_distribution(std::span<const double> samples);

}  // namespace evprobe::behavior
