// SPDX-License-Identifier: Apache-2.0

#include "evprobe/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evprobe/error.hpp"

namespace evprobe::behavior {

namespace {

// P(a < Z < b) for a standard normal Z, accurate in both tails.
double normal_mass(double a, double b) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  if (a >= 0.0) return 0.5 * (std::erfc(a * kInvSqrt2) - std::erfc(b * kInvSqrt2));
  return 0.5 * (std::erfc(-b * kInvSqrt2) - std::erfc(-a * kInvSqrt2));
}

void check_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) fail(ErrorKind::Data, "non-finite sample");
  }
}

}  // namespace

std::string_view to_string(Regime r) noexcept {
  switch (r) {
    case Regime::E: return "E";
    case Regime::MID: return "MID";
    case Regime::C: return "C";
  }
  return "MID";
}

Regime parse_regime(std::string_view name) {
  if (name == "E") return Regime::E;
  if (name == "MID") return Regime::MID;
  if (name == "C") return Regime::C;
  fail(ErrorKind::Config, "unknown regime '" + std::string(name) + "'");
}

double correctness_ratio(std::span<const int> labels) {
  if (labels.empty()) fail(ErrorKind::Data, "correctness ratio of zero responses");
  const int correct = std::accumulate(labels.begin(), labels.end(), 0);
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

Regime classify_regime(double r, const Thresholds& t) {
  if (!(0.0 <= t.tau_e && t.tau_e <= t.tau_c && t.tau_c <= 1.0)) {
    fail(ErrorKind::Config, "thresholds must satisfy 0 <= tau_e <= tau_c <= 1");
  }
  if (r > t.tau_c) return Regime::C;
  if (r < t.tau_e) return Regime::E;
  return Regime::MID;
}

std::string_view to_string(ScoreField f) noexcept {
  switch (f) {
    case ScoreField::EuLower: return "eu_lower";
    case ScoreField::EuUpper: return "eu_upper";
    case ScoreField::AuLower: return "au_lower";
    case ScoreField::AuUpper: return "au_upper";
    case ScoreField::RelLower: return "rel_lower";
    case ScoreField::RelUpper: return "rel_upper";
  }
  return "eu_lower";
}

ScoreField parse_score_field(std::string_view name) {
  for (auto f : {ScoreField::EuLower, ScoreField::EuUpper, ScoreField::AuLower,
                 ScoreField::AuUpper, ScoreField::RelLower, ScoreField::RelUpper}) {
    if (name == to_string(f)) return f;
  }
  fail(ErrorKind::Config, "unknown score field '" + std::string(name) + "'");
}

double field_value(const ResponseScores& s, ScoreField f) noexcept {
  switch (f) {
    case ScoreField::EuLower: return s.eu_lower;
    case ScoreField::EuUpper: return s.eu_upper;
    case ScoreField::AuLower: return s.au_lower;
    case ScoreField::AuUpper: return s.au_upper;
    case ScoreField::RelLower: return s.rel_lower;
    case ScoreField::RelUpper: return s.rel_upper;
  }
  return s.eu_lower;
}

void classify(QuestionRecord& record, const Thresholds& t) {
  std::erase_if(record.conditions,
                [](const auto& kv) { return kv.second.responses.empty(); });
  for (auto& [cond, rec] : record.conditions) {
    std::sort(rec.responses.begin(), rec.responses.end(),
              [](const ResponseScores& a, const ResponseScores& b) {
                return a.sample_index < b.sample_index;
              });
    std::vector<int> z;
    z.reserve(rec.responses.size());
    for (const auto& r : rec.responses) z.push_back(r.z);
    rec.ratio = correctness_ratio(z);
    rec.regime = classify_regime(rec.ratio, t);
  }
}

std::string to_string(const RegimeRef& r) {
  return std::string(to_string(r.condition)) + ":" + std::string(to_string(r.regime));
}

RegimeRef parse_regime_ref(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    fail(ErrorKind::Config, "expected CONDITION:REGIME, got '" + std::string(text) + "'");
  }
  return {parse_condition(text.substr(0, colon)), parse_regime(text.substr(colon + 1))};
}

std::string to_string(const Transition& t) {
  return to_string(t.from) + "->" + to_string(t.to);
}

Transition parse_transition(std::string_view text) {
  const auto arrow = text.find("->");
  if (arrow == std::string_view::npos) {
    fail(ErrorKind::Config, "expected FROM->TO, got '" + std::string(text) + "'");
  }
  return {parse_regime_ref(text.substr(0, arrow)), parse_regime_ref(text.substr(arrow + 2))};
}

std::string_view to_string(Pooling p) noexcept {
  return p == Pooling::PerQuestion ? "question" : "response";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "response") return Pooling::PerResponse;
  if (name == "question") return Pooling::PerQuestion;
  fail(ErrorKind::Config, "unknown pooling '" + std::string(name) + "'");
}

TransitionSet find_transitions(std::span<const QuestionRecord> records,
                               const Transition& transition, ScoreField field,
                               Pooling pooling) {
  TransitionSet set;
  set.transition = transition;
  auto append = [&](const ConditionRecord& rec, std::vector<double>& out) {
    if (pooling == Pooling::PerResponse) {
      for (const auto& r : rec.responses) out.push_back(field_value(r, field));
      return;
    }
    double acc = 0.0;
    for (const auto& r : rec.responses) acc += field_value(r, field);
    out.push_back(acc / static_cast<double>(rec.responses.size()));
  };
  for (const auto& q : records) {
    auto from = q.conditions.find(transition.from.condition);
    auto to = q.conditions.find(transition.to.condition);
    if (from == q.conditions.end() || to == q.conditions.end()) {
      ++set.skipped;
      continue;
    }
    if (from->second.regime != transition.from.regime ||
        to->second.regime != transition.to.regime) {
      continue;
    }
    set.question_ids.push_back(q.question_id);
    append(from->second, set.from_samples);
    append(to->second, set.to_samples);
  }
  std::sort(set.question_ids.begin(), set.question_ids.end());
  return set;
}

double silverman_bandwidth(std::span<const double> samples) {
  const std::size_t n = samples.size();
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  double spread = 0.0;
  if (n >= 2) {
    const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) /
                        static_cast<double>(n);
    double ss = 0.0;
    for (double x : sorted) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    // A zero IQR with positive variance (heavy ties) falls back to sd alone.
    spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  }
  double scale = 1.0;
  for (double x : samples) scale = std::max(scale, std::abs(x));
  // Spread at rounding level means all samples are (numerically) equal.
  if (spread > 1e-12 * scale) {
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  }
  return 1e-3 * scale;
}

DensityCurve kde(std::span<const double> samples, Bandwidth bandwidth) {
  if (samples.size() < 2) fail(ErrorKind::Data, "KDE needs at least 2 samples");
  check_finite(samples);
  DensityCurve curve;
  if (bandwidth.rule == Bandwidth::Rule::Fixed) {
    if (!(bandwidth.h > 0.0) || !std::isfinite(bandwidth.h)) {
      fail(ErrorKind::Config, "fixed KDE bandwidth must be positive");
    }
    curve.bandwidth = bandwidth.h;
  } else {
    curve.bandwidth = silverman_bandwidth(samples);
  }
  const double h = curve.bandwidth;
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it - 3.0 * h;
  const double hi = *hi_it + 3.0 * h;
  const double step = (hi - lo) / static_cast<double>(kKdeGridPoints - 1);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * step);

  curve.grid.resize(kKdeGridPoints);
  curve.density.resize(kKdeGridPoints);
  for (std::size_t i = 0; i < kKdeGridPoints; ++i) {
    const double x = lo + step * static_cast<double>(i);
    double acc = 0.0;
    for (double s : samples) {
      acc += normal_mass((x - 0.5 * step - s) / h, (x + 0.5 * step - s) / h);
    }
    curve.grid[i] = x;
    curve.density[i] = acc * norm;
  }
  return curve;
}

double integrate(const DensityCurve& curve) {
  double acc = 0.0;
  for (std::size_t i = 1; i < curve.grid.size(); ++i) {
    acc += 0.5 * (curve.density[i] + curve.density[i - 1]) *
           (curve.grid[i] - curve.grid[i - 1]);
  }
  return acc;
}

double density_at(const DensityCurve& curve, double x) {
  if (curve.grid.empty() || x < curve.grid.front() || x > curve.grid.back()) return 0.0;
  auto it = std::upper_bound(curve.grid.begin(), curve.grid.end(), x);
  if (it == curve.grid.end()) return curve.density.back();
  const std::size_t i = static_cast<std::size_t>(it - curve.grid.begin());
  const double x0 = curve.grid[i - 1];
  const double x1 = curve.grid[i];
  const double w = (x - x0) / (x1 - x0);
  return (1.0 - w) * curve.density[i - 1] + w * curve.density[i];
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorKind::Data, "quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(i);
  return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

DistributionSummary summarize_distribution(std::span<const double> samples) {
  if (samples.empty()) fail(ErrorKind::Data, "summary of empty sample");
  check_finite(samples);
  DistributionSummary s;
  s.n = samples.size();
  const double n = static_cast<double>(s.n);
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double m2 = 0.0;
  double m3 = 0.0;
  for (double x : samples) {
    const double d = x - s.mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  if (s.n >= 2) s.variance = m2 / (n - 1.0);
  m2 /= n;
  m3 /= n;
  if (s.n >= 3 && m2 > 0.0) {
    const double g1 = m3 / std::pow(m2, 1.5);
    s.skewness = std::sqrt(n * (n - 1.0)) / (n - 2.0) * g1;
  }
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < kSummaryQuantiles.size(); ++i) {
    s.quantiles[i] = quantile_sorted(sorted, kSummaryQuantiles[i]);
  }
  return s;
}

}  // namespace evprobe::behavior
