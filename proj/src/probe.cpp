// SPDX-License-Identifier: Apache-2.0

#include "evprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evprobe/error.hpp"
#include "evprobe/evidential.hpp"
#include "evprobe/rng.hpp"

namespace evprobe::probe {

namespace {

constexpr int kMaxAvgK = 5;
constexpr double kArmijo = 1e-4;
constexpr double kMinStep = 1e-20;

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string_view subset_name(AvgSubset::Kind kind) {
  switch (kind) {
    case AvgSubset::Kind::EuLow: return "eu-low";
    case AvgSubset::Kind::EuHigh: return "eu-high";
    case AvgSubset::Kind::EuLowPlusEos: return "eu-low";
    case AvgSubset::Kind::EuHighPlusEos: return "eu-high";
    case AvgSubset::Kind::FirstLast: return "first-last";
  }
  return "first-last";
}

AvgSubset parse_subset(std::string_view text) {
  if (text == "first-last") return {AvgSubset::Kind::FirstLast, 0};
  const bool plus_eos = text.ends_with("-plus-eos");
  if (plus_eos) text.remove_suffix(std::string_view("-plus-eos").size());
  AvgSubset s;
  std::string_view rest;
  if (text.starts_with("eu-low-")) {
    s.kind = plus_eos ? AvgSubset::Kind::EuLowPlusEos : AvgSubset::Kind::EuLow;
    rest = text.substr(7);
  } else if (text.starts_with("eu-high-")) {
    s.kind = plus_eos ? AvgSubset::Kind::EuHighPlusEos : AvgSubset::Kind::EuHigh;
    rest = text.substr(8);
  } else {
    fail(ErrorKind::Config, "unknown AVG subset '" + std::string(text) + "'");
  }
  if (rest.size() != 1 || rest[0] < '1' || rest[0] > '0' + kMaxAvgK) {
    fail(ErrorKind::Config, "AVG subset k must be in 1..5");
  }
  s.k = rest[0] - '0';
  return s;
}

void check_features(const FeatureMatrix& x, std::span<const int> labels) {
  if (x.rows() != labels.size()) {
    fail(ErrorKind::Shape, "feature rows and labels differ in length");
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (double v : x.row(r)) {
      if (!std::isfinite(v)) fail(ErrorKind::Data, "non-finite probe feature");
    }
  }
  for (int z : labels) {
    if (z != 0 && z != 1) fail(ErrorKind::Data, "probe labels must be 0 or 1");
  }
}

double objective_only(const FeatureMatrix& z, std::span<const int> labels,
                      std::span<const double> w, double b, double l2) {
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = z.row(i);
    const double s = std::inner_product(row.begin(), row.end(), w.begin(), b);
    loss += softplus(s) - labels[i] * s;
  }
  loss /= static_cast<double>(z.rows());
  double wn = 0.0;
  for (double v : w) wn += v * v;
  return loss + 0.5 * l2 * wn;
}

}  // namespace

// ---------------------------------------------------------------------------
// Selection

TokenSelection TokenSelection::eu_rank(int j) {
  if (j == 0 || j < -kMaxAvgK || j > kMaxAvgK) {
    fail(ErrorKind::Config, "EU rank must be in -5..-1 or 1..5");
  }
  return {Strategy::EuRank, j, std::nullopt};
}

TokenSelection TokenSelection::avg(std::optional<AvgSubset> subset) {
  if (subset && subset->kind != AvgSubset::Kind::FirstLast &&
      (subset->k < 1 || subset->k > kMaxAvgK)) {
    fail(ErrorKind::Config, "AVG subset k must be in 1..5");
  }
  return {Strategy::Avg, 0, subset};
}

std::string to_string(const TokenSelection& s) {
  switch (s.strategy) {
    case TokenSelection::Strategy::Eos: return "eos";
    case TokenSelection::Strategy::Exact: return "exact";
    case TokenSelection::Strategy::EuRank: return "eu:" + std::to_string(s.rank);
    case TokenSelection::Strategy::Avg: break;
  }
  if (!s.subset) return "avg";
  const auto& sub = *s.subset;
  std::string out = "avg:" + std::string(subset_name(sub.kind));
  if (sub.kind == AvgSubset::Kind::FirstLast) return out;
  out += "-" + std::to_string(sub.k);
  if (sub.kind == AvgSubset::Kind::EuLowPlusEos ||
      sub.kind == AvgSubset::Kind::EuHighPlusEos) {
    out += "-plus-eos";
  }
  return out;
}

TokenSelection parse_selection(std::string_view text) {
  if (text == "eos") return TokenSelection::eos();
  if (text == "exact") return TokenSelection::exact();
  if (text == "avg") return TokenSelection::avg();
  if (text.starts_with("avg:")) return TokenSelection::avg(parse_subset(text.substr(4)));
  if (text.starts_with("eu:")) {
    const std::string num(text.substr(3));
    std::size_t used = 0;
    int j = 0;
    try {
      j = std::stoi(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size()) {
      fail(ErrorKind::Config, "bad EU rank in selection '" + std::string(text) + "'");
    }
    return TokenSelection::eu_rank(j);
  }
  fail(ErrorKind::Config, "unknown token selection '" + std::string(text) + "'");
}

std::vector<AvgSubset> avg_candidates() {
  std::vector<AvgSubset> out;
  for (auto kind : {AvgSubset::Kind::EuLow, AvgSubset::Kind::EuLowPlusEos,
                    AvgSubset::Kind::EuHigh, AvgSubset::Kind::EuHighPlusEos}) {
    for (int k = 1; k <= kMaxAvgK; ++k) out.push_back({kind, k});
  }
  out.push_back({AvgSubset::Kind::FirstLast, 0});
  return out;
}

std::vector<TokenSelection> default_selections() {
  std::vector<TokenSelection> out = {TokenSelection::eos(), TokenSelection::exact()};
  for (int j = 1; j <= kMaxAvgK; ++j) out.push_back(TokenSelection::eu_rank(j));
  for (int j = 1; j <= kMaxAvgK; ++j) out.push_back(TokenSelection::eu_rank(-j));
  out.push_back(TokenSelection::avg());
  return out;
}

std::vector<std::size_t> select_tokens(std::span<const double> token_scores,
                                       const TokenSelection& selection,
                                       const std::optional<TokenSpan>& span) {
  const std::size_t t = token_scores.size();
  if (t == 0) fail(ErrorKind::Data, "token selection on an empty response");
  const std::size_t eos = t - 1;
  std::vector<std::size_t> out;
  switch (selection.strategy) {
    case TokenSelection::Strategy::Eos:
      out = {eos};
      break;
    case TokenSelection::Strategy::Exact:
      if (!span) fail(ErrorKind::Selection, "EXACT selection needs an answer span");
      if (span->begin >= span->end || span->end > t) {
        fail(ErrorKind::Selection, "answer span outside the response");
      }
      for (std::size_t i = span->begin; i < span->end; ++i) out.push_back(i);
      break;
    case TokenSelection::Strategy::EuRank: {
      const auto depth = static_cast<std::size_t>(std::abs(selection.rank));
      const auto ranked = selection.rank > 0
                              ? evidential::smallest_indices(token_scores, depth)
                              : evidential::largest_indices(token_scores, depth);
      // Ranks deeper than T clamp to the last available one.
      out = {ranked.back()};
      break;
    }
    case TokenSelection::Strategy::Avg: {
      if (!selection.subset) {
        fail(ErrorKind::Selection, "AVG selection needs a concrete subset");
      }
      const auto& sub = *selection.subset;
      const auto k = static_cast<std::size_t>(sub.k);
      switch (sub.kind) {
        case AvgSubset::Kind::EuLow:
        case AvgSubset::Kind::EuLowPlusEos:
          out = evidential::smallest_indices(token_scores, k);
          break;
        case AvgSubset::Kind::EuHigh:
        case AvgSubset::Kind::EuHighPlusEos:
          out = evidential::largest_indices(token_scores, k);
          break;
        case AvgSubset::Kind::FirstLast:
          out = {0, eos};
          break;
      }
      if (sub.kind == AvgSubset::Kind::EuLowPlusEos ||
          sub.kind == AvgSubset::Kind::EuHighPlusEos) {
        out.push_back(eos);
      }
      break;
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> build_feature(const Matrix& hidden,
                                  std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorKind::Shape, "feature needs at least one token");
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  std::vector<double> out(hidden.cols(), 0.0);
  for (std::size_t i : idx) {
    if (i >= hidden.rows()) fail(ErrorKind::Shape, "token index out of range");
    const auto row = hidden.row(i);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  if (idx.size() > 1) {
    for (double& v : out) v /= static_cast<double>(idx.size());
  }
  return out;
}

std::vector<double> build_feature(const GenerationTrace& trace, int layer_index,
                                  std::span<const std::size_t> indices) {
  auto it = trace.hidden_states.find(layer_index);
  if (it == trace.hidden_states.end()) {
    fail(ErrorKind::Schema, "layer " + std::to_string(layer_index) +
                                " not stored in trace " + to_string(trace.key));
  }
  return build_feature(it->second, indices);
}

// ---------------------------------------------------------------------------
// Logistic regression

void FeatureMatrix::append(std::span<const double> row) {
  if (row.size() != cols_) fail(ErrorKind::Shape, "feature row has the wrong width");
  data_.insert(data_.end(), row.begin(), row.end());
  ++rows_;
}

FeatureMatrix FeatureMatrix::subset(std::span<const std::size_t> rows) const {
  FeatureMatrix out(cols_);
  for (std::size_t r : rows) out.append(row(r));
  return out;
}

Objective logistic_objective(const FeatureMatrix& z, std::span<const int> labels,
                             std::span<const double> w, double b, double l2) {
  const std::size_t n = z.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Objective obj;
  obj.grad_w.assign(w.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = z.row(i);
    const double s = std::inner_product(row.begin(), row.end(), w.begin(), b);
    obj.loss += softplus(s) - labels[i] * s;
    const double r = sigmoid(s) - labels[i];
    for (std::size_t c = 0; c < w.size(); ++c) obj.grad_w[c] += r * row[c];
    obj.grad_b += r;
  }
  obj.loss *= inv_n;
  obj.grad_b *= inv_n;
  double wn = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    obj.grad_w[c] = obj.grad_w[c] * inv_n + l2 * w[c];
    wn += w[c] * w[c];
  }
  obj.loss += 0.5 * l2 * wn;
  return obj;
}

ProbeModel fit_probe(const FeatureMatrix& features, std::span<const int> labels,
                     const ProbeHyper& hyper) {
  check_features(features, labels);
  if (hyper.l2 < 0.0 || hyper.max_iter < 0 || !(hyper.tol >= 0.0)) {
    fail(ErrorKind::Config, "invalid probe hyper-parameters");
  }
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  const int positives = std::accumulate(labels.begin(), labels.end(), 0);
  if (positives == 0 || static_cast<std::size_t>(positives) == n) {
    fail(ErrorKind::Training, "probe training data contains a single class");
  }

  ProbeModel model;
  model.feature_mean.assign(d, 0.0);
  model.feature_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = features.row(i);
    for (std::size_t c = 0; c < d; ++c) model.feature_mean[c] += row[c];
  }
  for (double& m : model.feature_mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = features.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = row[c] - model.feature_mean[c];
      model.feature_std[c] += dv * dv;
    }
  }
  for (double& s : model.feature_std) {
    s = std::max(std::sqrt(s / static_cast<double>(n)), kMinStd);
  }

  FeatureMatrix z(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = features.row(i);
    auto dst = z.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      dst[c] = (src[c] - model.feature_mean[c]) / model.feature_std[c];
    }
  }

  // Full-batch gradient descent with Armijo backtracking.
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  Objective obj = logistic_objective(z, labels, w, b, hyper.l2);
  double step = 1.0;
  std::vector<double> w_next(d);
  TrainMeta& meta = model.train_meta;
  meta.split_seed = hyper.split_seed;
  auto grad_norm = [](const Objective& o) {
    double g = o.grad_b * o.grad_b;
    for (double v : o.grad_w) g += v * v;
    return std::sqrt(g);
  };
  double gnorm = grad_norm(obj);
  while (gnorm > hyper.tol && meta.iterations < hyper.max_iter) {
    const double g2 = gnorm * gnorm;
    double trial_loss = 0.0;
    double b_next = b;
    for (;;) {
      for (std::size_t c = 0; c < d; ++c) w_next[c] = w[c] - step * obj.grad_w[c];
      b_next = b - step * obj.grad_b;
      trial_loss = objective_only(z, labels, w_next, b_next, hyper.l2);
      if (trial_loss <= obj.loss - kArmijo * step * g2 || step < kMinStep) break;
      step *= 0.5;
    }
    if (trial_loss > obj.loss) break;  // no descent possible at machine precision
    w.swap(w_next);
    b = b_next;
    obj = logistic_objective(z, labels, w, b, hyper.l2);
    gnorm = grad_norm(obj);
    meta.loss_history.push_back(obj.loss);
    ++meta.iterations;
    step *= 2.0;
  }
  meta.final_loss = obj.loss;
  meta.gradient_norm = gnorm;
  meta.converged = gnorm <= hyper.tol;
  model.weights = std::move(w);
  model.bias = b;
  return model;
}

double predict_probe(const ProbeModel& model, std::span<const double> feature) {
  if (feature.size() != model.weights.size()) {
    fail(ErrorKind::Schema, "feature width " + std::to_string(feature.size()) +
                                " != probe width " + std::to_string(model.weights.size()));
  }
  double s = model.bias;
  for (std::size_t c = 0; c < feature.size(); ++c) {
    s += model.weights[c] * (feature[c] - model.feature_mean[c]) / model.feature_std[c];
  }
  return sigmoid(s);
}

std::vector<double> predict_probe(const ProbeModel& model,
                                  const FeatureMatrix& features) {
  std::vector<double> out;
  out.reserve(features.rows());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    out.push_back(predict_probe(model, features.row(r)));
  }
  return out;
}

Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.below(i)]);
  }
  const auto n_test = static_cast<std::size_t>(
      std::ceil(test_fraction * static_cast<double>(n) - 1e-9));
  Split split;
  split.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

TrainResult train_probe(const FeatureMatrix& features, std::span<const int> labels,
                        const ProbeHyper& hyper) {
  if (features.rows() < 10) fail(ErrorKind::Data, "probe training needs N >= 10");
  check_features(features, labels);
  TrainResult result;
  result.split = split_indices(features.rows(), kTestFraction, hyper.split_seed);
  std::vector<int> y_train;
  std::vector<int> y_test;
  for (std::size_t i : result.split.train) y_train.push_back(labels[i]);
  for (std::size_t i : result.split.test) y_test.push_back(labels[i]);
  result.model = fit_probe(features.subset(result.split.train), y_train, hyper);
  const auto scores = predict_probe(result.model, features.subset(result.split.test));
  result.test_auroc = auroc(scores, y_test);
  return result;
}

// ---------------------------------------------------------------------------
// Metrics

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::Shape, "scores and labels differ in length");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorKind::Data, "AUROC labels must be 0 or 1");
    if (std::isnan(scores[i])) fail(ErrorKind::Data, "NaN score in AUROC input");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1..j share their average.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    fail(ErrorKind::Metric, "AUROC needs both classes");
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double score_p_true(const GenerationTrace& trace) {
  if (!trace.p_true) {
    fail(ErrorKind::MethodUnavailable, "no p_true in trace " + to_string(trace.key));
  }
  const double p = *trace.p_true;
  if (!(p >= 0.0 && p <= 1.0)) {
    fail(ErrorKind::Data, "p_true outside [0, 1] in trace " + to_string(trace.key));
  }
  return p;
}

}  // namespace evprobe::probe
