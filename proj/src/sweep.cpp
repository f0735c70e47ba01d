// SPDX-License-Identifier: Apache-2.0

#include "evprobe/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <numeric>
#include <thread>

#include "evprobe/error.hpp"

namespace evprobe::probe {

namespace {

// Derives the inner validation split seed from the outer one.
constexpr std::uint64_t kInnerSeedSalt = 0xA5A5F00DCAFEBEEFull;

struct CellSpec {
  int layer = 0;
  TokenSelection selection;
};

struct Fitted {
  double auroc = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

// Builds the feature of every sample in `ids`; samples whose selection is
// impossible are dropped and counted.
struct FeatureSet {
  FeatureMatrix x;
  std::vector<int> y;
  std::vector<std::size_t> ids;
  std::size_t skipped = 0;
};

FeatureSet features_for(std::span<const SweepSample> samples,
                        std::span<const std::size_t> ids, int layer,
                        const TokenSelection& selection) {
  FeatureSet fs;
  bool sized = false;
  for (std::size_t id : ids) {
    const auto& s = samples[id];
    std::vector<std::size_t> tokens;
    try {
      tokens = select_tokens(s.rank_scores, selection, s.span);
    } catch (const Error& ex) {
      if (ex.kind() != ErrorKind::Selection) throw;
      ++fs.skipped;
      continue;
    }
    const auto feature = build_feature(s.hidden.at(layer), tokens);
    if (!sized) {
      fs.x = FeatureMatrix(feature.size());
      sized = true;
    }
    fs.x.append(feature);
    fs.y.push_back(s.z);
    fs.ids.push_back(id);
  }
  return fs;
}

Fitted fit_and_score(std::span<const SweepSample> samples,
                     std::span<const std::size_t> train,
                     std::span<const std::size_t> test, int layer,
                     const TokenSelection& selection, const ProbeHyper& hyper,
                     std::size_t* skipped) {
  const auto tr = features_for(samples, train, layer, selection);
  const auto te = features_for(samples, test, layer, selection);
  if (skipped) *skipped = tr.skipped + te.skipped;
  if (tr.x.rows() == 0) fail(ErrorKind::Training, "no usable training samples");
  if (te.x.rows() == 0) fail(ErrorKind::Metric, "no usable test samples");
  const auto model = fit_probe(tr.x, tr.y, hyper);
  const auto scores = predict_probe(model, te.x);
  return {auroc(scores, te.y), tr.x.rows(), te.x.rows()};
}

EvalRow run_cell(std::span<const SweepSample> samples, const Split& split,
                 const CellSpec& cell, const SweepOptions& options) {
  EvalRow row;
  row.method = method_name(cell.selection);
  row.layer = cell.layer;
  row.selection = to_string(cell.selection);
  row.split_seed = options.hyper.split_seed;
  try {
    TokenSelection chosen = cell.selection;
    if (cell.selection.strategy == TokenSelection::Strategy::Avg &&
        !cell.selection.subset) {
      // Pick the subset on an inner split of the training part only.
      const Split inner_pos = split_indices(split.train.size(), kInnerValFraction,
                                            options.hyper.split_seed ^ kInnerSeedSalt);
      std::vector<std::size_t> inner_train, inner_val;
      for (std::size_t p : inner_pos.train) inner_train.push_back(split.train[p]);
      for (std::size_t p : inner_pos.test) inner_val.push_back(split.train[p]);
      double best = -1.0;
      std::string last_error;
      for (const auto& subset : avg_candidates()) {
        const auto candidate = TokenSelection::avg(subset);
        try {
          const auto fitted = fit_and_score(samples, inner_train, inner_val, cell.layer,
                                            candidate, options.hyper, nullptr);
          if (fitted.auroc > best) {
            best = fitted.auroc;
            chosen = candidate;
          }
        } catch (const Error& ex) {
          last_error = ex.what();
        }
      }
      if (best < 0.0) fail(ErrorKind::Training, "no AVG subset could be validated: " + last_error);
      row.detail = to_string(chosen);
    }
    const auto fitted = fit_and_score(samples, split.train, split.test, cell.layer, chosen,
                                      options.hyper, &row.n_skipped);
    row.auroc = fitted.auroc;
    row.n_train = fitted.n_train;
    row.n_test = fitted.n_test;
  } catch (const Error& ex) {
    row.error = ex.what();
  }
  return row;
}

EvalRow baseline_row(std::span<const SweepSample> samples, const Split& split,
                     const std::string& method,
                     std::optional<double> SweepSample::*field, std::uint64_t seed) {
  EvalRow row;
  row.method = method;
  row.selection = "-";
  row.split_seed = seed;
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t id : split.test) {
    const auto& value = samples[id].*field;
    if (!value) {
      ++row.n_skipped;
      continue;
    }
    scores.push_back(*value);
    labels.push_back(samples[id].z);
  }
  row.n_test = scores.size();
  if (scores.empty()) {
    row.error = method + " unavailable for every test sample";
    return row;
  }
  try {
    row.auroc = auroc(scores, labels);
  } catch (const Error& ex) {
    row.error = ex.what();
  }
  return row;
}

}  // namespace

const EvalRow* EvalReport::find(int layer, const std::string& selection) const {
  for (const auto& r : rows) {
    if (r.layer == layer && r.selection == selection) return &r;
  }
  return nullptr;
}

const EvalRow* EvalReport::best(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.best && r.method == method) return &r;
  }
  return nullptr;
}

std::string method_name(const TokenSelection& s) {
  switch (s.strategy) {
    case TokenSelection::Strategy::Eos: return "probe(eos)";
    case TokenSelection::Strategy::Exact: return "probe(exact)";
    case TokenSelection::Strategy::EuRank: return "probe(eu)";
    case TokenSelection::Strategy::Avg: return "probe(avg)";
  }
  return "probe";
}

EvalReport layer_sweep(std::span<const SweepSample> samples,
                       std::span<const int> layers,
                       std::span<const TokenSelection> selections,
                       const SweepOptions& options) {
  for (const auto& s : samples) {
    for (int layer : layers) {
      if (!s.hidden.contains(layer)) {
        fail(ErrorKind::Schema, "layer " + std::to_string(layer) + " missing from " +
                                    to_string(s.key));
      }
    }
  }
  // The split is defined over samples in key order, independent of input order.
  std::vector<std::size_t> by_key(samples.size());
  std::iota(by_key.begin(), by_key.end(), std::size_t{0});
  std::sort(by_key.begin(), by_key.end(),
            [&](std::size_t a, std::size_t b) { return samples[a].key < samples[b].key; });
  const Split positions = split_indices(samples.size(), kTestFraction, options.hyper.split_seed);
  Split split;
  for (std::size_t p : positions.train) split.train.push_back(by_key[p]);
  for (std::size_t p : positions.test) split.test.push_back(by_key[p]);

  EvalReport report;
  report.layers.assign(layers.begin(), layers.end());
  for (const auto& s : selections) report.selections.push_back(to_string(s));

  const std::uint64_t seed = options.hyper.split_seed;
  report.rows.push_back(baseline_row(samples, split, "logprob", &SweepSample::logprob, seed));
  report.rows.push_back(baseline_row(samples, split, "logtoku", &SweepSample::logtoku, seed));
  report.rows.push_back(baseline_row(samples, split, "p_true", &SweepSample::p_true, seed));

  std::vector<CellSpec> cells;
  for (int layer : layers) {
    for (const auto& s : selections) cells.push_back({layer, s});
  }
  std::vector<EvalRow> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      results[i] = run_cell(samples, split, cells[i], options);
    }
  };
  const unsigned n_threads =
      std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(cells.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }
  report.rows.insert(report.rows.end(), std::make_move_iterator(results.begin()),
                     std::make_move_iterator(results.end()));

  std::map<std::string, EvalRow*> best;
  for (auto& r : report.rows) {
    if (!r.auroc) continue;
    auto [it, inserted] = best.emplace(r.method, &r);
    if (!inserted && *r.auroc > *it->second->auroc) it->second = &r;
  }
  for (auto& [method, row] : best) row->best = true;
  return report;
}

nlohmann::json to_json(const EvalRow& row) {
  nlohmann::json j = {{"method", row.method},
                      {"layer", nullptr},
                      {"selection", row.selection},
                      {"auroc", nullptr},
                      {"n_train", row.n_train},
                      {"n_test", row.n_test},
                      {"n_skipped", row.n_skipped},
                      {"split_seed", row.split_seed},
                      {"best", row.best}};
  if (row.layer) j["layer"] = *row.layer;
  if (row.auroc) j["auroc"] = *row.auroc;
  if (!row.detail.empty()) j["detail"] = row.detail;
  if (!row.error.empty()) j["error"] = row.error;
  return j;
}

void write_heatmap_csv(std::ostream& out, const EvalReport& report) {
  out << "layer";
  for (const auto& s : report.selections) out << ',' << s;
  out << '\n';
  char buf[32];
  for (int layer : report.layers) {
    out << layer;
    for (const auto& s : report.selections) {
      out << ',';
      const EvalRow* row = report.find(layer, s);
      if (row && row->auroc) {
        std::snprintf(buf, sizeof(buf), "%.6f", *row->auroc);
        out << buf;
      }
    }
    out << '\n';
  }
}

}  // namespace evprobe::probe
