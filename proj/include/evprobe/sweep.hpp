#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evprobe/labels.hpp"
#include "evprobe/probe.hpp"
#include "evprobe/trace.hpp"

namespace evprobe::probe {

/// Everything the sweep needs from one labelled response.
struct SweepSample {
  TraceKey key;
  int z = 0;
  std::optional<TokenSpan> span;
  std::vector<double> rank_scores;  // per-token score driving EU selections
  std::map<int, Matrix> hidden;
  std::optional<double> logprob;
  std::optional<double> logtoku;
  std::optional<double> p_true;
};

struct SweepOptions {
  ProbeHyper hyper;
  unsigned threads = 1;
};

struct EvalRow {
  std::string method;  // logprob, logtoku, p_true, probe(eos|exact|eu|avg)
  std::optional<int> layer;
  std::string selection;  // token selection, "-" for baselines
  std::string detail;     // chosen subset for "avg"
  std::optional<double> auroc;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t n_skipped = 0;
  std::uint64_t split_seed = 0;
  std::string error;
  bool best = false;
};

struct EvalReport {
  std::vector<int> layers;
  std::vector<std::string> selections;
  std::vector<EvalRow> rows;

  /// Row for (layer, selection), or nullptr.
  const EvalRow* find(int layer, const std::string& selection) const;
  /// Row carrying the best marker for `method`, or nullptr.
  const EvalRow* best(const std::string& method) const;
};

std::string method_name(const TokenSelection& s);

/// Trains and evaluates one probe per (layer, selection) on a shared
/// 70/30 split, plus the logprob/logtoku/p_true baselines on the same test
/// part. The bare "avg" selection picks its subset on an 80/20 split of the
/// training part. Failing cells are recorded with their error and the sweep
/// continues. Throws Schema if a requested layer is missing from a sample.
EvalReport layer_sweep(std::span<const SweepSample> samples,
                       std::span<const int> layers,
                       std::span<const TokenSelection> selections,
                       const SweepOptions& options = {});

nlohmann::json to_json(const EvalRow& row);
/// Layers as rows, selections as columns; failed cells are empty.
void write_heatmap_csv(std::ostream& out, const EvalReport& report);

}  // namespace evprobe::probe
