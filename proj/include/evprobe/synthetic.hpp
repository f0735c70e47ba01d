#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file synthetic.hpp
 * @brief Planted-signal trace datasets with known ground truth.
 *
 * Probe datasets: every response has a few "uncertain" tokens (low top-K
 * logits, high EU), one medium-EU final token and otherwise confident
 * tokens. Hidden states are N(0, 1) everywhere except the signal layer,
 * where the final token is shifted by +/- snr along a fixed unit direction
 * (sign from the label) and each uncertain token by +/- weak_fraction * snr.
 *
 * Behavior datasets: per question and condition, a planted number of
 * correct responses out of M and a planted EU level; every token of a
 * response gets the same evidence so its EU lower bound equals the
 * response's (jittered) EU level.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evprobe/labels.hpp"
#include "evprobe/trace.hpp"
#include "evprobe/trace_store.hpp"

namespace evprobe::synthetic {

struct SyntheticDataset {
  DatasetManifest manifest;  // index left empty; filled when written
  std::vector<GenerationTrace> traces;
  std::vector<LabelRecord> labels;
};

struct PlantedProbeSpec {
  std::size_t n_responses = 500;
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 20;
  int first_layer = 0;
  int signal_layer = 12;
  double snr = 2.0;
  double weak_fraction = 0.3;
  std::size_t n_uncertain = 5;
  std::size_t min_length = 10;
  std::size_t max_length = 16;
  std::size_t k_store = kDefaultKStore;
  bool with_p_true = true;
  std::uint64_t seed = 7;
};

SyntheticDataset make_planted_probe_dataset(const PlantedProbeSpec& spec);

struct PlantedCondition {
  Condition condition = Condition::WOC;
  int n_correct = 0;
  double eu_mean = 0.5;
};

struct PlantedQuestion {
  std::string id;
  std::vector<PlantedCondition> conditions;
};

struct BehaviorSpec {
  std::vector<PlantedQuestion> questions;
  std::size_t m_samples = kDefaultMSamples;
  double eu_jitter = 0.02;
  std::size_t length = 12;
  std::size_t k_store = kDefaultKStore;
  std::size_t hidden_dim = 4;
  std::uint64_t seed = 11;
};

/// Planted groups of ten questions each: WOC:E->WCC:C, WOC:C->WIC:E,
/// stable C under all conditions, and WOC:MID. The "from" side of both
/// transitions sits at EU 0.5 and the "to" side at EU 0.2.
BehaviorSpec default_behavior_spec();

SyntheticDataset make_behavior_dataset(const BehaviorSpec& spec);

/// Writes the dataset file and, when `labels` is non-empty, the label JSONL.
void write_dataset(const SyntheticDataset& data, const std::filesystem::path& dataset,
                   const std::filesystem::path& labels);

}  // namespace evprobe::synthetic
