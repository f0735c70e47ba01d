// SPDX-License-Identifier: Apache-2.0

#include "evprobe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "evprobe/error.hpp"
#include "evprobe/rng.hpp"

namespace evprobe::synthetic {

namespace {

constexpr std::int32_t kVocab = 32000;
constexpr double kMissingSpanRate = 0.05;

enum class TokenKind { Confident, Medium, Uncertain };

std::vector<float> logit_row(TokenKind kind, std::size_t k, SplitMix64& rng) {
  double base = 0.0;
  double slope = 0.0;
  switch (kind) {
    case TokenKind::Confident: base = rng.uniform(7.0, 11.0); slope = 0.4; break;
    case TokenKind::Medium: base = rng.uniform(1.5, 2.0); slope = 0.1; break;
    case TokenKind::Uncertain: base = rng.uniform(0.2, 0.6); slope = 0.05; break;
  }
  std::vector<float> row(k);
  for (std::size_t j = 0; j < k; ++j) {
    row[j] = static_cast<float>(base - slope * static_cast<double>(j) -
                                0.01 * rng.uniform());
  }
  std::sort(row.begin(), row.end(), std::greater<>());
  return row;
}

float token_logprob(TokenKind kind, SplitMix64& rng) {
  switch (kind) {
    case TokenKind::Confident: return static_cast<float>(-rng.uniform(0.0, 0.1));
    case TokenKind::Medium: return static_cast<float>(-rng.uniform(0.3, 1.0));
    case TokenKind::Uncertain: return static_cast<float>(-rng.uniform(1.0, 3.0));
  }
  return 0.0f;
}

std::vector<std::int32_t> random_ids(std::size_t n, SplitMix64& rng) {
  std::vector<std::int32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(kVocab));
  return ids;
}

Matrix noise_matrix(std::size_t rows, std::size_t cols, SplitMix64& rng) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(rng.normal());
  return m;
}

std::string padded_id(const char* prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

SyntheticDataset make_planted_probe_dataset(const PlantedProbeSpec& spec) {
  if (spec.min_length < spec.n_uncertain + 1 || spec.max_length < spec.min_length) {
    fail(ErrorKind::Config, "planted lengths must leave room for the uncertain tokens");
  }
  if (spec.signal_layer < spec.first_layer ||
      spec.signal_layer >= spec.first_layer + static_cast<int>(spec.n_layers)) {
    fail(ErrorKind::Config, "signal layer outside the generated layer range");
  }
  SplitMix64 rng(spec.seed);
  SyntheticDataset data;
  data.manifest.model_name = "synthetic-planted";
  data.manifest.k_store = static_cast<std::uint32_t>(spec.k_store);
  data.manifest.hidden_dim = static_cast<std::uint32_t>(spec.hidden_dim);
  data.manifest.m_samples = 1;
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    data.manifest.layer_indices.push_back(spec.first_layer + static_cast<int>(l));
  }
  data.manifest.metadata = {{"generator", "planted-probe"},
                            {"snr", spec.snr},
                            {"signal_layer", spec.signal_layer},
                            {"weak_fraction", spec.weak_fraction},
                            {"seed", spec.seed}};

  std::vector<double> direction(spec.hidden_dim);
  double norm = 0.0;
  for (double& v : direction) {
    v = rng.normal();
    norm += v * v;
  }
  for (double& v : direction) v /= std::sqrt(norm);

  for (std::size_t i = 0; i < spec.n_responses; ++i) {
    GenerationTrace tr;
    tr.key = {padded_id("q", i), Condition::WOC, 0};
    const int z = rng.uniform() < 0.5 ? 1 : 0;
    const double sign = z == 1 ? 1.0 : -1.0;
    const std::size_t t =
        spec.min_length + rng.below(spec.max_length - spec.min_length + 1);

    std::vector<TokenKind> kinds(t, TokenKind::Confident);
    kinds[t - 1] = TokenKind::Medium;
    std::vector<std::size_t> positions(t - 1);
    for (std::size_t p = 0; p < positions.size(); ++p) positions[p] = p;
    for (std::size_t p = 0; p < spec.n_uncertain; ++p) {
      std::swap(positions[p], positions[p + rng.below(positions.size() - p)]);
      kinds[positions[p]] = TokenKind::Uncertain;
    }

    tr.response_token_ids = random_ids(t, rng);
    tr.topk_token_ids = random_ids(t * spec.k_store, rng);
    tr.topk_logits = Matrix(t, spec.k_store);
    for (std::size_t r = 0; r < t; ++r) {
      const auto row = logit_row(kinds[r], spec.k_store, rng);
      std::copy(row.begin(), row.end(), tr.topk_logits.row(r).begin());
      tr.chosen_logprobs.push_back(token_logprob(kinds[r], rng));
    }
    for (int layer : data.manifest.layer_indices) {
      Matrix h = noise_matrix(t, spec.hidden_dim, rng);
      if (layer == spec.signal_layer) {
        for (std::size_t r = 0; r < t; ++r) {
          double shift = 0.0;
          if (kinds[r] == TokenKind::Medium) shift = spec.snr;
          if (kinds[r] == TokenKind::Uncertain) shift = spec.weak_fraction * spec.snr;
          for (std::size_t c = 0; c < spec.hidden_dim; ++c) {
            h(r, c) += static_cast<float>(sign * shift * direction[c]);
          }
        }
      }
      tr.hidden_states.emplace(layer, std::move(h));
    }
    if (spec.with_p_true) {
      const double logit = 0.5 * sign + rng.normal();
      tr.p_true = 1.0 / (1.0 + std::exp(-logit));
    }
    tr.response_text = "synthetic response " + std::to_string(i);

    LabelRecord label;
    label.key = tr.key;
    label.z = z;
    label.judge = JudgeKind::Llm;
    if (rng.uniform() >= kMissingSpanRate) {
      const auto begin = static_cast<std::uint32_t>(rng.below(t - 1));
      const auto len = static_cast<std::uint32_t>(1 + rng.below(2));
      label.exact_answer_span =
          TokenSpan{begin, std::min<std::uint32_t>(begin + len, static_cast<std::uint32_t>(t))};
    }
    data.traces.push_back(std::move(tr));
    data.labels.push_back(std::move(label));
  }
  return data;
}

BehaviorSpec default_behavior_spec() {
  BehaviorSpec spec;
  const int m = static_cast<int>(spec.m_samples);
  auto add = [&](const char* prefix, std::vector<PlantedCondition> conds) {
    for (int i = 0; i < 10; ++i) {
      spec.questions.push_back({padded_id(prefix, static_cast<std::size_t>(i)), conds});
    }
  };
  // WOC:E -> WCC:C; WIC is MID so it joins no default transition.
  add("ec", {{Condition::WOC, 2, 0.5}, {Condition::WCC, m - 2, 0.2}, {Condition::WIC, 7, 0.4}});
  // WOC:C -> WIC:E
  add("ce", {{Condition::WOC, m - 2, 0.5}, {Condition::WCC, m, 0.3}, {Condition::WIC, 1, 0.2}});
  // Stable C.
  add("cc", {{Condition::WOC, m - 1, 0.3}, {Condition::WCC, m, 0.2}, {Condition::WIC, m - 1, 0.3}});
  // WOC in the MID band.
  add("mm", {{Condition::WOC, 7, 0.45}, {Condition::WCC, m - 1, 0.25}, {Condition::WIC, 1, 0.3}});
  return spec;
}

SyntheticDataset make_behavior_dataset(const BehaviorSpec& spec) {
  SplitMix64 rng(spec.seed);
  SyntheticDataset data;
  data.manifest.model_name = "synthetic-behavior";
  data.manifest.k_store = static_cast<std::uint32_t>(spec.k_store);
  data.manifest.hidden_dim = static_cast<std::uint32_t>(spec.hidden_dim);
  data.manifest.layer_indices = {0};
  data.manifest.m_samples = static_cast<std::uint32_t>(spec.m_samples);
  data.manifest.metadata = {{"generator", "planted-behavior"}, {"seed", spec.seed}};
  const std::size_t k_evidence = std::min<std::size_t>(10, spec.k_store);

  for (const auto& q : spec.questions) {
    for (const auto& pc : q.conditions) {
      if (pc.n_correct < 0 || static_cast<std::size_t>(pc.n_correct) > spec.m_samples) {
        fail(ErrorKind::Config, "planted n_correct outside [0, M] for " + q.id);
      }
      std::vector<int> z(spec.m_samples, 0);
      std::fill(z.begin(), z.begin() + pc.n_correct, 1);
      for (std::size_t i = z.size(); i > 1; --i) std::swap(z[i - 1], z[rng.below(i)]);

      for (std::size_t s = 0; s < spec.m_samples; ++s) {
        GenerationTrace tr;
        tr.key = {q.id, pc.condition, static_cast<std::uint32_t>(s)};
        const double eu = std::clamp(pc.eu_mean + spec.eu_jitter * rng.normal(), 0.05, 0.95);
        // EU = 1 / (v + 1) when all K evidence values equal v.
        const double v = 1.0 / eu - 1.0;
        tr.response_token_ids = random_ids(spec.length, rng);
        tr.topk_token_ids = random_ids(spec.length * spec.k_store, rng);
        tr.topk_logits = Matrix(spec.length, spec.k_store);
        for (std::size_t r = 0; r < spec.length; ++r) {
          auto row = tr.topk_logits.row(r);
          for (std::size_t j = 0; j < spec.k_store; ++j) {
            row[j] = j < k_evidence
                         ? static_cast<float>(v)
                         : static_cast<float>(v - 1.0 - 0.1 * static_cast<double>(j));
          }
          tr.chosen_logprobs.push_back(static_cast<float>(-rng.uniform(0.0, 2.0)));
        }
        tr.hidden_states.emplace(0, noise_matrix(spec.length, spec.hidden_dim, rng));
        tr.response_text = z[s] == 1 ? "correct answer" : "wrong answer";
        data.traces.push_back(std::move(tr));

        LabelRecord label;
        label.key = data.traces.back().key;
        label.z = z[s];
        data.labels.push_back(std::move(label));
      }
    }
  }
  return data;
}

void write_dataset(const SyntheticDataset& data, const std::filesystem::path& dataset,
                   const std::filesystem::path& labels) {
  TraceWriter writer(dataset, data.manifest);
  for (const auto& tr : data.traces) writer.write(tr);
  writer.finalize();
  if (!labels.empty()) write_labels(labels, data.labels);
}

}  // namespace evprobe::synthetic
