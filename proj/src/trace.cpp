// SPDX-License-Identifier: Apache-2.0

#include "evprobe/trace.hpp"

#include <cmath>

#include "evprobe/error.hpp"

namespace evprobe {

std::string_view to_string(Condition c) noexcept {
  switch (c) {
    case Condition::WOC: return "WOC";
    case Condition::WCC: return "WCC";
    case Condition::WIC: return "WIC";
  }
  return "WOC";
}

Condition parse_condition(std::string_view name) {
  for (Condition c : kAllConditions) {
    if (name == to_string(c)) return c;
  }
  fail(ErrorKind::Config, "unknown condition '" + std::string(name) + "'");
}

std::string to_string(const TraceKey& key) {
  return key.question_id + "/" + std::string(to_string(key.condition)) + "/" +
         std::to_string(key.sample_index);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorKind::Shape, "matrix data size does not match rows x cols");
  }
}

void check_trace(const GenerationTrace& trace) {
  const std::string where = " in trace " + to_string(trace.key);
  const std::size_t t = trace.length();
  if (t == 0) fail(ErrorKind::Schema, "empty response" + where);
  if (trace.chosen_logprobs.size() != t) {
    fail(ErrorKind::Schema, "chosen_logprobs length != T" + where);
  }
  for (float lp : trace.chosen_logprobs) {
    if (!std::isfinite(lp) || lp > 0.0f) {
      fail(ErrorKind::Schema, "chosen_logprobs must be finite and <= 0" + where);
    }
  }
  const std::size_t k = trace.k_store();
  if (trace.topk_logits.rows() != t || k < 2) {
    fail(ErrorKind::Schema, "topk_logits must be T x k_store with k_store >= 2" + where);
  }
  if (trace.topk_token_ids.size() != t * k) {
    fail(ErrorKind::Schema, "topk_token_ids must be T x k_store" + where);
  }
  for (std::size_t r = 0; r < t; ++r) {
    const auto row = trace.topk_logits.row(r);
    for (std::size_t c = 0; c < k; ++c) {
      if (!std::isfinite(row[c])) fail(ErrorKind::Schema, "non-finite logit" + where);
      if (c > 0 && row[c] > row[c - 1]) {
        fail(ErrorKind::Schema, "topk_logits row " + std::to_string(r) +
                                    " not descending" + where);
      }
    }
  }
  for (const auto& [layer, h] : trace.hidden_states) {
    if (h.rows() != t) {
      fail(ErrorKind::Schema, "hidden states of layer " + std::to_string(layer) +
                                  " have " + std::to_string(h.rows()) +
                                  " rows, expected " + std::to_string(t) + where);
    }
    for (float v : h.data()) {
      if (!std::isfinite(v)) fail(ErrorKind::Schema, "non-finite hidden state" + where);
    }
  }
  if (trace.p_true && !(*trace.p_true >= 0.0 && *trace.p_true <= 1.0)) {
    fail(ErrorKind::Schema, "p_true outside [0, 1]" + where);
  }
}

}  // namespace evprobe
