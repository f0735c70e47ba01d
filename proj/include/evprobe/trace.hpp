#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evprobe {

/// Context condition a response was generated under.
enum class Condition : std::uint8_t { WOC = 0, WCC = 1, WIC = 2 };

inline constexpr Condition kAllConditions[] = {Condition::WOC, Condition::WCC,
                                               Condition::WIC};

std::string_view to_string(Condition c) noexcept;
/// Throws Config for anything other than "WOC", "WCC", "WIC".
Condition parse_condition(std::string_view name);

/// Identifies one sampled response.
struct TraceKey {
  std::string question_id;
  Condition condition = Condition::WOC;
  std::uint32_t sample_index = 0;

  auto operator<=>(const TraceKey&) const = default;
  bool operator==(const TraceKey&) const = default;
};

std::string to_string(const TraceKey& key);

/// Dense row-major float matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::span<float> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  float& operator()(std::size_t r, std::size_t c) noexcept {
    return data_[r * cols_ + c];
  }
  float operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// One sampled response with everything the analysis needs from the model.
struct GenerationTrace {
  TraceKey key;
  std::vector<std::int32_t> response_token_ids;
  std::vector<float> chosen_logprobs;  // nats, full-vocabulary softmax
  std::vector<std::int32_t> topk_token_ids;  // T x k_store, row-major
  Matrix topk_logits;                        // T x k_store, rows descending
  std::map<int, Matrix> hidden_states;       // layer -> T x d
  std::optional<double> p_true;
  std::string response_text;

  std::size_t length() const noexcept { return response_token_ids.size(); }
  std::size_t k_store() const noexcept { return topk_logits.cols(); }

  bool operator==(const GenerationTrace&) const = default;
};

/// Throws Schema if the trace violates its own shape/ordering invariants.
void check_trace(const GenerationTrace& trace);

}  // namespace evprobe
