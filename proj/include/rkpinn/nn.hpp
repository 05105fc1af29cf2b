#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rkpinn/types.hpp"

namespace rkpinn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DenseLayer {
  Matrix weights;  // fan_out x fan_in
  Vector biases;   // fan_out
};

/// Fully connected network: tanh on every hidden layer, linear output layer.
struct MlpParameters {
  std::vector<std::size_t> layer_sizes;  // [n_in, h_1, ..., h_K, n_out]
  std::vector<DenseLayer> layers;        // K + 1 entries

  [[nodiscard]] std::size_t input_dim() const { return layer_sizes.front(); }
  [[nodiscard]] std::size_t output_dim() const { return layer_sizes.back(); }
  [[nodiscard]] std::size_t parameter_count() const;

  /// Same shape, every entry zero.
  [[nodiscard]] static MlpParameters zeros(const std::vector<std::size_t>& layer_sizes);

  [[nodiscard]] bool all_finite() const;
  void check_consistent() const;

  /// Flattened view in layer order, weights row-major then biases.
  [[nodiscard]] Vector flatten() const;
  void assign_flat(const Vector& flat);

  MlpParameters& operator+=(const MlpParameters& other);
  MlpParameters& operator*=(double scale);
};

using MlpGradients = MlpParameters;

/// Glorot-uniform weights on +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// Deterministic per seed (entries drawn layer by layer, row-major).
[[nodiscard]] MlpParameters glorot_init(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed);

[[nodiscard]] Vector forward(const MlpParameters& params, const Vector& input);
/// Batched forward pass, one column per sample.
[[nodiscard]] Matrix forward(const MlpParameters& params, const Matrix& inputs);

struct TangentResult {
  Vector output;
  Vector derivative;  // d output / d input[direction]
};

[[nodiscard]] TangentResult forward_tangent(const MlpParameters& params, const Vector& input, std::size_t direction);

struct BackwardResult {
  MlpGradients gradients;
  Vector input_gradient;
};

/// Gradients of <cotangent, forward(params, input)>.
[[nodiscard]] BackwardResult backward(const MlpParameters& params, const Vector& input, const Vector& cotangent);

/// Recorded forward (and optionally forward-tangent) pass over a batch,
/// reusable for a reverse sweep. Columns are samples.
class MlpTape {
 public:
  /// `tangent_direction` selects the input coordinate whose directional
  /// derivative is propagated alongside the values.
  void record(const MlpParameters& params, const Matrix& inputs, std::optional<std::size_t> tangent_direction);

  [[nodiscard]] const Matrix& output() const { return output_; }
  /// d output / d input[direction]; empty unless a direction was recorded.
  [[nodiscard]] const Matrix& output_tangent() const { return output_tangent_; }

  /// Accumulates (adds) into `grads` the parameter gradient of
  ///   sum_columns <cot_output, output> + <cot_tangent, output_tangent>.
  /// `cot_tangent` may be empty (0 x 0). Returns the input gradient of the
  /// value path (the tangent direction is a constant basis vector).
  Matrix backward(const Matrix& cot_output, const Matrix& cot_tangent, MlpGradients& grads) const;

 private:
  const MlpParameters* params_ = nullptr;
  std::optional<std::size_t> direction_;
  std::vector<Matrix> activations_;   // z^0 .. z^K
  std::vector<Matrix> tangents_;      // dz^1 .. dz^K (index 0 unused)
  std::vector<Matrix> pre_tangents_;  // da^1 .. da^K (index 0 unused)
  Matrix output_;
  Matrix output_tangent_;
};

struct AdamState {
  MlpParameters first_moment;
  MlpParameters second_moment;
  std::size_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  [[nodiscard]] static AdamState for_parameters(const MlpParameters& params);
};

/// Bias-corrected Adam update. Returns false and leaves params and state
/// untouched when any gradient entry is non-finite.
[[nodiscard]] bool adam_step(MlpParameters& params, const MlpGradients& grads, AdamState& state, double lr);

struct LearningRateSchedule {
  double initial = 0.05;
  double decay = 0.995;
  double decay_every = 100.0;

  [[nodiscard]] double operator()(std::size_t epoch) const;
};

[[nodiscard]] double lr_schedule(std::size_t epoch);

}  // namespace rkpinn
