#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rkpinn/dynamics.hpp"
#include "rkpinn/experiment.hpp"
#include "rkpinn/pinn.hpp"

namespace rkpinn {

/// Configuration problem; `field()` is the dotted path of the offending
/// entry, empty for syntax errors.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what) : std::runtime_error(what), field_(std::move(field)) {}
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Loss weights as written in the config: a scalar applies to every
/// entry, an explicit matrix (s x n) or vector (n) overrides it.
struct LossWeightSpec {
  double stage = 1.0;
  double dt = 1.0;
  std::vector<std::vector<double>> stage_matrix;
  std::vector<double> dt_vector;

  [[nodiscard]] LossWeights build(std::size_t stages, std::size_t state_dim) const;
};

struct TimingSpec {
  std::vector<double> dt_list{0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0};
  std::size_t repeats = 20;
  std::size_t warmup_calls = 100;
  std::vector<std::size_t> irk_stages{4, 32};
  double solver_tol = 1e-13;
};

struct RunConfig {
  SmibParams system;
  std::string scheme = "gauss-legendre";
  std::size_t stages = 4;
  std::vector<std::size_t> hidden_layers{50};
  std::optional<double> fixed_dt;  // variable time step when empty
  bool input_normalization = false;

  std::size_t epochs = 100'000;
  std::size_t validation_points = 1000;
  std::size_t patience = 5000;
  std::size_t log_every = 100;
  LossWeightSpec loss_weights;
  LearningRateSchedule learning_rate;

  std::uint64_t seed = 1;
  std::size_t collocation_points = 1000;
  GridSpec grid;
  RunMatrix matrix;
  std::size_t test_points = 2000;
  std::uint64_t data_seed = 0;
  double reference_tol = kReferenceTolerance;
  TimingSpec timing;

  std::filesystem::path output_dir = "out";
  std::size_t jobs = 1;
};

/// Default output directory: $RKPINN_OUT_DIR if set, otherwise "out".
[[nodiscard]] std::filesystem::path default_output_dir();

/// Built-in defaults with the output directory from the environment.
[[nodiscard]] RunConfig default_config();

/// Parses a JSON config; omitted fields keep their defaults and unknown keys
/// are rejected. The result is validated.
[[nodiscard]] RunConfig parse_config(std::string_view text);
[[nodiscard]] RunConfig parse_config_file(const std::filesystem::path& path);

/// Throws ConfigError naming the first invalid field.
void validate(const RunConfig& config);

/// Effective config as pretty-printed JSON; parse_config reproduces it.
[[nodiscard]] std::string config_to_json(const RunConfig& config);

/// Hash of everything that influences numerical results (output_dir and
/// jobs excluded).
[[nodiscard]] std::string config_hash(const RunConfig& config);

[[nodiscard]] TimeStepMode time_step_mode(const RunConfig& config);
[[nodiscard]] TrainingConfig training_config(const RunConfig& config, std::size_t stages);
[[nodiscard]] ExperimentConfig experiment_config(const RunConfig& config);

}  // namespace rkpinn
