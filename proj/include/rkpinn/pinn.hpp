#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rkpinn/dynamics.hpp"
#include "rkpinn/nn.hpp"
#include "rkpinn/tableau.hpp"
#include "rkpinn/types.hpp"

namespace rkpinn {

class PinnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Whether the time step is a network input (variable) or baked into the
/// model (fixed).
struct TimeStepMode {
  enum class Kind { fixed_dt, variable_dt };
  Kind kind = Kind::variable_dt;
  double fixed_dt = 0.0;

  [[nodiscard]] static TimeStepMode variable() { return {Kind::variable_dt, 0.0}; }
  [[nodiscard]] static TimeStepMode fixed(double dt) { return {Kind::fixed_dt, dt}; }
  [[nodiscard]] bool is_variable() const { return kind == Kind::variable_dt; }
};

/// Network that maps [dt, x0, u] (variable mode) or [x0, u] (fixed mode) to
/// the s stage vectors of an RK scheme, stage-major: output k*n + i holds
/// stage k, state i.
struct RkPinnModel {
  MlpParameters mlp;
  ButcherTableau tableau;
  std::size_t state_dim = 0;
  std::size_t control_dim = 0;
  TimeStepMode mode;
  // Optional affine input map z = (input - input_offset) * input_scale,
  // applied before the first layer. Empty vectors mean raw inputs.
  Vector input_offset;
  Vector input_scale;

  [[nodiscard]] std::size_t stages() const { return tableau.stages; }
  [[nodiscard]] std::size_t input_dim() const { return (mode.is_variable() ? 1 : 0) + state_dim + control_dim; }
  [[nodiscard]] std::size_t output_dim() const { return stages() * state_dim; }

  /// Glorot-initialized model with the given hidden layer widths.
  [[nodiscard]] static RkPinnModel create(const ButcherTableau& tableau, std::size_t state_dim,
                                          std::size_t control_dim, TimeStepMode mode,
                                          const std::vector<std::size_t>& hidden, std::uint64_t seed);

  /// Maps each input range [lo_i, hi_i] onto [-1, 1]; a zero-width range is
  /// only shifted to 0.
  void normalize_inputs(const Vector& lo, const Vector& hi);
  [[nodiscard]] bool normalizes_inputs() const { return input_scale.size() > 0; }
  /// The vector the first layer sees for a raw input.
  [[nodiscard]] Vector network_input(const Vector& input) const;

  void validate() const;
};

struct CollocationPoint {
  double dt = 0.0;
  Vector x0;
  Vector u;
};

/// Inputs only; no target values are attached.
struct CollocationSet {
  std::vector<CollocationPoint> points;

  [[nodiscard]] std::size_t size() const { return points.size(); }
  [[nodiscard]] bool empty() const { return points.empty(); }
};

/// lambda_i^k per (stage k, state i) and lambda_i^dt per state i.
struct LossWeights {
  RowMatrix stage;  // s x n
  Vector dt;        // n

  [[nodiscard]] static LossWeights uniform(std::size_t stages, std::size_t state_dim, double stage_weight = 1.0,
                                           double dt_weight = 1.0);
  void validate(std::size_t stages, std::size_t state_dim) const;
  [[nodiscard]] bool dt_active() const { return dt.size() > 0 && dt.maxCoeff() > 0.0; }
};

/// Input vector: [dt, x0, u] in variable mode, [x0, u] in fixed mode.
/// Throws PinnError when dt is supplied in fixed mode or missing in variable mode.
[[nodiscard]] Vector assemble_input(const RkPinnModel& model, std::optional<double> dt, const Vector& x0,
                                    const Vector& u);

/// Reshapes the network output into the s x n stage matrix.
[[nodiscard]] RowMatrix predict_stages(const RkPinnModel& model, const Vector& input);

/// x1 = x0 + dt * sum_k beta_k h^k.
[[nodiscard]] Vector predict_state(const RkPinnModel& model, double dt, const Vector& x0, const RowMatrix& stages);

/// eps^k = h^k - f(gamma_k dt, x0 + dt sum_l alpha_kl h^l; u), with t0 = 0.
[[nodiscard]] RowMatrix stage_residuals(const RkPinnModel& model, const OdeSystem& system, double dt,
                                        const Vector& x0, const Vector& u, const RowMatrix& stages);

/// xi = d x1 / d dt - f(dt, x1; u), differentiating through the network's
/// dt input. Variable mode only.
[[nodiscard]] Vector dt_residual(const RkPinnModel& model, const OdeSystem& system, double dt, const Vector& x0,
                                 const Vector& u);

/// d x1 / d dt including the network's own dependence on dt.
[[nodiscard]] Vector state_dt_derivative(const RkPinnModel& model, double dt, const Vector& x0, const Vector& u);

struct LossBreakdown {
  double total = 0.0;
  double stage = 0.0;    // sum_{i,k} lambda_i^k L_i^k
  double dt = 0.0;       // sum_i lambda_i^dt L_i^dt
  RowMatrix stage_terms;  // unweighted L_i^k, s x n
  Vector dt_terms;        // unweighted L_i^dt, n
};

/// Weighted sum of squared residuals over the collocation points (sums, not
/// means). The dt term is skipped in fixed mode.
[[nodiscard]] LossBreakdown total_loss(const RkPinnModel& model, const OdeSystem& system,
                                       const CollocationSet& collocation, const LossWeights& weights);

struct LossGradient {
  LossBreakdown loss;
  MlpGradients gradient;
};

/// Exact gradient of total_loss with respect to every weight and bias.
/// Throws PinnError naming the point index if a residual is non-finite.
[[nodiscard]] LossGradient loss_gradient(const RkPinnModel& model, const OdeSystem& system,
                                         const CollocationSet& collocation, const LossWeights& weights);

struct TrainingConfig {
  std::size_t epochs = 100'000;
  std::size_t validation_points = 1000;
  std::size_t patience = 5000;
  std::uint64_t seed = 0;
  std::optional<LossWeights> loss_weights;  // uniform ones when empty
  std::size_t log_every = 100;
  LearningRateSchedule learning_rate;

  void validate() const;
};

struct TrainingLogRow {
  std::size_t epoch = 0;  // optimizer steps applied so far
  double lr = 0.0;         // learning rate of the latest step
  double train_loss = 0.0;  // loss whose gradient produced the latest step
  double val_loss = 0.0;    // validation loss after the latest step
  double stage_loss = 0.0;
  double dt_loss = 0.0;
};

struct TrainingReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  double initial_training_loss = 0.0;
  std::vector<double> training_loss_history;    // one entry per epoch
  std::vector<double> validation_loss_history;  // one entry per log row
  std::vector<TrainingLogRow> log;
  bool stopped_early = false;
  bool diverged = false;
  std::string message;
  double wall_time_seconds = 0.0;
};

struct TrainingResult {
  RkPinnModel model;  // parameters with the best validation loss
  TrainingReport report;
};

/// Full-batch Adam training with early stopping on the validation loss.
[[nodiscard]] TrainingResult train(const RkPinnModel& model, const OdeSystem& system,
                                   const CollocationSet& collocation, const CollocationSet& validation,
                                   const TrainingConfig& config);

/// CSV `epoch,lr,train_loss,val_loss,stage_loss,dt_loss`.
[[nodiscard]] std::string training_log_csv(const TrainingReport& report);

/// Single forward pass followed by the beta-weighted stage sum. In fixed mode
/// `dt` must equal the model's time step.
[[nodiscard]] Vector evaluate(const RkPinnModel& model, double dt, const Vector& x0, const Vector& u);

/// Batched evaluate; column j is the prediction for point j.
[[nodiscard]] Matrix evaluate(const RkPinnModel& model, const CollocationSet& points);

}  // namespace rkpinn
