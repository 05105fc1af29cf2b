#include "rkpinn/pinn.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace rkpinn {

namespace {

std::span<const double> view(const double* p, Eigen::Index n) { return {p, static_cast<std::size_t>(n)}; }

double effective_dt(const RkPinnModel& model, double point_dt) {
  return model.mode.is_variable() ? point_dt : model.mode.fixed_dt;
}

void check_point(const RkPinnModel& model, const Vector& x0, const Vector& u) {
  if (static_cast<std::size_t>(x0.size()) != model.state_dim || static_cast<std::size_t>(u.size()) != model.control_dim) {
    throw ShapeError(fmt::format("point has state/input sizes {}/{}, model expects {}/{}", x0.size(), u.size(),
                                 model.state_dim, model.control_dim));
  }
}

void check_system(const RkPinnModel& model, const OdeSystem& system) {
  if (system.state_dim() != model.state_dim || system.input_dim() != model.control_dim) {
    throw ShapeError("system dimensions do not match the model");
  }
}

Matrix assemble_batch(const RkPinnModel& model, const CollocationSet& set) {
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  const auto m = static_cast<Eigen::Index>(model.control_dim);
  const Eigen::Index offset = model.mode.is_variable() ? 1 : 0;
  Matrix inputs(static_cast<Eigen::Index>(model.input_dim()), static_cast<Eigen::Index>(set.size()));
  for (std::size_t j = 0; j < set.size(); ++j) {
    const auto& p = set.points[j];
    check_point(model, p.x0, p.u);
    const auto col = static_cast<Eigen::Index>(j);
    if (offset == 1) {
      inputs(0, col) = p.dt;
    }
    inputs.block(offset, col, n, 1) = p.x0;
    inputs.block(offset + n, col, m, 1) = p.u;
  }
  if (model.normalizes_inputs()) {
    inputs.colwise() -= model.input_offset;
    inputs.array().colwise() *= model.input_scale.array();
  }
  return inputs;
}

// Per-point residual evaluation and cotangent assembly. Buffers are reused
// across points; summation order follows the collocation order.
class ResidualKernel {
 public:
  ResidualKernel(const RkPinnModel& model, const OdeSystem& system, const LossWeights& weights)
      : model_(model), system_(system), weights_(weights),
        n_(static_cast<Eigen::Index>(model.state_dim)), s_(static_cast<Eigen::Index>(model.stages())),
        x_stage_(s_, n_), f_stage_(s_, n_), jac_stage_(s_ * n_, n_), eps_(s_, n_), g_stage_(s_, n_),
        p_stage_(s_, n_), x1_(n_), v_(n_), f1_(n_), jac1_(n_, n_), xi_(n_), g_dt_(n_) {}

  // Accumulates the loss terms of one point. When cot_h is non-null the
  // cotangents on the stage outputs (and on their dt-tangents, if cot_hd is
  // non-null) are written there, both laid out as s x n row-major.
  void accumulate(std::size_t index, double dt, const Vector& x0, const Vector& u, const double* h_ptr,
                  const double* hd_ptr, bool with_dt, LossBreakdown& loss, double* cot_h, double* cot_hd) {
    const Eigen::Map<const RowMatrix> h(h_ptr, s_, n_);
    const auto& tab = model_.tableau;
    const auto uspan = view(u.data(), u.size());

    x_stage_.noalias() = dt * (tab.alpha * h);
    x_stage_.rowwise() += x0.transpose();
    for (Eigen::Index k = 0; k < s_; ++k) {
      const double t = tab.gamma(k) * dt;
      const auto xk = view(x_stage_.row(k).data(), n_);
      system_.rhs(t, xk, uspan, std::span<double>(f_stage_.row(k).data(), static_cast<std::size_t>(n_)));
      if (cot_h != nullptr) {
        system_.jacobian(t, xk, uspan,
                         std::span<double>(jac_stage_.data() + k * n_ * n_, static_cast<std::size_t>(n_ * n_)));
      }
    }
    eps_ = h - f_stage_;
    if (!eps_.allFinite()) {
      throw PinnError(fmt::format("non-finite stage residual at collocation point {}", index));
    }
    loss.stage_terms += eps_.cwiseProduct(eps_);
    loss.stage += (weights_.stage.array() * eps_.array().square()).sum();

    if (cot_h != nullptr) {
      Eigen::Map<RowMatrix> ch(cot_h, s_, n_);
      g_stage_ = 2.0 * weights_.stage.cwiseProduct(eps_);
      for (Eigen::Index k = 0; k < s_; ++k) {
        p_stage_.row(k).noalias() = g_stage_.row(k) * jac_stage_.block(k * n_, 0, n_, n_);
      }
      ch = g_stage_;
      ch.noalias() -= dt * (tab.alpha.transpose() * p_stage_);
    }

    if (!with_dt) {
      return;
    }
    const Eigen::Map<const RowMatrix> hd(hd_ptr, s_, n_);
    x1_.noalias() = h.transpose() * tab.beta;
    v_ = x1_;
    v_.noalias() += dt * (hd.transpose() * tab.beta);
    x1_ = x0 + dt * x1_;
    const auto x1span = view(x1_.data(), n_);
    system_.rhs(dt, x1span, uspan, std::span<double>(f1_.data(), static_cast<std::size_t>(n_)));
    xi_ = v_ - f1_;
    if (!xi_.allFinite()) {
      throw PinnError(fmt::format("non-finite dt residual at collocation point {}", index));
    }
    loss.dt_terms += xi_.cwiseProduct(xi_);
    loss.dt += (weights_.dt.array() * xi_.array().square()).sum();

    if (cot_h != nullptr) {
      system_.jacobian(dt, x1span, uspan, std::span<double>(jac1_.data(), static_cast<std::size_t>(n_ * n_)));
      g_dt_ = 2.0 * weights_.dt.cwiseProduct(xi_);
      // d xi / d h^k = beta_k (I - dt J1), d xi / d hd^k = dt beta_k I.
      const Vector through_h = g_dt_ - dt * (jac1_.transpose() * g_dt_);
      Eigen::Map<RowMatrix> ch(cot_h, s_, n_);
      Eigen::Map<RowMatrix> chd(cot_hd, s_, n_);
      for (Eigen::Index k = 0; k < s_; ++k) {
        ch.row(k) += tab.beta(k) * through_h.transpose();
        chd.row(k) = (dt * tab.beta(k)) * g_dt_.transpose();
      }
    }
  }

 private:
  const RkPinnModel& model_;
  const OdeSystem& system_;
  const LossWeights& weights_;
  Eigen::Index n_;
  Eigen::Index s_;
  RowMatrix x_stage_, f_stage_, jac_stage_, eps_, g_stage_, p_stage_;
  Vector x1_, v_, f1_;
  RowMatrix jac1_;
  Vector xi_, g_dt_;
};

LossBreakdown empty_breakdown(const RkPinnModel& model) {
  LossBreakdown b;
  b.stage_terms = RowMatrix::Zero(static_cast<Eigen::Index>(model.stages()), static_cast<Eigen::Index>(model.state_dim));
  b.dt_terms = Vector::Zero(static_cast<Eigen::Index>(model.state_dim));
  return b;
}

// Shared implementation of total_loss and loss_gradient.
LossBreakdown evaluate_loss(const RkPinnModel& model, const OdeSystem& system, const CollocationSet& collocation,
                            const LossWeights& weights, MlpGradients* gradient) {
  model.validate();
  check_system(model, system);
  weights.validate(model.stages(), model.state_dim);
  if (collocation.empty()) {
    throw std::invalid_argument("collocation set is empty");
  }
  const bool with_dt = model.mode.is_variable() && weights.dt_active();
  const Matrix inputs = assemble_batch(model, collocation);
  MlpTape tape;
  tape.record(model.mlp, inputs, with_dt ? std::optional<std::size_t>(0) : std::nullopt);

  LossBreakdown loss = empty_breakdown(model);
  ResidualKernel kernel(model, system, weights);
  const auto out_dim = static_cast<Eigen::Index>(model.output_dim());
  const auto batch = inputs.cols();
  Matrix cot_y;
  Matrix cot_yd;
  if (gradient) {
    cot_y = Matrix::Zero(out_dim, batch);
    if (with_dt) {
      cot_yd = Matrix::Zero(out_dim, batch);
    }
  }
  const Matrix& y = tape.output();
  // The tape differentiates with respect to the network input; rescale to dt.
  const double dt_scale = (with_dt && model.normalizes_inputs()) ? model.input_scale(0) : 1.0;
  Matrix yd_scaled;
  if (with_dt && dt_scale != 1.0) {
    yd_scaled = dt_scale * tape.output_tangent();
  }
  const Matrix& yd = (with_dt && dt_scale != 1.0) ? yd_scaled : tape.output_tangent();
  for (Eigen::Index j = 0; j < batch; ++j) {
    const auto& p = collocation.points[static_cast<std::size_t>(j)];
    kernel.accumulate(static_cast<std::size_t>(j), effective_dt(model, p.dt), p.x0, p.u, y.col(j).data(),
                      with_dt ? yd.col(j).data() : nullptr, with_dt, loss,
                      gradient ? cot_y.col(j).data() : nullptr,
                      (gradient && with_dt) ? cot_yd.col(j).data() : nullptr);
  }
  loss.total = loss.stage + loss.dt;
  if (gradient) {
    *gradient = MlpParameters::zeros(model.mlp.layer_sizes);
    if (with_dt && dt_scale != 1.0) {
      cot_yd *= dt_scale;
    }
    tape.backward(cot_y, cot_yd, *gradient);
  }
  return loss;
}

}  // namespace

RkPinnModel RkPinnModel::create(const ButcherTableau& tableau, std::size_t state_dim, std::size_t control_dim,
                                TimeStepMode mode, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  if (hidden.empty()) {
    throw ShapeError("at least one hidden layer is required");
  }
  RkPinnModel model;
  model.tableau = tableau;
  model.state_dim = state_dim;
  model.control_dim = control_dim;
  model.mode = mode;
  std::vector<std::size_t> sizes;
  sizes.push_back(model.input_dim());
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(model.output_dim());
  model.mlp = glorot_init(sizes, seed);
  model.validate();
  return model;
}

void RkPinnModel::normalize_inputs(const Vector& lo, const Vector& hi) {
  const auto d = static_cast<Eigen::Index>(input_dim());
  if (lo.size() != d || hi.size() != d) {
    throw ShapeError(fmt::format("input bounds must have {} entries", d));
  }
  if (!((hi - lo).array() >= 0.0).all() || !lo.allFinite() || !hi.allFinite()) {
    throw PinnError("input bounds must be finite with hi >= lo");
  }
  input_offset = 0.5 * (lo + hi);
  input_scale = Vector::Ones(d);
  // A degenerate range (a fixed input) is only shifted.
  for (Eigen::Index i = 0; i < d; ++i) {
    if (hi(i) > lo(i)) input_scale(i) = 2.0 / (hi(i) - lo(i));
  }
}

Vector RkPinnModel::network_input(const Vector& input) const {
  if (!normalizes_inputs()) {
    return input;
  }
  return (input - input_offset).cwiseProduct(input_scale);
}

void RkPinnModel::validate() const {
  rkpinn::validate(tableau);
  if (input_offset.size() != input_scale.size() ||
      (normalizes_inputs() && input_scale.size() != static_cast<Eigen::Index>(input_dim()))) {
    throw ShapeError("input normalization must cover every network input");
  }
  if (normalizes_inputs() && (!input_offset.allFinite() || !input_scale.allFinite())) {
    throw PinnError("input normalization must be finite");
  }
  if (state_dim == 0) {
    throw ShapeError("model state dimension must be positive");
  }
  mlp.check_consistent();
  if (mlp.input_dim() != input_dim() || mlp.output_dim() != output_dim()) {
    throw ShapeError(fmt::format("network {} -> {} does not match model {} -> {} (s = {}, n = {})", mlp.input_dim(),
                                 mlp.output_dim(), input_dim(), output_dim(), stages(), state_dim));
  }
  if (!mode.is_variable() && !(mode.fixed_dt >= 0.0 && std::isfinite(mode.fixed_dt))) {
    throw PinnError("fixed time step must be finite and non-negative");
  }
}

LossWeights LossWeights::uniform(std::size_t stages, std::size_t state_dim, double stage_weight, double dt_weight) {
  LossWeights w;
  w.stage = RowMatrix::Constant(static_cast<Eigen::Index>(stages), static_cast<Eigen::Index>(state_dim), stage_weight);
  w.dt = Vector::Constant(static_cast<Eigen::Index>(state_dim), dt_weight);
  return w;
}

void LossWeights::validate(std::size_t stages, std::size_t state_dim) const {
  if (stage.rows() != static_cast<Eigen::Index>(stages) || stage.cols() != static_cast<Eigen::Index>(state_dim) ||
      dt.size() != static_cast<Eigen::Index>(state_dim)) {
    throw ShapeError(fmt::format("loss weights must be {} x {} (stage) and {} (dt)", stages, state_dim, state_dim));
  }
  if (!stage.allFinite() || !dt.allFinite() || stage.minCoeff() < 0.0 || dt.minCoeff() < 0.0) {
    throw std::invalid_argument("loss weights must be finite and non-negative");
  }
}

Vector assemble_input(const RkPinnModel& model, std::optional<double> dt, const Vector& x0, const Vector& u) {
  check_point(model, x0, u);
  if (model.mode.is_variable() && !dt) {
    throw PinnError("variable time step model requires dt as input");
  }
  if (!model.mode.is_variable() && dt) {
    throw PinnError("dt must not be supplied to a fixed time step model");
  }
  Vector input(static_cast<Eigen::Index>(model.input_dim()));
  Eigen::Index pos = 0;
  if (dt) {
    input(pos++) = *dt;
  }
  input.segment(pos, x0.size()) = x0;
  pos += x0.size();
  input.segment(pos, u.size()) = u;
  return input;
}

RowMatrix predict_stages(const RkPinnModel& model, const Vector& input) {
  const Vector y = forward(model.mlp, model.network_input(input));
  if (static_cast<std::size_t>(y.size()) != model.output_dim()) {
    throw ShapeError("network output size does not match s * n");
  }
  return Eigen::Map<const RowMatrix>(y.data(), static_cast<Eigen::Index>(model.stages()),
                                     static_cast<Eigen::Index>(model.state_dim));
}

Vector predict_state(const RkPinnModel& model, double dt, const Vector& x0, const RowMatrix& stages) {
  if (stages.rows() != static_cast<Eigen::Index>(model.stages()) || stages.cols() != x0.size()) {
    throw ShapeError("stage matrix must be s x n");
  }
  return x0 + dt * (stages.transpose() * model.tableau.beta);
}

RowMatrix stage_residuals(const RkPinnModel& model, const OdeSystem& system, double dt, const Vector& x0,
                          const Vector& u, const RowMatrix& stages) {
  check_system(model, system);
  check_point(model, x0, u);
  const auto s = static_cast<Eigen::Index>(model.stages());
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  if (stages.rows() != s || stages.cols() != n) {
    throw ShapeError("stage matrix must be s x n");
  }
  const auto& tab = model.tableau;
  RowMatrix points = dt * (tab.alpha * stages);
  points.rowwise() += x0.transpose();
  RowMatrix eps(s, n);
  Vector fk(n);
  for (Eigen::Index k = 0; k < s; ++k) {
    const Vector xk = points.row(k).transpose();
    system.rhs(tab.gamma(k) * dt, view(xk.data(), n), view(u.data(), u.size()),
               std::span<double>(fk.data(), static_cast<std::size_t>(n)));
    eps.row(k) = stages.row(k) - fk.transpose();
  }
  return eps;
}

Vector state_dt_derivative(const RkPinnModel& model, double dt, const Vector& x0, const Vector& u) {
  if (!model.mode.is_variable()) {
    throw PinnError("dt derivative requires a variable time step model");
  }
  auto tangent = forward_tangent(model.mlp, model.network_input(assemble_input(model, dt, x0, u)), 0);
  if (model.normalizes_inputs()) {
    tangent.derivative *= model.input_scale(0);
  }
  const auto s = static_cast<Eigen::Index>(model.stages());
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  const Eigen::Map<const RowMatrix> h(tangent.output.data(), s, n);
  const Eigen::Map<const RowMatrix> hd(tangent.derivative.data(), s, n);
  return h.transpose() * model.tableau.beta + dt * (hd.transpose() * model.tableau.beta);
}

Vector dt_residual(const RkPinnModel& model, const OdeSystem& system, double dt, const Vector& x0, const Vector& u) {
  check_system(model, system);
  const Vector rate = state_dt_derivative(model, dt, x0, u);
  const Vector x1 = predict_state(model, dt, x0, predict_stages(model, assemble_input(model, dt, x0, u)));
  return rate - system.rhs(dt, x1, u);
}

LossBreakdown total_loss(const RkPinnModel& model, const OdeSystem& system, const CollocationSet& collocation,
                         const LossWeights& weights) {
  return evaluate_loss(model, system, collocation, weights, nullptr);
}

LossGradient loss_gradient(const RkPinnModel& model, const OdeSystem& system, const CollocationSet& collocation,
                           const LossWeights& weights) {
  LossGradient out;
  out.loss = evaluate_loss(model, system, collocation, weights, &out.gradient);
  return out;
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("training epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("training patience must be >= 1");
  if (log_every < 1) throw std::invalid_argument("training log_every must be >= 1");
  if (!(learning_rate.initial > 0.0) || !(learning_rate.decay > 0.0) || !(learning_rate.decay_every > 0.0)) {
    throw std::invalid_argument("learning rate schedule parameters must be positive");
  }
}

TrainingResult train(const RkPinnModel& initial, const OdeSystem& system, const CollocationSet& collocation,
                     const CollocationSet& validation, const TrainingConfig& config) {
  config.validate();
  initial.validate();
  if (collocation.empty() || validation.empty()) {
    throw std::invalid_argument("training and validation sets must be non-empty");
  }
  const auto start = std::chrono::steady_clock::now();
  const LossWeights weights =
      config.loss_weights ? *config.loss_weights : LossWeights::uniform(initial.stages(), initial.state_dim);

  TrainingResult result{initial, {}};
  TrainingReport& report = result.report;
  RkPinnModel current = initial;
  AdamState adam = AdamState::for_parameters(current.mlp);
  report.best_validation_loss = std::numeric_limits<double>::infinity();
  report.training_loss_history.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    LossGradient lg;
    try {
      lg = loss_gradient(current, system, collocation, weights);
    } catch (const PinnError& e) {
      report.diverged = true;
      report.message = fmt::format("epoch {}: {}", epoch, e.what());
      break;
    }
    if (!std::isfinite(lg.loss.total)) {
      report.diverged = true;
      report.message = fmt::format("epoch {}: non-finite training loss", epoch);
      break;
    }
    if (epoch == 0) {
      report.initial_training_loss = lg.loss.total;
    }
    report.training_loss_history.push_back(lg.loss.total);
    const double lr = config.learning_rate(epoch);
    if (!adam_step(current.mlp, lg.gradient, adam, lr)) {
      report.diverged = true;
      report.message = fmt::format("epoch {}: non-finite gradient, step rejected", epoch);
      break;
    }
    const std::size_t steps = epoch + 1;
    report.epochs_run = steps;

    const bool last = steps == config.epochs;
    if (steps % config.log_every == 0 || last) {
      double val = std::numeric_limits<double>::quiet_NaN();
      try {
        val = total_loss(current, system, validation, weights).total;
      } catch (const PinnError&) {
      }
      report.validation_loss_history.push_back(val);
      report.log.push_back({steps, lr, lg.loss.total, val, lg.loss.stage, lg.loss.dt});
      if (val < report.best_validation_loss) {
        report.best_validation_loss = val;
        report.best_epoch = steps;
        result.model.mlp = current.mlp;
      }
      if (!std::isfinite(val)) {
        report.diverged = true;
        report.message = fmt::format("epoch {}: non-finite validation loss", steps);
        break;
      }
      if (steps - report.best_epoch >= config.patience) {
        report.stopped_early = true;
        break;
      }
    }
  }
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string training_log_csv(const TrainingReport& report) {
  std::string out = "epoch,lr,train_loss,val_loss,stage_loss,dt_loss\n";
  for (const auto& row : report.log) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", row.epoch, row.lr, row.train_loss,
                       row.val_loss, row.stage_loss, row.dt_loss);
  }
  return out;
}

Vector evaluate(const RkPinnModel& model, double dt, const Vector& x0, const Vector& u) {
  if (!model.mode.is_variable() && dt != model.mode.fixed_dt) {
    throw PinnError(fmt::format("fixed time step model (dt = {}) evaluated at dt = {}", model.mode.fixed_dt, dt));
  }
  const auto input = assemble_input(model, model.mode.is_variable() ? std::optional<double>(dt) : std::nullopt, x0, u);
  return predict_state(model, dt, x0, predict_stages(model, input));
}

Matrix evaluate(const RkPinnModel& model, const CollocationSet& points) {
  Matrix out(static_cast<Eigen::Index>(model.state_dim), static_cast<Eigen::Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j) {
    const auto& p = points.points[j];
    out.col(static_cast<Eigen::Index>(j)) = evaluate(model, effective_dt(model, p.dt), p.x0, p.u);
  }
  return out;
}

}  // namespace rkpinn
