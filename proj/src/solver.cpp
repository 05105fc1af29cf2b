#include "rkpinn/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace rkpinn {

namespace {

std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<double> view(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void check_step_args(const OdeSystem& system, const ButcherTableau& tableau, const Vector& x0, const Vector& u,
                     double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw std::invalid_argument(fmt::format("time step must be positive and finite, got {}", dt));
  }
  if (static_cast<std::size_t>(x0.size()) != system.state_dim() ||
      static_cast<std::size_t>(u.size()) != system.input_dim()) {
    throw std::invalid_argument("state or input dimension does not match the system");
  }
  validate(tableau);
}

// Evaluates stage points X_k = x0 + dt sum_l alpha_kl h^l and F_k = f(X_k).
// Optionally also the per-stage Jacobians (row-major n x n each).
class StageEvaluator {
 public:
  StageEvaluator(const OdeSystem& system, const ButcherTableau& tableau, double t0, const Vector& x0,
                 const Vector& u, double dt)
      : system_(system), tableau_(tableau), t0_(t0), x0_(x0), u_(u), dt_(dt),
        n_(static_cast<Eigen::Index>(system.state_dim())), s_(static_cast<Eigen::Index>(tableau.stages)),
        points_(s_, n_), values_(s_, n_), jacobians_(s_ * n_, n_) {}

  void evaluate(const RowMatrix& stages, bool with_jacobians) {
    points_.noalias() = dt_ * (tableau_.alpha * stages);
    points_.rowwise() += x0_.transpose();
    for (Eigen::Index k = 0; k < s_; ++k) {
      const double t = t0_ + tableau_.gamma(k) * dt_;
      std::span<const double> xk(points_.row(k).data(), static_cast<std::size_t>(n_));
      system_.rhs(t, xk, view(u_), std::span<double>(values_.row(k).data(), static_cast<std::size_t>(n_)));
      if (with_jacobians) {
        system_.jacobian(t, xk, view(u_),
                         std::span<double>(jacobians_.data() + k * n_ * n_, static_cast<std::size_t>(n_ * n_)));
      }
    }
  }

  [[nodiscard]] const RowMatrix& values() const { return values_; }
  [[nodiscard]] const RowMatrix& jacobians() const { return jacobians_; }

 private:
  const OdeSystem& system_;
  const ButcherTableau& tableau_;
  double t0_;
  const Vector& x0_;
  const Vector& u_;
  double dt_;
  Eigen::Index n_;
  Eigen::Index s_;
  RowMatrix points_;
  RowMatrix values_;
  RowMatrix jacobians_;  // stacked s blocks of n x n
};

}  // namespace

const char* to_string(StepStatus status) {
  switch (status) {
    case StepStatus::converged: return "converged";
    case StepStatus::max_iterations: return "max_iterations";
    case StepStatus::singular_jacobian: return "singular_jacobian";
    case StepStatus::non_finite: return "non_finite";
  }
  return "unknown";
}

double stage_equation_residual(const OdeSystem& system, const ButcherTableau& tableau, double t0, const Vector& x0,
                               const Vector& u, double dt, const RowMatrix& stages) {
  StageEvaluator eval(system, tableau, t0, x0, u, dt);
  eval.evaluate(stages, false);
  return (stages - eval.values()).cwiseAbs().maxCoeff();
}

StepOutcome irk_step(const OdeSystem& system, const ButcherTableau& tableau, double t0, const Vector& x0,
                     const Vector& u, double dt, const IrkStepConfig& cfg) {
  check_step_args(system, tableau, x0, u, dt);
  if (!(cfg.newton_tol > 0.0) || cfg.max_newton_iters < 1) {
    throw std::invalid_argument("IRK config requires newton_tol > 0 and max_newton_iters >= 1");
  }
  const auto n = static_cast<Eigen::Index>(system.state_dim());
  const auto s = static_cast<Eigen::Index>(tableau.stages);
  const Eigen::Index dim = s * n;

  RowMatrix stages(s, n);
  if (cfg.initial_stage_guess == StageGuess::rhs_at_x0) {
    const Vector f0 = system.rhs(t0, x0, u);
    stages.rowwise() = f0.transpose();
  } else {
    stages.setZero();
  }

  StageEvaluator eval(system, tableau, t0, x0, u, dt);
  Matrix newton(dim, dim);
  Vector correction(dim);
  Eigen::PartialPivLU<Matrix> lu;

  StepOutcome out;
  RowMatrix best = stages;
  double best_residual = std::numeric_limits<double>::infinity();
  out.status = StepStatus::max_iterations;

  for (int iter = 0;; ++iter) {
    eval.evaluate(stages, true);
    const RowMatrix g = stages - eval.values();
    const double residual = g.allFinite() ? g.cwiseAbs().maxCoeff() : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(residual)) {
      out.status = StepStatus::non_finite;
      break;
    }
    if (residual < best_residual) {
      best_residual = residual;
      best = stages;
    }
    out.newton_iterations = iter;
    if (residual <= cfg.newton_tol) {
      out.status = StepStatus::converged;
      break;
    }
    if (iter >= cfg.max_newton_iters) {
      out.status = StepStatus::max_iterations;
      break;
    }
    // Block (k, l) of the Newton matrix: delta_kl I - dt alpha_kl J_k.
    const auto& jac = eval.jacobians();
    newton.setIdentity();
    for (Eigen::Index k = 0; k < s; ++k) {
      const auto jk = jac.block(k * n, 0, n, n);
      for (Eigen::Index l = 0; l < s; ++l) {
        const double a = tableau.alpha(k, l);
        if (a != 0.0) {
          newton.block(k * n, l * n, n, n) -= (dt * a) * jk;
        }
      }
    }
    lu.compute(newton);
    if (!(lu.rcond() > std::numeric_limits<double>::epsilon())) {
      out.status = StepStatus::singular_jacobian;
      out.newton_iterations = iter;
      break;
    }
    correction = lu.solve(-Eigen::Map<const Vector>(g.data(), dim));
    if (!correction.allFinite()) {
      out.status = StepStatus::non_finite;
      break;
    }
    stages += Eigen::Map<const RowMatrix>(correction.data(), s, n);
  }

  out.converged = out.status == StepStatus::converged;
  out.stages = best;
  out.final_residual = best_residual;
  out.next_state = x0 + dt * (best.transpose() * tableau.beta);
  return out;
}

IrkTrajectory irk_trajectory(const OdeSystem& system, const ButcherTableau& tableau, double t0, const Vector& x0,
                             const Vector& u, double dt, std::size_t n_steps, const IrkStepConfig& cfg) {
  if (n_steps < 1) {
    throw std::invalid_argument("irk_trajectory requires at least one step");
  }
  IrkTrajectory traj;
  traj.times.reserve(n_steps + 1);
  traj.states.reserve(n_steps + 1);
  traj.times.push_back(t0);
  traj.states.push_back(x0);
  Vector x = x0;
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    auto step = irk_step(system, tableau, t, x, u, dt, cfg);
    if (!step.converged) {
      traj.failed_step = i;
      break;
    }
    x = std::move(step.next_state);
    traj.times.push_back(t0 + static_cast<double>(i + 1) * dt);
    traj.states.push_back(x);
    traj.newton_iterations.push_back(step.newton_iterations);
  }
  return traj;
}

namespace {

// Dormand-Prince 5(4).
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                 a76 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                 e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

double error_norm(const Vector& err, const Vector& x0, const Vector& x1, double rtol, double atol) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double scale = atol + rtol * std::max(std::abs(x0(i)), std::abs(x1(i)));
    const double r = err(i) / scale;
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(err.size()));
}

}  // namespace

Rk45Result rk45_solve(const OdeSystem& system, double t0, const Vector& x0, const Vector& u, double t_end,
                      const Rk45Options& opt, std::span<const double> output_times) {
  if (!(t_end > t0)) {
    throw std::invalid_argument(fmt::format("rk45_solve requires t_end > t0 (got {} <= {})", t_end, t0));
  }
  if (!(opt.rel_tol > 0.0) || !(opt.abs_tol > 0.0)) {
    throw std::invalid_argument("rk45_solve tolerances must be positive");
  }
  if (static_cast<std::size_t>(x0.size()) != system.state_dim() ||
      static_cast<std::size_t>(u.size()) != system.input_dim()) {
    throw std::invalid_argument("state or input dimension does not match the system");
  }
  // Visit output times in ascending order, remember where each goes.
  std::vector<std::size_t> order(output_times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return output_times[a] < output_times[b]; });
  for (double tq : output_times) {
    if (!(tq >= t0 && tq <= t_end)) {
      throw std::invalid_argument(fmt::format("output time {} outside [{}, {}]", tq, t0, t_end));
    }
  }

  const auto n = x0.size();
  Rk45Result res;
  res.outputs.assign(output_times.size(), Vector());
  std::size_t next_out = 0;
  auto flush_outputs = [&](double t, const Vector& x) {
    while (next_out < order.size() && output_times[order[next_out]] == t) {
      res.outputs[order[next_out]] = x;
      ++next_out;
    }
  };

  Vector x = x0;
  double t = t0;
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), x_new(n), err(n);
  auto f = [&](double tt, const Vector& xx, Vector& out) {
    system.rhs(tt, view(xx), view(u), view(out));
    ++res.rhs_evaluations;
  };

  if (opt.record_steps) {
    res.times.push_back(t);
    res.states.push_back(x);
  }
  flush_outputs(t, x);
  f(t, x, k1);

  double h = opt.initial_step;
  if (!(h > 0.0)) {
    // Initial step heuristic (Hairer, Norsett & Wanner, II.4).
    auto scaled_norm = [&](const Vector& v) {
      double sum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double sc = opt.abs_tol + opt.rel_tol * std::abs(x(i));
        sum += (v(i) / sc) * (v(i) / sc);
      }
      return std::sqrt(sum / static_cast<double>(n));
    };
    const double d0 = scaled_norm(x);
    const double d1 = scaled_norm(k1);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t_end - t0);
    tmp = x + h0 * k1;
    f(t + h0, tmp, k2);
    const double d2 = scaled_norm(k2 - k1) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }
  h = std::min(h, t_end - t0);

  constexpr double kExpo = 0.2;
  const double expo1 = kExpo - opt.pi_beta * 0.75;
  double err_old = 1e-4;
  bool last_rejected = false;

  while (t < t_end) {
    if (res.accepted_steps + res.rejected_steps >= opt.max_steps) {
      throw SolverError(fmt::format("rk45_solve exceeded {} steps at t = {}", opt.max_steps, t));
    }
    // Land on the next output time or the end point.
    double target = t_end;
    if (next_out < order.size()) {
      target = std::min(target, output_times[order[next_out]]);
    }
    double step = h;
    bool lands = false;
    if (t + step >= target || (target - (t + step)) < 1e-12 * std::max(1.0, std::abs(target))) {
      step = target - t;
      lands = true;
    }
    if (step < 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))) {
      throw SolverError(fmt::format("rk45_solve step size underflow ({:.3e}) at t = {}", step, t));
    }

    tmp = x + step * (a21 * k1);
    f(t + c2 * step, tmp, k2);
    tmp = x + step * (a31 * k1 + a32 * k2);
    f(t + c3 * step, tmp, k3);
    tmp = x + step * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * step, tmp, k4);
    tmp = x + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * step, tmp, k5);
    tmp = x + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(t + step, tmp, k6);
    x_new = x + step * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    f(t + step, x_new, k7);
    err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double e = error_norm(err, x, x_new, opt.rel_tol, opt.abs_tol);
    if (!std::isfinite(e)) {
      e = 1e10;
    }
    if (e <= 1.0) {
      double factor = opt.safety * std::pow(std::max(e, 1e-300), -expo1) * std::pow(err_old, opt.pi_beta);
      factor = std::clamp(factor, opt.min_factor, opt.max_factor);
      if (last_rejected) {
        factor = std::min(factor, 1.0);
      }
      err_old = std::max(e, 1e-4);
      t = lands ? target : t + step;
      x = x_new;
      k1 = k7;
      ++res.accepted_steps;
      if (opt.record_steps) {
        res.times.push_back(t);
        res.states.push_back(x);
      }
      flush_outputs(t, x);
      // A landing step is shortened artificially; do not let it shrink h.
      h = lands ? std::max(h, step * factor) : step * factor;
      last_rejected = false;
    } else {
      const double factor = std::max(opt.min_factor, opt.safety * std::pow(e, -expo1));
      h = step * factor;
      ++res.rejected_steps;
      last_rejected = true;
    }
  }
  res.endpoint = x;
  return res;
}

Rk45Result rk45_solve(const OdeSystem& system, double t0, const Vector& x0, const Vector& u, double t_end,
                      double rel_tol, double abs_tol) {
  Rk45Options opt;
  opt.rel_tol = rel_tol;
  opt.abs_tol = abs_tol;
  return rk45_solve(system, t0, x0, u, t_end, opt);
}

std::vector<Vector> reference_solution(const OdeSystem& system, const Vector& x0, const Vector& u,
                                       std::span<const double> query_times, double tol) {
  double t_max = 0.0;
  for (double tq : query_times) {
    if (!(tq >= 0.0) || !std::isfinite(tq)) {
      throw std::invalid_argument(fmt::format("query time {} must be finite and non-negative", tq));
    }
    t_max = std::max(t_max, tq);
  }
  if (t_max == 0.0) {
    return std::vector<Vector>(query_times.size(), x0);
  }
  Rk45Options opt;
  opt.rel_tol = tol;
  opt.abs_tol = tol;
  opt.record_steps = false;
  auto res = rk45_solve(system, 0.0, x0, u, t_max, opt, query_times);
  return std::move(res.outputs);
}

}  // namespace rkpinn
