#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rkpinn/dynamics.hpp"
#include "rkpinn/tableau.hpp"
#include "rkpinn/types.hpp"

namespace rkpinn {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StageGuess { zero, rhs_at_x0 };

struct IrkStepConfig {
  double newton_tol = 1e-13;
  int max_newton_iters = 50;
  StageGuess initial_stage_guess = StageGuess::rhs_at_x0;
};

enum class StepStatus { converged, max_iterations, singular_jacobian, non_finite };

[[nodiscard]] const char* to_string(StepStatus status);

struct StepOutcome {
  Vector next_state;
  RowMatrix stages;  // s x n, row k is h^k
  bool converged = false;
  int newton_iterations = 0;
  double final_residual = 0.0;  // max-norm of h - f(stage points)
  StepStatus status = StepStatus::max_iterations;
};

/// Max-norm of the stage equations h^k - f(t0 + gamma_k dt, x0 + dt sum_l alpha_kl h^l; u).
[[nodiscard]] double stage_equation_residual(const OdeSystem& system, const ButcherTableau& tableau, double t0,
                                             const Vector& x0, const Vector& u, double dt, const RowMatrix& stages);

/// One step of an arbitrary (implicit or explicit) RK scheme, with the
/// s*n stage system solved by full Newton iteration. On failure the best
/// iterate is returned with converged = false.
[[nodiscard]] StepOutcome irk_step(const OdeSystem& system, const ButcherTableau& tableau, double t0, const Vector& x0,
                                   const Vector& u, double dt, const IrkStepConfig& cfg = {});

struct IrkTrajectory {
  std::vector<double> times;           // times[0] = t0
  std::vector<Vector> states;          // states[0] = x0
  std::vector<int> newton_iterations;  // per step, aligned with states[1..]
  std::optional<std::size_t> failed_step;  // 0-based index of the first non-converged step
};

/// Repeated irk_step; stops at the first step that fails to converge and
/// returns the converged prefix.
[[nodiscard]] IrkTrajectory irk_trajectory(const OdeSystem& system, const ButcherTableau& tableau, double t0,
                                           const Vector& x0, const Vector& u, double dt, std::size_t n_steps,
                                           const IrkStepConfig& cfg = {});

struct Rk45Options {
  double rel_tol = 1e-6;
  double abs_tol = 1e-9;
  double initial_step = 0.0;  // 0 selects automatically
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 5.0;
  double pi_beta = 0.04;
  std::size_t max_steps = 10'000'000;
  bool record_steps = true;
};

struct Rk45Result {
  std::vector<double> times;   // accepted step end points, times[0] = t0
  std::vector<Vector> states;
  std::vector<Vector> outputs;  // states at the requested output times, in request order
  Vector endpoint;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t rhs_evaluations = 0;
};

/// Adaptive Dormand-Prince 5(4) integration from t0 to t_end. Steps are
/// shortened to land exactly on every entry of `output_times` (which must lie
/// in [t0, t_end]). Throws SolverError on step-size underflow.
[[nodiscard]] Rk45Result rk45_solve(const OdeSystem& system, double t0, const Vector& x0, const Vector& u, double t_end,
                                    const Rk45Options& options, std::span<const double> output_times = {});

[[nodiscard]] Rk45Result rk45_solve(const OdeSystem& system, double t0, const Vector& x0, const Vector& u, double t_end,
                                    double rel_tol, double abs_tol);

inline constexpr double kReferenceTolerance = 1e-12;

/// High-accuracy states at each query time (measured from t = 0). Query time
/// zero returns x0 exactly. Deterministic for identical inputs.
[[nodiscard]] std::vector<Vector> reference_solution(const OdeSystem& system, const Vector& x0, const Vector& u,
                                                     std::span<const double> query_times,
                                                     double tol = kReferenceTolerance);

}  // namespace rkpinn
