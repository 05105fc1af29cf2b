#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rkpinn/types.hpp"

namespace rkpinn {

/// Coefficients (alpha, beta, gamma) of an s-stage Runge-Kutta scheme.
///
/// Stage k solves h_k = f(t0 + gamma_k dt, x0 + dt * sum_l alpha_kl h_l) and
/// the update is x1 = x0 + dt * sum_k beta_k h_k.
struct ButcherTableau {
  std::size_t stages = 0;
  Matrix alpha;
  Vector beta;
  Vector gamma;
  std::string scheme_name;

  /// True iff alpha is not strictly lower triangular.
  [[nodiscard]] bool is_implicit() const;
};

class TableauError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ClassicalScheme { forward_euler, backward_euler, trapezoidal, rk4_classic };

inline constexpr std::size_t kMaxGaussStages = 64;

/// Gauss-Legendre collocation scheme with s stages (order 2s).
/// Throws TableauError for s outside [1, 64] or if the Legendre root
/// iteration fails to converge.
[[nodiscard]] ButcherTableau gauss_legendre(std::size_t stages);

[[nodiscard]] ButcherTableau classical(ClassicalScheme scheme);

/// Parses "forward-euler", "backward_euler", "rk4", ... Throws on unknown names.
[[nodiscard]] ClassicalScheme parse_classical_scheme(std::string_view name);

/// Builds either a Gauss-Legendre tableau ("gauss-legendre") or one of the
/// classical schemes by name. `stages` is ignored for classical schemes.
[[nodiscard]] ButcherTableau make_tableau(std::string_view scheme, std::size_t stages);

struct OrderResidual {
  int order = 0;
  double b_residual = 0.0;  // |sum_k beta_k gamma_k^(q-1) - 1/q|
  double c_residual = 0.0;  // max_k |sum_l alpha_kl gamma_l^(q-1) - gamma_k^q / q|, q <= s only
  bool c_checked = false;

  [[nodiscard]] double max_residual() const { return b_residual > c_residual ? b_residual : c_residual; }
};

/// Residuals of the simplifying order conditions B(q) for q = 1..max_order and
/// C(q) for q = 1..min(max_order, stages). Throws if max_order > 2 * stages.
[[nodiscard]] std::vector<OrderResidual> verify_order_conditions(const ButcherTableau& tableau, int max_order);

/// Structural validation: shapes, finite entries, beta summing to one and
/// gamma in [0, 1] non-decreasing. Throws TableauError naming the violation.
void validate(const ButcherTableau& tableau);

}  // namespace rkpinn
