#include "rkpinn/tableau.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace rkpinn {

namespace {

struct LegendreValue {
  double p;   // P_s(x)
  double dp;  // P_s'(x)
};

LegendreValue legendre(std::size_t s, double x) {
  double p_prev = 1.0;
  double p = x;
  for (std::size_t k = 2; k <= s; ++k) {
    const double kk = static_cast<double>(k);
    const double p_next = ((2.0 * kk - 1.0) * x * p - (kk - 1.0) * p_prev) / kk;
    p_prev = p;
    p = p_next;
  }
  const double ss = static_cast<double>(s);
  const double dp = ss * (x * p - p_prev) / (x * x - 1.0);
  return {p, dp};
}

struct Quadrature {
  Vector nodes;    // ascending, on [0, 1]
  Vector weights;  // sum to one
};

// Roots of the shifted Legendre polynomial and the matching quadrature
// weights. Only the upper half is iterated; the lower half is mirrored so the
// nodes are symmetric about 1/2 by construction.
Quadrature shifted_gauss_nodes(std::size_t s) {
  constexpr double kTol = 1e-14;
  constexpr int kMaxIter = 100;
  Quadrature q{Vector(s), Vector(s)};
  if (s == 1) {
    q.nodes(0) = 0.5;
    q.weights(0) = 1.0;
    return q;
  }
  const std::size_t half = (s + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    // Chebyshev-like initial guess; i = 0 is the largest root.
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(s) + 0.5));
    bool converged = false;
    double last_step = 0.0;
    if (s % 2 == 1 && i == half - 1) {
      x = 0.0;
      converged = true;
    }
    for (int it = 0; it < kMaxIter && !converged; ++it) {
      const auto v = legendre(s, x);
      last_step = v.p / v.dp;
      x -= last_step;
      if (std::abs(last_step) < kTol) {
        converged = true;
      }
    }
    if (!converged) {
      throw TableauError(fmt::format("Legendre root {} of degree {} did not converge (last Newton step {:.3e})",
                                     i, s, last_step));
    }
    const auto v = legendre(s, x);
    const double w = 1.0 / ((1.0 - x * x) * v.dp * v.dp);  // half of the [-1, 1] weight
    const std::size_t hi = s - 1 - i;
    const std::size_t lo = i;
    q.nodes(hi) = 0.5 * (1.0 + x);
    q.nodes(lo) = 0.5 * (1.0 - x);
    q.weights(hi) = w;
    q.weights(lo) = w;
  }
  if (s % 2 == 1) {
    q.nodes(s / 2) = 0.5;
  }
  if (!q.nodes.allFinite() || !q.weights.allFinite()) {
    throw TableauError(fmt::format("Gauss-Legendre nodes for s = {} are not finite", s));
  }
  return q;
}

// Barycentric weights for Lagrange interpolation on `nodes`, scaled to a
// maximum magnitude of one.
Vector barycentric_weights(const Vector& nodes) {
  const auto s = nodes.size();
  Vector w = Vector::Ones(s);
  for (Eigen::Index j = 0; j < s; ++j) {
    for (Eigen::Index i = 0; i < s; ++i) {
      if (i != j) {
        w(j) /= (nodes(j) - nodes(i));
      }
    }
  }
  return w / w.cwiseAbs().maxCoeff();
}

// Values of all Lagrange basis polynomials at x.
void lagrange_basis(const Vector& nodes, const Vector& bary, double x, Vector& out) {
  const auto s = nodes.size();
  for (Eigen::Index j = 0; j < s; ++j) {
    if (x == nodes(j)) {
      out.setZero();
      out(j) = 1.0;
      return;
    }
  }
  double denom = 0.0;
  for (Eigen::Index j = 0; j < s; ++j) {
    out(j) = bary(j) / (x - nodes(j));
    denom += out(j);
  }
  out /= denom;
}

}  // namespace

bool ButcherTableau::is_implicit() const {
  for (Eigen::Index k = 0; k < alpha.rows(); ++k) {
    for (Eigen::Index l = k; l < alpha.cols(); ++l) {
      if (alpha(k, l) != 0.0) {
        return true;
      }
    }
  }
  return false;
}

ButcherTableau gauss_legendre(std::size_t stages) {
  if (stages < 1 || stages > kMaxGaussStages) {
    throw TableauError(fmt::format("stage count {} outside [1, {}]", stages, kMaxGaussStages));
  }
  const auto quad = shifted_gauss_nodes(stages);
  const auto s = static_cast<Eigen::Index>(stages);

  ButcherTableau t;
  t.stages = stages;
  t.gamma = quad.nodes;
  t.beta = quad.weights;
  t.alpha = Matrix::Zero(s, s);
  t.scheme_name = fmt::format("gauss-legendre-{}", stages);

  // alpha_kl = integral_0^gamma_k L_l(tau) dtau, evaluated exactly with the
  // same s-point rule mapped onto [0, gamma_k].
  const Vector bary = barycentric_weights(quad.nodes);
  Vector basis(s);
  for (Eigen::Index k = 0; k < s; ++k) {
    const double upper = quad.nodes(k);
    for (Eigen::Index m = 0; m < s; ++m) {
      lagrange_basis(quad.nodes, bary, upper * quad.nodes(m), basis);
      t.alpha.row(k) += (upper * quad.weights(m)) * basis.transpose();
    }
  }
  return t;
}

ButcherTableau classical(ClassicalScheme scheme) {
  ButcherTableau t;
  switch (scheme) {
    case ClassicalScheme::forward_euler:
      t.stages = 1;
      t.alpha = Matrix::Zero(1, 1);
      t.beta = Vector::Ones(1);
      t.gamma = Vector::Zero(1);
      t.scheme_name = "forward-euler";
      break;
    case ClassicalScheme::backward_euler:
      t.stages = 1;
      t.alpha = Matrix::Ones(1, 1);
      t.beta = Vector::Ones(1);
      t.gamma = Vector::Ones(1);
      t.scheme_name = "backward-euler";
      break;
    case ClassicalScheme::trapezoidal:
      t.stages = 2;
      t.alpha = Matrix{{0.0, 0.0}, {0.5, 0.5}};
      t.beta = Vector{{0.5, 0.5}};
      t.gamma = Vector{{0.0, 1.0}};
      t.scheme_name = "trapezoidal";
      break;
    case ClassicalScheme::rk4_classic:
      t.stages = 4;
      t.alpha = Matrix::Zero(4, 4);
      t.alpha(1, 0) = 0.5;
      t.alpha(2, 1) = 0.5;
      t.alpha(3, 2) = 1.0;
      t.beta = Vector{{1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0}};
      t.gamma = Vector{{0.0, 0.5, 0.5, 1.0}};
      t.scheme_name = "rk4";
      break;
  }
  return t;
}

ClassicalScheme parse_classical_scheme(std::string_view name) {
  std::string key(name);
  std::replace(key.begin(), key.end(), '_', '-');
  if (key == "forward-euler") return ClassicalScheme::forward_euler;
  if (key == "backward-euler") return ClassicalScheme::backward_euler;
  if (key == "trapezoidal") return ClassicalScheme::trapezoidal;
  if (key == "rk4" || key == "rk4-classic") return ClassicalScheme::rk4_classic;
  throw TableauError(fmt::format("unknown scheme '{}'", name));
}

ButcherTableau make_tableau(std::string_view scheme, std::size_t stages) {
  std::string key(scheme);
  std::replace(key.begin(), key.end(), '_', '-');
  if (key == "gauss-legendre" || key == "gauss") {
    return gauss_legendre(stages);
  }
  return classical(parse_classical_scheme(key));
}

std::vector<OrderResidual> verify_order_conditions(const ButcherTableau& tableau, int max_order) {
  const auto s = static_cast<int>(tableau.stages);
  if (max_order < 1 || max_order > 2 * s) {
    throw TableauError(fmt::format("max_order {} outside [1, 2s = {}]", max_order, 2 * s));
  }
  std::vector<OrderResidual> report;
  report.reserve(static_cast<std::size_t>(max_order));
  for (int q = 1; q <= max_order; ++q) {
    OrderResidual r;
    r.order = q;
    double b_sum = 0.0;
    for (int k = 0; k < s; ++k) {
      b_sum += tableau.beta(k) * std::pow(tableau.gamma(k), q - 1);
    }
    r.b_residual = std::abs(b_sum - 1.0 / q);
    if (q <= s) {
      r.c_checked = true;
      for (int k = 0; k < s; ++k) {
        double c_sum = 0.0;
        for (int l = 0; l < s; ++l) {
          c_sum += tableau.alpha(k, l) * std::pow(tableau.gamma(l), q - 1);
        }
        r.c_residual = std::max(r.c_residual, std::abs(c_sum - std::pow(tableau.gamma(k), q) / q));
      }
    }
    report.push_back(r);
  }
  return report;
}

void validate(const ButcherTableau& t) {
  const auto s = static_cast<Eigen::Index>(t.stages);
  if (s < 1) {
    throw TableauError("tableau has no stages");
  }
  if (t.alpha.rows() != s || t.alpha.cols() != s || t.beta.size() != s || t.gamma.size() != s) {
    throw TableauError(fmt::format("tableau '{}' has inconsistent shapes for s = {}", t.scheme_name, s));
  }
  if (!t.alpha.allFinite() || !t.beta.allFinite() || !t.gamma.allFinite()) {
    throw TableauError(fmt::format("tableau '{}' has non-finite coefficients", t.scheme_name));
  }
  if (std::abs(t.beta.sum() - 1.0) > 1e-12) {
    throw TableauError(fmt::format("tableau '{}': beta sums to {:.17g}, not 1", t.scheme_name, t.beta.sum()));
  }
  for (Eigen::Index k = 0; k < s; ++k) {
    if (t.gamma(k) < 0.0 || t.gamma(k) > 1.0 || (k > 0 && t.gamma(k) < t.gamma(k - 1))) {
      throw TableauError(fmt::format("tableau '{}': gamma must be non-decreasing in [0, 1]", t.scheme_name));
    }
  }
}

}  // namespace rkpinn
