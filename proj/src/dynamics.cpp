#include "rkpinn/dynamics.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace rkpinn {

Vector OdeSystem::rhs(double t, const Vector& x, const Vector& u) const {
  Vector out(static_cast<Eigen::Index>(state_dim()));
  rhs(t, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
      std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
      std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

Matrix OdeSystem::jacobian(double t, const Vector& x, const Vector& u) const {
  const auto n = static_cast<Eigen::Index>(state_dim());
  RowMatrix out(n, n);
  jacobian(t, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
           std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
           std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

SmibParams default_params() { return SmibParams{}; }

void validate(const SmibParams& p) {
  auto fail = [](const char* field, const char* rule, double v) {
    throw std::invalid_argument(fmt::format("SMIB parameter {} = {} violates {}", field, v, rule));
  };
  if (!(p.m > 0.0)) fail("m", "m > 0", p.m);
  if (!(p.d >= 0.0)) fail("d", "d >= 0", p.d);
  if (!(p.b12 > 0.0)) fail("b12", "b12 > 0", p.b12);
  if (!(p.v1 > 0.0)) fail("v1", "v1 > 0", p.v1);
  if (!(p.v2 > 0.0)) fail("v2", "v2 > 0", p.v2);
}

SmibSystem::SmibSystem(SmibParams params) : params_(params) { validate(params_); }

void SmibSystem::rhs(double /*t*/, std::span<const double> x, std::span<const double> u,
                     std::span<double> dxdt) const {
  const double delta = x[kDelta];
  const double omega = x[kOmega];
  dxdt[kDelta] = omega;
  dxdt[kOmega] = (u[kPower] - params_.coupling() * std::sin(delta)) / params_.m - params_.d / params_.m * omega;
}

void SmibSystem::jacobian(double /*t*/, std::span<const double> x, std::span<const double> /*u*/,
                          std::span<double> jac) const {
  jac[0] = 0.0;
  jac[1] = 1.0;
  jac[2] = -params_.coupling() / params_.m * std::cos(x[kDelta]);
  jac[3] = -params_.d / params_.m;
}

double SmibSystem::energy(const Vector& x) const {
  return 0.5 * params_.m * x(kOmega) * x(kOmega) - params_.coupling() * std::cos(x(kDelta));
}

Vector SmibSystem::stable_equilibrium(double p) const {
  const double ratio = p / params_.coupling();
  if (std::abs(ratio) >= 1.0) {
    throw std::invalid_argument(fmt::format("no stable equilibrium for P = {} (coupling {})", p, params_.coupling()));
  }
  return Vector{{std::asin(ratio), 0.0}};
}

bool InputDomain::contains(double dt_value, double delta0_value, double omega0_value, double p_value) const {
  return dt.contains(dt_value) && delta0.contains(delta0_value) && p.contains(p_value) && omega0_value == omega0;
}

void validate(const InputDomain& domain) {
  auto check = [](const Interval& r, const char* name) {
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
      throw std::invalid_argument(fmt::format("domain range {} = [{}, {}] must satisfy lo <= hi", name, r.lo, r.hi));
    }
  };
  check(domain.dt, "dt");
  check(domain.p, "p");
  check(domain.delta0, "delta0");
  if (domain.dt.lo < 0.0) {
    throw std::invalid_argument("domain range dt must be non-negative");
  }
  if (!std::isfinite(domain.omega0)) {
    throw std::invalid_argument("domain omega0 must be finite");
  }
}

}  // namespace rkpinn
