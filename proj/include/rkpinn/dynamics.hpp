#pragma once

#include <cstddef>
#include <numbers>
#include <span>

#include "rkpinn/types.hpp"

namespace rkpinn {

/// Parameterized ODE dx/dt = f(t, x; u) with an analytic state Jacobian.
///
/// Implementations must be stateless (const member functions only) so one
/// instance can be shared across threads.
class OdeSystem {
 public:
  virtual ~OdeSystem() = default;

  [[nodiscard]] virtual std::size_t state_dim() const = 0;
  [[nodiscard]] virtual std::size_t input_dim() const = 0;

  virtual void rhs(double t, std::span<const double> x, std::span<const double> u, std::span<double> dxdt) const = 0;

  /// Row-major n x n matrix d f / d x.
  virtual void jacobian(double t, std::span<const double> x, std::span<const double> u,
                        std::span<double> jac) const = 0;

  [[nodiscard]] Vector rhs(double t, const Vector& x, const Vector& u) const;
  [[nodiscard]] Matrix jacobian(double t, const Vector& x, const Vector& u) const;
};

struct SmibParams {
  double m = 0.4;     // inertia constant, pu s^2
  double d = 0.15;    // damping, pu s
  double b12 = 0.2;   // line susceptance, pu
  double v1 = 1.0;    // pu
  double v2 = 1.0;    // pu

  [[nodiscard]] double coupling() const { return v1 * v2 * b12; }
};

[[nodiscard]] SmibParams default_params();

/// Throws std::invalid_argument unless m > 0, d >= 0, b12 > 0, v1, v2 > 0.
void validate(const SmibParams& params);

/// State indices of the swing equation.
inline constexpr std::size_t kDelta = 0;
inline constexpr std::size_t kOmega = 1;
/// Input index of the active power production.
inline constexpr std::size_t kPower = 0;

/// Single-machine infinite-bus swing equation:
///   d delta / dt = omega
///   d omega / dt = (P - V1 V2 B12 sin delta) / m - (d / m) omega
class SmibSystem final : public OdeSystem {
 public:
  SmibSystem() : SmibSystem(default_params()) {}
  explicit SmibSystem(SmibParams params);

  [[nodiscard]] std::size_t state_dim() const override { return 2; }
  [[nodiscard]] std::size_t input_dim() const override { return 1; }

  using OdeSystem::jacobian;
  using OdeSystem::rhs;
  void rhs(double t, std::span<const double> x, std::span<const double> u, std::span<double> dxdt) const override;
  void jacobian(double t, std::span<const double> x, std::span<const double> u,
                std::span<double> jac) const override;

  [[nodiscard]] const SmibParams& params() const { return params_; }

  /// E = m omega^2 / 2 - V1 V2 B12 cos delta; conserved when d = 0 and P = 0.
  [[nodiscard]] double energy(const Vector& x) const;

  /// Stable equilibrium (asin(P / V1 V2 B12), 0). Requires |P| < V1 V2 B12.
  [[nodiscard]] Vector stable_equilibrium(double p) const;

 private:
  SmibParams params_;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  [[nodiscard]] bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Training/test input domain of the SMIB case.
struct InputDomain {
  Interval dt{0.0, 10.0};
  Interval p{0.0, 0.2};
  Interval delta0{-std::numbers::pi / 2.0, std::numbers::pi / 2.0};
  double omega0 = 0.1;

  [[nodiscard]] bool contains(double dt_value, double delta0_value, double omega0_value, double p_value) const;
};

void validate(const InputDomain& domain);

}  // namespace rkpinn
