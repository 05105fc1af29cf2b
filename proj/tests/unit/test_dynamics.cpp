#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rkpinn/dynamics.hpp"

using namespace rkpinn;

TEST_CASE("default parameters") {
  const auto p = default_params();
  CHECK(p.m == 0.4);
  CHECK(p.d == 0.15);
  CHECK(p.b12 == 0.2);
  CHECK(p.v1 == 1.0);
  CHECK(p.v2 == 1.0);
  CHECK(p.coupling() == 0.2);
}

TEST_CASE("swing equation right-hand side") {
  const SmibSystem sys;
  const Vector x{{0.3, -0.2}};
  const Vector u{{0.1}};
  const Vector f = sys.rhs(0.0, x, u);
  CHECK(f(0) == -0.2);
  CHECK(f(1) == doctest::Approx((0.1 - 0.2 * std::sin(0.3) - 0.15 * -0.2) / 0.4).epsilon(1e-15));
}

TEST_CASE("right-hand side vanishes at the stable equilibrium") {
  const SmibSystem sys;
  for (double p : {0.0, 0.05, 0.1, 0.19}) {
    const Vector xe = sys.stable_equilibrium(p);
    const Vector f = sys.rhs(0.0, xe, Vector{{p}});
    CHECK(std::abs(f(0)) == 0.0);
    CHECK(std::abs(f(1)) < 1e-16);
  }
  CHECK_THROWS_AS((void)sys.stable_equilibrium(0.2), std::invalid_argument);
}

TEST_CASE("analytic Jacobian matches central differences") {
  const SmibSystem sys;
  const Vector u{{0.13}};
  for (const Vector& x : {Vector{{0.3, -0.2}}, Vector{{-1.4, 0.7}}, Vector{{1.5, 0.0}}}) {
    const Matrix j = sys.jacobian(0.0, x, u);
    const double h = 1e-6;
    for (int c = 0; c < 2; ++c) {
      Vector xp = x;
      Vector xm = x;
      xp(c) += h;
      xm(c) -= h;
      const Vector fd = (sys.rhs(0.0, xp, u) - sys.rhs(0.0, xm, u)) / (2 * h);
      for (int r = 0; r < 2; ++r) CHECK(std::abs(j(r, c) - fd(r)) < 1e-8);
    }
  }
}

TEST_CASE("energy is conserved along the undamped unforced flow") {
  SmibParams p;
  p.d = 0.0;
  const SmibSystem sys(p);
  const Vector x{{0.7, 0.3}};
  const Vector f = sys.rhs(0.0, x, Vector{{0.0}});
  const double h = 1e-6;
  const double de = (sys.energy(x + h * f) - sys.energy(x - h * f)) / (2 * h);
  CHECK(std::abs(de) < 1e-10);
}

TEST_CASE("parameter validation names the field") {
  SmibParams p;
  p.m = 0.0;
  CHECK_THROWS_WITH_AS(SmibSystem{p}, doctest::Contains("m"), std::invalid_argument);
  p = {};
  p.d = -1.0;
  CHECK_THROWS_AS(SmibSystem{p}, std::invalid_argument);
  p = {};
  p.b12 = 0.0;
  CHECK_THROWS_AS(SmibSystem{p}, std::invalid_argument);
}

TEST_CASE("input domain membership") {
  const InputDomain d;
  CHECK(d.contains(0.0, -std::numbers::pi / 2, 0.1, 0.0));
  CHECK(d.contains(10.0, std::numbers::pi / 2, 0.1, 0.2));
  CHECK_FALSE(d.contains(10.1, 0.0, 0.1, 0.1));
  CHECK_FALSE(d.contains(1.0, 0.0, 0.1, 0.3));
  CHECK_FALSE(d.contains(1.0, 2.0, 0.1, 0.1));
  CHECK_NOTHROW(validate(d));
  InputDomain bad;
  bad.dt = {2.0, 1.0};
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}
