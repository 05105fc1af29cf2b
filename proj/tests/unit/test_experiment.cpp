#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "rkpinn/experiment.hpp"
#include "rkpinn/io.hpp"

using namespace rkpinn;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "rkpinn_test_experiment" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

ErrorStats with_errors(std::vector<double> e) { return summarize_errors(e, std::vector<double>(e.size(), 0.0)); }

// Small grid keeps the end-to-end runs fast.
ExperimentConfig tiny_experiment(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.grid.dt_step = 0.5;
  c.grid.p_step = 0.05;
  c.grid.delta0_step = std::numbers::pi / 10.0;
  c.grid.domain.dt = {0.0, 2.0};
  c.hidden = {8};
  c.training.epochs = 30;
  c.training.log_every = 10;
  c.training.validation_points = 20;
  c.test_points = 30;
  c.matrix.stages = {2};
  c.matrix.collocation_points = {25};
  c.matrix.seeds = {1, 2};
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("default grid size and corners") {
  const GridSpec spec;
  const auto grid = build_grid(spec);
  CHECK(grid.size() == 262701);
  const auto& first = grid.points.front();
  CHECK(first.dt == 0.0);
  CHECK(first.x0(0) == -std::numbers::pi / 2.0);
  CHECK(first.x0(1) == 0.1);
  CHECK(first.u(0) == 0.0);
  const auto& last = grid.points.back();
  CHECK(last.dt == 10.0);
  CHECK(last.x0(0) == std::numbers::pi / 2.0);
  CHECK(last.u(0) == 0.2);
  // delta0 varies fastest, then P, then dt.
  CHECK(grid.points[1].x0(0) == doctest::Approx(-std::numbers::pi / 2.0 + std::numbers::pi / 50.0));
  CHECK(grid.points[51].u(0) == doctest::Approx(0.004));
  CHECK(grid.points[51 * 51].dt == doctest::Approx(0.1));
  for (const auto& p : grid.points) {
    REQUIRE(spec.domain.contains(p.dt, p.x0(0), p.x0(1), p.u(0)));
  }
}

TEST_CASE("grid validation") {
  GridSpec spec;
  spec.dt_step = 0.3;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.dt_step = -0.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("sampling without replacement") {
  const auto a = sample_indices(1000, 50, 7);
  const auto b = sample_indices(1000, 50, 7);
  const auto c = sample_indices(1000, 50, 8);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(std::set(a.begin(), a.end()).size() == 50);
  for (auto i : a) CHECK(i < 1000);

  auto full = sample_indices(100, 100, 3);
  auto sorted = full;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
  CHECK(full != sorted);

  CHECK_THROWS_AS((void)sample_indices(10, 11, 1), std::invalid_argument);
}

TEST_CASE("sampling honours exclusions") {
  std::vector<std::size_t> excluded;
  for (std::size_t i = 0; i < 90; ++i) excluded.push_back(i);
  const auto s = sample_indices(100, 10, 1, excluded);
  for (auto i : s) CHECK(i >= 90);
  CHECK_THROWS_AS((void)sample_indices(100, 11, 1, excluded), std::invalid_argument);
}

TEST_CASE("sampling is roughly uniform") {
  std::vector<int> hits(10, 0);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    for (auto i : sample_indices(10, 3, seed)) ++hits[i];
  }
  for (int h : hits) CHECK(std::abs(h - 600) < 100);
}

TEST_CASE("percentile definition") {
  const std::vector<double> four{4, 1, 3, 2};
  CHECK(percentiles(four, std::vector<double>{100})[0] == 4.0);
  CHECK(percentiles(four, std::vector<double>{0})[0] == 1.0);
  CHECK(percentiles(four, std::vector<double>{50})[0] == 2.5);
  CHECK(percentiles(std::vector<double>{5}, std::vector<double>{0, 37, 100}) == std::vector<double>{5, 5, 5});
  std::vector<double> ints(101);
  for (int i = 0; i <= 100; ++i) ints[i] = 100 - i;
  CHECK(percentiles(ints, std::vector<double>{50, 10, 90}) == std::vector<double>{50, 10, 90});
  CHECK_THROWS((void)percentiles(std::vector<double>{}, std::vector<double>{50}));
  CHECK_THROWS((void)percentiles(four, std::vector<double>{101}));
}

TEST_CASE("percentile curve is monotone") {
  std::vector<double> e;
  for (int i = 0; i < 357; ++i) e.push_back(std::fmod(i * 0.61803398875, 1.0) * std::exp(-i * 0.01));
  const auto stats = with_errors(e);
  REQUIRE(stats.curve.size() == 101);
  for (std::size_t k = 1; k < stats.curve.size(); ++k) CHECK(stats.curve[k] >= stats.curve[k - 1]);
  CHECK(stats.curve.front() == *std::min_element(e.begin(), e.end()));
  CHECK(stats.curve.back() == *std::max_element(e.begin(), e.end()));
  CHECK(stats.table.size() == 4);
}

TEST_CASE("ensemble statistics") {
  const auto one = with_errors({1, 1, 1});
  const auto three = with_errors({3, 3, 3});
  const std::vector<ErrorStats> runs{one, three};
  const auto es = ensemble_stats(runs, std::vector<double>{100, 50});
  CHECK(es.mean == std::vector<double>{2, 2});
  CHECK(es.sd[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  const std::vector<ErrorStats> same{one, one, one};
  CHECK(ensemble_stats(same, kDefaultPercentiles).sd == std::vector<double>(4, 0.0));
  CHECK_THROWS((void)ensemble_stats(std::vector<ErrorStats>{one}, kDefaultPercentiles));

  const std::vector<ErrorStats> mixed{with_errors({0.1, 0.5, 0.9}), with_errors({0.2, 0.3, 2.0}),
                                      with_errors({0.05, 0.6, 0.7})};
  const auto m = ensemble_stats(mixed, kDefaultPercentiles);
  for (std::size_t k = 0; k < m.curve_mean.size(); ++k) {
    CHECK(m.curve_mean[k] >= m.curve_min[k]);
    CHECK(m.curve_mean[k] <= m.curve_max[k]);
  }
}

TEST_CASE("table formatting") {
  CHECK(format_scaled(0.133, 0.096, 1) == "1.33±0.96");
  CHECK(format_scaled(6.29e-3, 1.5e-3, 3) == "6.29±1.50");
  CHECK(table_exponent(100) == 1);
  CHECK(table_exponent(90) == 2);
  CHECK(table_exponent(50) == 3);
  CHECK(table_exponent(10) == 4);
  const std::vector<ErrorStats> runs{with_errors({0.1, 0.2}), with_errors({0.3, 0.4})};
  const auto table = format_percentile_table({"4"}, {ensemble_stats(runs, kDefaultPercentiles)});
  CHECK(table.find("4 & ") != std::string::npos);
  CHECK(table.find("x10^-4") != std::string::npos);
}

TEST_CASE("prediction error at dt = 0 is exactly zero") {
  const SmibSystem sys;
  GridSpec spec;
  auto grid = build_grid(spec);
  CollocationSet zero;
  for (const auto& p : grid.points) {
    if (p.dt == 0.0) zero.points.push_back(p);
  }
  const auto model = RkPinnModel::create(gauss_legendre(4), 2, 1, TimeStepMode::variable(), {50}, 99);
  const auto stats = prediction_error(model, sys, zero);
  CHECK(stats.e_delta.size() == zero.size());
  for (double e : stats.e_delta) CHECK(e == 0.0);
  for (double e : stats.e_omega) CHECK(e == 0.0);
}

TEST_CASE("failed ground truth points are excluded") {
  const auto model = RkPinnModel::create(gauss_legendre(2), 2, 1, TimeStepMode::variable(), {5}, 1);
  CollocationSet set;
  set.points.push_back({1.0, Vector{{0.1, 0.1}}, Vector{{0.1}}});
  set.points.push_back({2.0, Vector{{0.2, 0.1}}, Vector{{0.1}}});
  const SmibSystem sys;
  auto truth = ground_truth(sys, set);
  truth[1] = Vector();
  const auto stats = prediction_error(model, set, truth);
  CHECK(stats.e_delta.size() == 1);
  CHECK(stats.included == std::vector<std::size_t>{0});
  CHECK(stats.excluded == std::vector<std::size_t>{1});
}

TEST_CASE("trajectory comparison") {
  const SmibSystem sys;
  const auto model = RkPinnModel::create(gauss_legendre(2), 2, 1, TimeStepMode::variable(), {5}, 1);
  const auto c = trajectory_error(model, sys, Vector{{0.44, 0.1}}, Vector{{0.1}}, {0.0, 1.0, 2.0});
  CHECK(c.e_delta.size() == 3);
  CHECK(c.e_delta[0] == 0.0);
  CHECK(c.max_e_delta == *std::max_element(c.e_delta.begin(), c.e_delta.end()));
  CHECK(trajectory_csv(c).rfind("t,delta_true,omega_true,delta_pred,omega_pred,e_delta\n", 0) == 0);
}

TEST_CASE("timing benchmark reports every method and dt") {
  const SmibSystem sys;
  const auto model = RkPinnModel::create(gauss_legendre(4), 2, 1, TimeStepMode::variable(), {50}, 1);
  std::vector<TimingMethod> methods{{TimingMethod::Kind::pinn, "pinn_s4", &model, {}},
                                    {TimingMethod::Kind::irk, "irk_s4", nullptr, gauss_legendre(4)},
                                    {TimingMethod::Kind::rk45, "rk45", nullptr, {}}};
  TimingOptions opt;
  opt.dt_list = {0.1, 1.0};
  opt.repeats = 10;
  opt.warmup_calls = 5;
  const auto rows = timing_benchmark(sys, methods, opt);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    CHECK(r.converged);
    CHECK(r.seconds_per_point > 0.0);
  }
  const auto csv = timing_csv(rows);
  CHECK(csv.rfind("method,dt,seconds_per_point,converged\n", 0) == 0);
  opt.repeats = 9;
  CHECK_THROWS((void)timing_benchmark(sys, methods, opt));
}

TEST_CASE("timing benchmark records non-converged methods without timing them") {
  const SmibSystem sys;
  std::vector<TimingMethod> methods{{TimingMethod::Kind::irk, "irk_s1", nullptr, gauss_legendre(1)}};
  TimingOptions opt;
  opt.dt_list = {10.0};
  opt.repeats = 10;
  opt.solver_tol = 1e-300;
  const auto rows = timing_benchmark(sys, methods, opt);
  REQUIRE(rows.size() == 1);
  CHECK_FALSE(rows[0].converged);
  CHECK(std::isnan(rows[0].seconds_per_point));
  CHECK(timing_csv(rows).find("irk_s1,10,nan,0") != std::string::npos);
}

TEST_CASE("data split keeps collocation, validation and test disjoint") {
  GridSpec spec;
  const auto grid = build_grid(spec);
  const auto a = split_data(grid, 200, 100, 150, 0, 1);
  const auto b = split_data(grid, 200, 100, 150, 0, 2);
  CHECK(a.collocation.size() == 200);
  CHECK(a.validation.size() == 100);
  CHECK(a.test.size() == 150);
  auto key = [](const CollocationPoint& p) { return std::tuple(p.dt, p.x0(0), p.u(0)); };
  std::set<std::tuple<double, double, double>> seen;
  for (const auto* set : {&a.collocation, &a.validation, &a.test}) {
    for (const auto& p : set->points) CHECK(seen.insert(key(p)).second);
  }
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(key(a.test.points[i]) == key(b.test.points[i]));
  CHECK(key(a.collocation.points[0]) != key(b.collocation.points[0]));
}

TEST_CASE("experiment writes per-run artifacts and a reproducible summary") {
  const auto out = scratch("two_seeds");
  const auto config = tiny_experiment(out);
  const auto summary = run_experiment(config);
  REQUIRE(summary.runs.size() == 2);
  for (const auto& r : summary.runs) {
    CHECK(r.ok);
    CHECK(std::filesystem::exists(r.model_file));
    CHECK(std::filesystem::exists(r.errors_file));
    CHECK(std::filesystem::exists(r.log_file));
  }
  CHECK(std::filesystem::exists(out / "models" / "model_2_25_1.json"));
  CHECK(std::filesystem::exists(out / "models" / "model_2_25_2.json"));
  CHECK(std::filesystem::exists(out / "errors_2_25_1.csv"));
  CHECK(std::filesystem::exists(out / "trajectory_2_25_1.csv"));
  CHECK(summary.percentiles.size() == 4);
  const auto pct = read_text_file(out / "percentiles.csv");
  CHECK(pct.rfind("s,N,k,mean,sd\n", 0) == 0);
  CHECK(read_text_file(out / "errors_2_25_1.csv").rfind("dt,delta0,p,e_delta,e_omega\n", 0) == 0);

  auto again = config;
  again.output_dir = scratch("two_seeds_again");
  again.jobs = 2;
  (void)run_experiment(again);
  CHECK(read_text_file(again.output_dir / "percentiles.csv") == pct);
  CHECK(read_text_file(again.output_dir / "training_2_25_2.csv") == read_text_file(out / "training_2_25_2.csv"));
}

TEST_CASE("a failing run does not stop the others") {
  auto config = tiny_experiment(scratch("failing"));
  config.matrix.stages = {2, 0};
  config.matrix.seeds = {1};
  const auto summary = run_experiment(config);
  REQUIRE(summary.runs.size() == 2);
  CHECK(summary.runs[0].ok);
  CHECK_FALSE(summary.runs[1].ok);
  CHECK_FALSE(summary.runs[1].error.empty());
  CHECK(std::isnan(summary.percentiles.front().sd));
}

TEST_CASE("domain normalization covers the SMIB inputs") {
  auto m = RkPinnModel::create(gauss_legendre(2), 2, 1, TimeStepMode::variable(), {4}, 1);
  const InputDomain domain;
  normalize_to_domain(m, domain);
  const Vector lo = m.network_input(Vector{{domain.dt.lo, domain.delta0.lo, domain.omega0, domain.p.lo}});
  const Vector hi = m.network_input(Vector{{domain.dt.hi, domain.delta0.hi, domain.omega0, domain.p.hi}});
  CHECK(lo == Vector{{-1.0, -1.0, 0.0, -1.0}});
  CHECK(hi == Vector{{1.0, 1.0, 0.0, 1.0}});
  auto f = RkPinnModel::create(gauss_legendre(2), 2, 1, TimeStepMode::fixed(1.0), {4}, 1);
  normalize_to_domain(f, domain);
  CHECK(f.input_scale.size() == 3);
}
