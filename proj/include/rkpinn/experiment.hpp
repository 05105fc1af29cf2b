#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "rkpinn/dynamics.hpp"
#include "rkpinn/pinn.hpp"
#include "rkpinn/solver.hpp"

namespace rkpinn {

/// Regular grid over the SMIB input domain.
struct GridSpec {
  double dt_step = 0.1;
  double p_step = 0.004;
  double delta0_step = std::numbers::pi / 50.0;
  InputDomain domain;

  void validate() const;
};

/// Cartesian product ordered dt (outer), P, delta0 (inner); omega0 fixed.
/// 101 x 51 x 51 = 262701 points for the default grid.
[[nodiscard]] CollocationSet build_grid(const GridSpec& spec);

/// Scales the model inputs so the domain box maps onto [-1, 1].
void normalize_to_domain(RkPinnModel& model, const InputDomain& domain);

/// Uniform sample without replacement, deterministic per seed. Indices in
/// `excluded` are never drawn. Throws std::invalid_argument if n exceeds
/// the number of eligible points.
[[nodiscard]] std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, std::uint64_t seed,
                                                      std::span<const std::size_t> excluded = {});

[[nodiscard]] CollocationSet sample_collocation(const CollocationSet& grid, std::size_t n, std::uint64_t seed,
                                                std::span<const std::size_t> excluded = {});

[[nodiscard]] CollocationSet subset(const CollocationSet& grid, std::span<const std::size_t> indices);

inline const std::vector<double> kDefaultPercentiles{100.0, 90.0, 50.0, 10.0};

/// Linear-interpolation percentiles with inclusive endpoints (k = 0 is the
/// minimum, k = 100 the maximum). Throws on empty input or k outside [0, 100].
[[nodiscard]] std::vector<double> percentiles(std::span<const double> values, std::span<const double> ks);

struct ErrorStats {
  std::vector<double> e_delta;  // squared rotor angle error per point
  std::vector<double> e_omega;  // squared speed error per point
  std::vector<double> ks;
  std::vector<double> table;    // percentiles of e_delta at ks
  std::vector<double> curve;    // percentiles of e_delta at k = 0, 1, ..., 100
  std::vector<std::size_t> included;  // test-set indices behind e_delta
  std::vector<std::size_t> excluded;  // points whose ground truth failed
};

/// Ground truth x(dt) for every test point; a point whose reference solve
/// fails gets an empty vector.
[[nodiscard]] std::vector<Vector> ground_truth(const OdeSystem& system, const CollocationSet& test_set,
                                               double tol = kReferenceTolerance);

[[nodiscard]] ErrorStats prediction_error(const RkPinnModel& model, const CollocationSet& test_set,
                                          const std::vector<Vector>& truth,
                                          std::span<const double> ks = kDefaultPercentiles);

[[nodiscard]] ErrorStats prediction_error(const RkPinnModel& model, const OdeSystem& system,
                                          const CollocationSet& test_set,
                                          std::span<const double> ks = kDefaultPercentiles);

/// Summary statistics from already-computed per-point errors.
[[nodiscard]] ErrorStats summarize_errors(std::vector<double> e_delta, std::vector<double> e_omega,
                                          std::span<const double> ks = kDefaultPercentiles);

struct EnsembleStats {
  std::vector<double> ks;
  std::vector<double> mean;  // across runs, per k
  std::vector<double> sd;    // sample standard deviation, per k
  std::vector<double> curve_mean;
  std::vector<double> curve_min;
  std::vector<double> curve_max;
  std::size_t runs = 0;
};

/// Mean and sample SD of each percentile across runs. Requires >= 2 runs.
[[nodiscard]] EnsembleStats ensemble_stats(std::span<const ErrorStats> runs, std::span<const double> ks);

/// "1.33±0.96" with the value scaled by 10^-exponent.
[[nodiscard]] std::string format_scaled(double mean, double sd, int exponent);

/// Default column exponents for k = 100, 90, 50, 10: x10^-1 ... x10^-4.
[[nodiscard]] int table_exponent(double k);

/// One formatted table row, e.g. "4 & 1.33±0.96 & ...", plus the footer.
[[nodiscard]] std::string format_percentile_table(const std::vector<std::string>& row_labels,
                                                  const std::vector<EnsembleStats>& rows);

struct TimingMethod {
  enum class Kind { pinn, irk, rk45 };
  Kind kind = Kind::pinn;
  std::string label;
  const RkPinnModel* model = nullptr;  // pinn only
  ButcherTableau tableau;             // irk only
};

struct TimingOptions {
  std::vector<double> dt_list{0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0};
  std::size_t repeats = 20;
  std::size_t warmup_calls = 100;
  double solver_tol = 1e-13;
  std::vector<CollocationPoint> points;  // evaluation states; defaults applied when empty
};

struct TimingRow {
  std::string method;
  double dt = 0.0;
  double seconds_per_point = 0.0;  // NaN when not converged
  bool converged = false;
};

/// Median wall time per point for each method and dt. Methods that fail to
/// converge on any timing point are reported with converged = false and
/// are not timed.
[[nodiscard]] std::vector<TimingRow> timing_benchmark(const OdeSystem& system, const std::vector<TimingMethod>& methods,
                                                      const TimingOptions& options);

[[nodiscard]] std::string timing_csv(const std::vector<TimingRow>& rows);

/// `dt,delta0,p,e_delta,e_omega` for the included points of a test set.
[[nodiscard]] std::string errors_csv(const CollocationSet& test_set, const ErrorStats& stats);

/// Model prediction from a single initial state at each query time, against
/// the reference solution.
struct TrajectoryComparison {
  std::vector<double> times;
  std::vector<Vector> truth;
  std::vector<Vector> prediction;
  std::vector<double> e_delta;
  double max_e_delta = 0.0;
};

[[nodiscard]] TrajectoryComparison trajectory_error(const RkPinnModel& model, const OdeSystem& system,
                                                    const Vector& x0, const Vector& u,
                                                    const std::vector<double>& times,
                                                    double tol = kReferenceTolerance);

/// `t,delta_true,omega_true,delta_pred,omega_pred,e_delta`.
[[nodiscard]] std::string trajectory_csv(const TrajectoryComparison& comparison);

struct RunMatrix {
  std::vector<std::size_t> stages{4};
  std::vector<std::size_t> collocation_points{1000};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

struct ExperimentConfig {
  SmibParams system;
  std::string scheme = "gauss-legendre";
  std::vector<std::size_t> hidden{50};
  bool input_normalization = false;  // map the input domain onto [-1, 1]
  TrainingConfig training;  // explicit loss weights must match every stage count
  double stage_weight = 1.0;  // uniform weights used when training.loss_weights is empty
  double dt_weight = 1.0;
  GridSpec grid;
  RunMatrix matrix;
  std::size_t test_points = 2000;
  std::uint64_t data_seed = 0;
  double reference_tol = kReferenceTolerance;
  std::vector<double> ks = kDefaultPercentiles;
  std::filesystem::path output_dir = "out";
  std::size_t jobs = 1;
  std::string config_hash;
};

struct RunResult {
  std::size_t stages = 0;
  std::size_t collocation_points = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  ErrorStats errors;
  TrainingReport report;
  std::filesystem::path model_file;
  std::filesystem::path errors_file;
  std::filesystem::path log_file;
  std::filesystem::path trajectory_file;
  double trajectory_max_e_delta = std::numeric_limits<double>::quiet_NaN();  // x0 = (0.44, omega0), P = 0.1
};

struct PercentileRow {
  std::size_t stages = 0;
  std::size_t collocation_points = 0;
  double k = 0.0;
  double mean = 0.0;
  double sd = 0.0;  // NaN with fewer than two successful runs
};

struct ExperimentSummary {
  std::vector<RunResult> runs;
  std::vector<PercentileRow> percentiles;
  std::filesystem::path percentiles_file;
};

/// Collocation sets of one (s, N, seed) run. The validation and test sets
/// depend only on data_seed, so every run is scored on the same points;
/// collocation points depend on the run seed and never overlap them.
struct DataSplit {
  CollocationSet collocation;
  CollocationSet validation;
  CollocationSet test;
};

[[nodiscard]] DataSplit split_data(const CollocationSet& grid, std::size_t collocation_points,
                                   std::size_t validation_points, std::size_t test_points, std::uint64_t data_seed,
                                   std::uint64_t run_seed);

/// Single (s, N, seed) run: sample, train, score. Never throws for
/// numerical failures; they are recorded in the result.
[[nodiscard]] RunResult run_single(const ExperimentConfig& config, std::size_t stages, std::size_t collocation_points,
                                   std::uint64_t seed, const CollocationSet& grid,
                                   const std::vector<Vector>* test_truth = nullptr);

/// Runs every (s, N, seed) combination and writes models/, errors_*.csv,
/// training_*.csv, percentiles.csv and percentile_curve.csv under
/// output_dir. Runs are independent; a failing run does not stop the rest.
[[nodiscard]] ExperimentSummary run_experiment(const ExperimentConfig& config);

}  // namespace rkpinn
