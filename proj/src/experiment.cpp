#include "rkpinn/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "rkpinn/checkpoint.hpp"
#include "rkpinn/io.hpp"

namespace rkpinn {

namespace {

// Unbiased draw from [0, bound) using only the engine's raw output.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) {
      return r % bound;
    }
  }
}

std::size_t axis_count(double lo, double hi, double step, const char* name) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw std::invalid_argument(fmt::format("grid step for {} must be positive", name));
  }
  const double intervals = (hi - lo) / step;
  const double rounded = std::round(intervals);
  if (std::abs(intervals - rounded) > 1e-9 * std::max(1.0, rounded)) {
    throw std::invalid_argument(
        fmt::format("grid step {} does not divide the {} range [{}, {}]", step, name, lo, hi));
  }
  return static_cast<std::size_t>(rounded) + 1;
}

std::vector<double> axis(double lo, double hi, double step, const char* name) {
  const std::size_t count = axis_count(lo, hi, step, name);
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    v[i] = lo + static_cast<double>(i) * step;
  }
  v.back() = hi;
  return v;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> dense_ks() {
  std::vector<double> ks(101);
  for (std::size_t i = 0; i <= 100; ++i) ks[i] = static_cast<double>(i);
  return ks;
}

std::string run_tag(std::size_t s, std::size_t n, std::uint64_t seed) { return fmt::format("{}_{}_{}", s, n, seed); }

}  // namespace

void GridSpec::validate() const {
  rkpinn::validate(domain);
  (void)axis_count(domain.dt.lo, domain.dt.hi, dt_step, "dt");
  (void)axis_count(domain.p.lo, domain.p.hi, p_step, "p");
  (void)axis_count(domain.delta0.lo, domain.delta0.hi, delta0_step, "delta0");
}

void normalize_to_domain(RkPinnModel& model, const InputDomain& domain) {
  if (model.state_dim != 2 || model.control_dim != 1) {
    throw ShapeError("domain normalization expects the SMIB inputs [delta0, omega0, P]");
  }
  const Vector lo{{domain.delta0.lo, domain.omega0, domain.p.lo}};
  const Vector hi{{domain.delta0.hi, domain.omega0, domain.p.hi}};
  if (model.mode.is_variable()) {
    model.normalize_inputs(Vector{{domain.dt.lo, lo(0), lo(1), lo(2)}}, Vector{{domain.dt.hi, hi(0), hi(1), hi(2)}});
  } else {
    model.normalize_inputs(lo, hi);
  }
}

CollocationSet build_grid(const GridSpec& spec) {
  spec.validate();
  const auto dts = axis(spec.domain.dt.lo, spec.domain.dt.hi, spec.dt_step, "dt");
  const auto ps = axis(spec.domain.p.lo, spec.domain.p.hi, spec.p_step, "p");
  const auto deltas = axis(spec.domain.delta0.lo, spec.domain.delta0.hi, spec.delta0_step, "delta0");
  CollocationSet grid;
  grid.points.reserve(dts.size() * ps.size() * deltas.size());
  for (double dt : dts) {
    for (double p : ps) {
      for (double delta0 : deltas) {
        grid.points.push_back({dt, Vector{{delta0, spec.domain.omega0}}, Vector{{p}}});
      }
    }
  }
  return grid;
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, std::uint64_t seed,
                                        std::span<const std::size_t> excluded) {
  std::vector<char> blocked(population, 0);
  for (auto i : excluded) {
    if (i < population) blocked[i] = 1;
  }
  std::vector<std::size_t> pool;
  pool.reserve(population);
  for (std::size_t i = 0; i < population; ++i) {
    if (!blocked[i]) pool.push_back(i);
  }
  if (n > pool.size()) {
    throw std::invalid_argument(fmt::format("cannot sample {} points from {} eligible", n, pool.size()));
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(bounded(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

CollocationSet subset(const CollocationSet& grid, std::span<const std::size_t> indices) {
  CollocationSet out;
  out.points.reserve(indices.size());
  for (auto i : indices) {
    out.points.push_back(grid.points.at(i));
  }
  return out;
}

CollocationSet sample_collocation(const CollocationSet& grid, std::size_t n, std::uint64_t seed,
                                  std::span<const std::size_t> excluded) {
  const auto idx = sample_indices(grid.size(), n, seed, excluded);
  return subset(grid, idx);
}

std::vector<double> percentiles(std::span<const double> values, std::span<const double> ks) {
  if (values.empty()) {
    throw std::invalid_argument("percentiles of an empty set");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double last = static_cast<double>(sorted.size() - 1);
  std::vector<double> out;
  out.reserve(ks.size());
  for (double k : ks) {
    if (!(k >= 0.0 && k <= 100.0)) {
      throw std::invalid_argument(fmt::format("percentile {} outside [0, 100]", k));
    }
    const double pos = k / 100.0 * last;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    out.push_back(frac == 0.0 ? sorted[lo] : sorted[lo] + frac * (sorted[hi] - sorted[lo]));
  }
  return out;
}

std::vector<Vector> ground_truth(const OdeSystem& system, const CollocationSet& test_set, double tol) {
  std::vector<Vector> truth;
  truth.reserve(test_set.size());
  for (const auto& p : test_set.points) {
    try {
      const double q[] = {p.dt};
      truth.push_back(reference_solution(system, p.x0, p.u, q, tol).front());
    } catch (const SolverError&) {
      truth.emplace_back();
    }
  }
  return truth;
}

ErrorStats summarize_errors(std::vector<double> e_delta, std::vector<double> e_omega, std::span<const double> ks) {
  ErrorStats stats;
  stats.e_delta = std::move(e_delta);
  stats.e_omega = std::move(e_omega);
  stats.ks.assign(ks.begin(), ks.end());
  if (!stats.e_delta.empty()) {
    stats.table = percentiles(stats.e_delta, ks);
    stats.curve = percentiles(stats.e_delta, dense_ks());
  }
  return stats;
}

ErrorStats prediction_error(const RkPinnModel& model, const CollocationSet& test_set, const std::vector<Vector>& truth,
                            std::span<const double> ks) {
  if (truth.size() != test_set.size()) {
    throw std::invalid_argument("ground truth does not match the test set");
  }
  std::vector<double> e_delta;
  std::vector<double> e_omega;
  std::vector<std::size_t> included;
  std::vector<std::size_t> excluded;
  for (std::size_t j = 0; j < test_set.size(); ++j) {
    if (truth[j].size() == 0) {
      excluded.push_back(j);
      continue;
    }
    const auto& p = test_set.points[j];
    const Vector pred = evaluate(model, p.dt, p.x0, p.u);
    const double dd = truth[j](kDelta) - pred(kDelta);
    const double dw = truth[j](kOmega) - pred(kOmega);
    e_delta.push_back(dd * dd);
    e_omega.push_back(dw * dw);
    included.push_back(j);
  }
  auto stats = summarize_errors(std::move(e_delta), std::move(e_omega), ks);
  stats.included = std::move(included);
  stats.excluded = std::move(excluded);
  return stats;
}

ErrorStats prediction_error(const RkPinnModel& model, const OdeSystem& system, const CollocationSet& test_set,
                            std::span<const double> ks) {
  return prediction_error(model, test_set, ground_truth(system, test_set), ks);
}

EnsembleStats ensemble_stats(std::span<const ErrorStats> runs, std::span<const double> ks) {
  if (runs.size() < 2) {
    throw std::invalid_argument("ensemble statistics need at least two runs");
  }
  EnsembleStats es;
  es.runs = runs.size();
  es.ks.assign(ks.begin(), ks.end());
  const double n = static_cast<double>(runs.size());
  std::vector<std::vector<double>> per_run;
  for (const auto& r : runs) {
    per_run.push_back(percentiles(r.e_delta, ks));
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    double sum = 0.0;
    for (const auto& v : per_run) sum += v[i];
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& v : per_run) sq += (v[i] - mean) * (v[i] - mean);
    es.mean.push_back(mean);
    es.sd.push_back(std::sqrt(sq / (n - 1.0)));
  }
  const auto dk = dense_ks();
  std::vector<std::vector<double>> curves;
  for (const auto& r : runs) {
    curves.push_back(percentiles(r.e_delta, dk));
  }
  for (std::size_t i = 0; i < dk.size(); ++i) {
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& c : curves) {
      sum += c[i];
      lo = std::min(lo, c[i]);
      hi = std::max(hi, c[i]);
    }
    es.curve_mean.push_back(sum / n);
    es.curve_min.push_back(lo);
    es.curve_max.push_back(hi);
  }
  return es;
}

std::string format_scaled(double mean, double sd, int exponent) {
  const double scale = std::pow(10.0, exponent);
  return fmt::format("{:.2f}±{:.2f}", mean * scale, sd * scale);
}

int table_exponent(double k) {
  if (k >= 100.0) return 1;
  if (k >= 90.0) return 2;
  if (k >= 50.0) return 3;
  return 4;
}

std::string format_percentile_table(const std::vector<std::string>& row_labels, const std::vector<EnsembleStats>& rows) {
  if (row_labels.size() != rows.size() || rows.empty()) {
    throw std::invalid_argument("table needs one label per row");
  }
  std::string out = "k";
  for (double k : rows.front().ks) out += fmt::format(" & {:g}", k);
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += row_labels[r];
    for (std::size_t i = 0; i < rows[r].ks.size(); ++i) {
      out += " & " + format_scaled(rows[r].mean[i], rows[r].sd[i], table_exponent(rows[r].ks[i]));
    }
    out += "\n";
  }
  out += "scale";
  for (double k : rows.front().ks) out += fmt::format(" & x10^-{}", table_exponent(k));
  out += "\n";
  return out;
}

std::vector<TimingRow> timing_benchmark(const OdeSystem& system, const std::vector<TimingMethod>& methods,
                                        const TimingOptions& options) {
  if (options.repeats < 10) {
    throw std::invalid_argument("timing benchmark needs at least 10 repeats");
  }
  std::vector<CollocationPoint> points = options.points;
  if (points.empty()) {
    for (double delta0 : {-1.2, -0.6, 0.0, 0.44, 1.0}) {
      for (double p : {0.05, 0.1, 0.15}) {
        points.push_back({0.0, Vector{{delta0, 0.1}}, Vector{{p}}});
      }
    }
  }
  IrkStepConfig irk_cfg;
  irk_cfg.newton_tol = options.solver_tol;

  std::vector<TimingRow> rows;
  volatile double sink = 0.0;
  using clock = std::chrono::steady_clock;

  for (const auto& method : methods) {
    if (method.kind == TimingMethod::Kind::pinn && method.model == nullptr) {
      throw std::invalid_argument(fmt::format("timing method '{}' has no model", method.label));
    }
    for (double dt : options.dt_list) {
      // Returns false if the method cannot produce a converged result.
      auto call = [&](const CollocationPoint& p) -> bool {
        switch (method.kind) {
          case TimingMethod::Kind::pinn: {
            const Vector x = evaluate(*method.model, dt, p.x0, p.u);
            sink = sink + x(0);
            return true;
          }
          case TimingMethod::Kind::irk: {
            const auto out = irk_step(system, method.tableau, 0.0, p.x0, p.u, dt, irk_cfg);
            sink = sink + out.next_state(0);
            return out.converged;
          }
          case TimingMethod::Kind::rk45: {
            Rk45Options opt;
            opt.rel_tol = options.solver_tol;
            opt.abs_tol = options.solver_tol;
            opt.record_steps = false;
            const auto out = rk45_solve(system, 0.0, p.x0, p.u, dt, opt);
            sink = sink + out.endpoint(0);
            return true;
          }
        }
        return false;
      };

      TimingRow row{method.label, dt, std::numeric_limits<double>::quiet_NaN(), true};
      try {
        for (const auto& p : points) {
          if (!call(p)) {
            row.converged = false;
            break;
          }
        }
      } catch (const SolverError&) {
        row.converged = false;
      }
      if (!row.converged) {
        rows.push_back(row);
        continue;
      }
      const auto warm_start = clock::now();
      for (std::size_t i = 0; i < options.warmup_calls; ++i) {
        (void)call(points[i % points.size()]);
      }
      const double per_call =
          std::chrono::duration<double>(clock::now() - warm_start).count() / static_cast<double>(options.warmup_calls);
      // Sweep the point set enough times that one repeat lasts about 2 ms.
      const auto sweeps = static_cast<std::size_t>(
          std::max(1.0, std::ceil(2e-3 / (std::max(per_call, 1e-9) * static_cast<double>(points.size())))));
      std::vector<double> samples;
      samples.reserve(options.repeats);
      for (std::size_t r = 0; r < options.repeats; ++r) {
        const auto start = clock::now();
        for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
          for (const auto& p : points) {
            (void)call(p);
          }
        }
        const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
        samples.push_back(elapsed / static_cast<double>(sweeps * points.size()));
      }
      row.seconds_per_point = median(std::move(samples));
      rows.push_back(row);
    }
  }
  return rows;
}

std::string timing_csv(const std::vector<TimingRow>& rows) {
  std::string out = "method,dt,seconds_per_point,converged\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{}\n", r.method, format_double(r.dt),
                       r.converged ? format_double(r.seconds_per_point) : std::string("nan"), r.converged ? 1 : 0);
  }
  return out;
}

std::string errors_csv(const CollocationSet& test_set, const ErrorStats& stats) {
  std::string out = "dt,delta0,p,e_delta,e_omega\n";
  for (std::size_t i = 0; i < stats.included.size(); ++i) {
    const auto& p = test_set.points.at(stats.included[i]);
    out += fmt::format("{},{},{},{},{}\n", format_double(p.dt), format_double(p.x0(kDelta)),
                       format_double(p.u(kPower)), format_double(stats.e_delta[i]), format_double(stats.e_omega[i]));
  }
  return out;
}

TrajectoryComparison trajectory_error(const RkPinnModel& model, const OdeSystem& system, const Vector& x0,
                                      const Vector& u, const std::vector<double>& times, double tol) {
  TrajectoryComparison c;
  c.times = times;
  c.truth = reference_solution(system, x0, u, times, tol);
  for (std::size_t i = 0; i < times.size(); ++i) {
    c.prediction.push_back(evaluate(model, times[i], x0, u));
    const double e = c.truth[i](kDelta) - c.prediction[i](kDelta);
    c.e_delta.push_back(e * e);
    c.max_e_delta = std::max(c.max_e_delta, e * e);
  }
  return c;
}

std::string trajectory_csv(const TrajectoryComparison& c) {
  std::string out = "t,delta_true,omega_true,delta_pred,omega_pred,e_delta\n";
  for (std::size_t i = 0; i < c.times.size(); ++i) {
    out += fmt::format("{},{},{},{},{},{}\n", format_double(c.times[i]), format_double(c.truth[i](kDelta)),
                       format_double(c.truth[i](kOmega)), format_double(c.prediction[i](kDelta)),
                       format_double(c.prediction[i](kOmega)), format_double(c.e_delta[i]));
  }
  return out;
}

DataSplit split_data(const CollocationSet& grid, std::size_t collocation_points, std::size_t validation_points,
                     std::size_t test_points, std::uint64_t data_seed, std::uint64_t run_seed) {
  const auto held_out = sample_indices(grid.size(), validation_points + test_points, data_seed);
  DataSplit split;
  split.test = subset(grid, std::span(held_out).first(test_points));
  split.validation = subset(grid, std::span(held_out).subspan(test_points));
  // Distinct stream from the weight initialization, which also uses run_seed.
  split.collocation = sample_collocation(grid, collocation_points, run_seed ^ 0x9e3779b97f4a7c15ULL, held_out);
  return split;
}

RunResult run_single(const ExperimentConfig& config, std::size_t stages, std::size_t collocation_points,
                     std::uint64_t seed, const CollocationSet& grid, const std::vector<Vector>* test_truth) {
  RunResult result;
  result.stages = stages;
  result.collocation_points = collocation_points;
  result.seed = seed;
  const std::string tag = run_tag(stages, collocation_points, seed);
  try {
    const SmibSystem system(config.system);
    const auto tableau = make_tableau(config.scheme, stages);
    auto split = split_data(grid, collocation_points, config.training.validation_points, config.test_points,
                            config.data_seed, seed);
    auto model =
        RkPinnModel::create(tableau, system.state_dim(), system.input_dim(), TimeStepMode::variable(), config.hidden, seed);
    if (config.input_normalization) normalize_to_domain(model, config.grid.domain);
    TrainingConfig tcfg = config.training;
    tcfg.seed = seed;
    if (!tcfg.loss_weights) {
      tcfg.loss_weights = LossWeights::uniform(stages, system.state_dim(), config.stage_weight, config.dt_weight);
    }
    auto trained = train(model, system, split.collocation, split.validation, tcfg);
    result.report = trained.report;

    if (!config.output_dir.empty()) {
      result.log_file = config.output_dir / fmt::format("training_{}.csv", tag);
      write_text_file(result.log_file, training_log_csv(trained.report));
    }
    if (trained.report.diverged) {
      result.error = trained.report.message;
      return result;
    }
    std::vector<Vector> local_truth;
    if (test_truth == nullptr) {
      local_truth = ground_truth(system, split.test, config.reference_tol);
      test_truth = &local_truth;
    }
    result.errors = prediction_error(trained.model, split.test, *test_truth, config.ks);
    if (result.errors.e_delta.empty()) {
      result.error = "no test point had a valid reference solution";
      return result;
    }
    if (!config.output_dir.empty()) {
      result.model_file = config.output_dir / "models" / fmt::format("model_{}.json", tag);
      save_checkpoint(result.model_file, {trained.model, config.grid.domain, config.config_hash});
      result.errors_file = config.output_dir / fmt::format("errors_{}.csv", tag);
      write_text_file(result.errors_file, errors_csv(split.test, result.errors));
      std::vector<double> times;
      const auto& span = config.grid.domain.dt;
      for (int i = 0; i <= 100; ++i) times.push_back(span.lo + (span.hi - span.lo) * i / 100.0);
      const auto traj = trajectory_error(trained.model, system, Vector{{0.44, config.grid.domain.omega0}},
                                         Vector{{0.1}}, times, config.reference_tol);
      result.trajectory_file = config.output_dir / fmt::format("trajectory_{}.csv", tag);
      write_text_file(result.trajectory_file, trajectory_csv(traj));
      result.trajectory_max_e_delta = traj.max_e_delta;
    }
    result.ok = true;
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
  }
  return result;
}

ExperimentSummary run_experiment(const ExperimentConfig& config) {
  config.training.validate();
  const auto grid = build_grid(config.grid);
  const SmibSystem system(config.system);

  // Validation and test sets are shared by all runs; solve their ground
  // truth once.
  const auto held_out =
      sample_indices(grid.size(), config.training.validation_points + config.test_points, config.data_seed);
  const auto test_set = subset(grid, std::span(held_out).first(config.test_points));
  const auto truth = ground_truth(system, test_set, config.reference_tol);

  struct Job {
    std::size_t s;
    std::size_t n;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto s : config.matrix.stages) {
    for (auto n : config.matrix.collocation_points) {
      for (auto seed : config.matrix.seeds) {
        jobs.push_back({s, n, seed});
      }
    }
  }

  ExperimentSummary summary;
  summary.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      summary.runs[i] = run_single(config, jobs[i].s, jobs[i].n, jobs[i].seed, grid, &truth);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(config.jobs, 1, std::max<std::size_t>(1, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  // Group successful runs by (s, N) in configuration order.
  std::string pct = "s,N,k,mean,sd\n";
  std::string curve = "s,N,k,mean,min,max\n";
  std::vector<std::string> labels;
  std::vector<EnsembleStats> table_rows;
  for (auto s : config.matrix.stages) {
    for (auto n : config.matrix.collocation_points) {
      std::vector<ErrorStats> group;
      for (const auto& r : summary.runs) {
        if (r.ok && r.stages == s && r.collocation_points == n) group.push_back(r.errors);
      }
      if (group.empty()) continue;
      if (group.size() >= 2) {
        const auto es = ensemble_stats(group, config.ks);
        for (std::size_t i = 0; i < es.ks.size(); ++i) {
          summary.percentiles.push_back({s, n, es.ks[i], es.mean[i], es.sd[i]});
        }
        for (std::size_t i = 0; i < es.curve_mean.size(); ++i) {
          curve += fmt::format("{},{},{},{},{},{}\n", s, n, i, format_double(es.curve_mean[i]),
                               format_double(es.curve_min[i]), format_double(es.curve_max[i]));
        }
        labels.push_back(fmt::format("s={} N={}", s, n));
        table_rows.push_back(es);
      } else {
        const auto& only = group.front();
        for (std::size_t i = 0; i < only.ks.size(); ++i) {
          summary.percentiles.push_back({s, n, only.ks[i], only.table[i], std::numeric_limits<double>::quiet_NaN()});
        }
        for (std::size_t i = 0; i < only.curve.size(); ++i) {
          const auto v = format_double(only.curve[i]);
          curve += fmt::format("{},{},{},{},{},{}\n", s, n, i, v, v, v);
        }
      }
    }
  }
  for (const auto& row : summary.percentiles) {
    pct += fmt::format("{},{},{},{},{}\n", row.stages, row.collocation_points, format_double(row.k),
                       format_double(row.mean), std::isnan(row.sd) ? std::string("nan") : format_double(row.sd));
  }
  if (!config.output_dir.empty()) {
    summary.percentiles_file = config.output_dir / "percentiles.csv";
    write_text_file(summary.percentiles_file, pct);
    write_text_file(config.output_dir / "percentile_curve.csv", curve);
    if (!table_rows.empty()) {
      write_text_file(config.output_dir / "table.txt", format_percentile_table(labels, table_rows));
    }
    std::string runs = "s,N,seed,ok,best_epoch,epochs_run,stopped_early,best_val_loss,error\n";
    for (const auto& r : summary.runs) {
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      runs += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.stages, r.collocation_points, r.seed, r.ok ? 1 : 0,
                          r.report.best_epoch, r.report.epochs_run, r.report.stopped_early ? 1 : 0,
                          format_double(r.report.best_validation_loss), err);
    }
    write_text_file(config.output_dir / "runs.csv", runs);
  }
  return summary;
}

}  // namespace rkpinn
