#include "rkpinn/cli.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <json.hpp>

#include "rkpinn/checkpoint.hpp"
#include "rkpinn/config.hpp"
#include "rkpinn/dynamics.hpp"
#include "rkpinn/experiment.hpp"
#include "rkpinn/io.hpp"
#include "rkpinn/pinn.hpp"
#include "rkpinn/solver.hpp"
#include "rkpinn/tableau.hpp"

#ifndef RKPINN_VERSION
#define RKPINN_VERSION "0.0.0"
#endif

namespace rkpinn {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(fmt::format("{}: '{}' is not a number", flag, item));
    }
  }
  return v;
}

Vector parse_state(const std::string& text) {
  const auto v = parse_list(text, "--x0");
  if (v.size() != 2) throw UsageError("--x0 expects two values: delta,omega");
  return Vector{{v[0], v[1]}};
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> data_seed;
  ordered_json effective;  // effective config or command options
  std::vector<std::string> outputs;
};

void write_manifest(const fs::path& dir, const Manifest& m, Clock::time_point start) {
  ordered_json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["config_hash"] = m.config_hash;
  j["seeds"] = m.seeds;
  if (m.data_seed) j["data_seed"] = *m.data_seed;
  j["versions"] = {{"rkpinn", RKPINN_VERSION},
                   {"compiler", __VERSION__},
                   {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
                   {"fmt", FMT_VERSION},
                   {"checkpoint_format", kCheckpointFormatVersion}};
  j["wall_time_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  j["effective"] = m.effective;
  j["outputs"] = m.outputs;
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

fs::path dir_of(const fs::path& file) {
  const auto parent = file.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

std::string tableau_csv(const ButcherTableau& t) {
  const std::size_t s = t.stages;
  std::string out = "s,k,l,alpha\n";
  for (std::size_t k = 0; k < s; ++k) {
    for (std::size_t l = 0; l < s; ++l) {
      out += fmt::format("{},{},{},{}\n", s, k + 1, l + 1, format_double(t.alpha(k, l)));
    }
  }
  out += "s,k,beta\n";
  for (std::size_t k = 0; k < s; ++k) out += fmt::format("{},{},{}\n", s, k + 1, format_double(t.beta(k)));
  out += "s,k,gamma\n";
  for (std::size_t k = 0; k < s; ++k) out += fmt::format("{},{},{}\n", s, k + 1, format_double(t.gamma(k)));
  return out;
}

RunConfig load_config(const std::string& path) { return path.empty() ? default_config() : parse_config_file(path); }

struct Options {
  std::vector<std::string> argv;
  std::string config;

  std::string scheme = "gauss-legendre";
  std::size_t stages = 4;
  std::string out;

  std::string x0;
  double p = 0.0;
  double dt = 0.1;
  std::size_t steps = 100;

  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> train_stages;
  std::optional<std::size_t> collocation_points;

  std::string model;
  std::vector<std::string> models;
  std::optional<std::size_t> repeats;

  std::optional<std::size_t> jobs;
  std::string out_dir;
};

int cmd_tableau(const Options& o, std::ostream& out) {
  const auto start = Clock::now();
  const auto t = make_tableau(o.scheme, o.stages);
  const auto csv = tableau_csv(t);
  if (o.out.empty()) {
    out << csv;
    return kExitOk;
  }
  write_text_file(o.out, csv);
  ordered_json eff = {{"scheme", o.scheme}, {"stages", o.stages}};
  write_manifest(dir_of(o.out), {"tableau", o.argv, fnv1a_hex(eff.dump()), {}, {}, eff, {o.out}}, start);
  return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const auto config = load_config(o.config);
  const SmibSystem system(config.system);
  const Vector x0 = parse_state(o.x0);
  const Vector u{{o.p}};
  if (!(o.dt > 0.0) || o.steps < 1) throw UsageError("--dt must be > 0 and --steps >= 1");

  std::string csv = "t,delta,omega,converged,newton_iters\n";
  auto row = [&](double t, const Vector& x, bool ok, int iters) {
    csv += fmt::format("{},{},{},{},{}\n", format_double(t), format_double(x(kDelta)), format_double(x(kOmega)),
                       ok ? 1 : 0, iters);
  };
  bool failed = false;
  if (o.scheme == "rk45") {
    std::vector<double> times;
    for (std::size_t i = 1; i <= o.steps; ++i) times.push_back(static_cast<double>(i) * o.dt);
    Rk45Options opt;
    opt.rel_tol = kReferenceTolerance;
    opt.abs_tol = kReferenceTolerance;
    opt.record_steps = false;
    const auto res = rk45_solve(system, 0.0, x0, u, times.back(), opt, times);
    row(0.0, x0, true, 0);
    for (std::size_t i = 0; i < times.size(); ++i) row(times[i], res.outputs[i], true, 0);
  } else {
    const auto t = make_tableau(o.scheme, o.stages);
    const auto traj = irk_trajectory(system, t, 0.0, x0, u, o.dt, o.steps);
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
      row(traj.times[i], traj.states[i], true, i == 0 ? 0 : traj.newton_iterations[i - 1]);
    }
    if (traj.failed_step) {
      failed = true;
      err << fmt::format("error: Newton iteration did not converge at step {} (t = {})\n", *traj.failed_step + 1,
                         format_double(static_cast<double>(*traj.failed_step + 1) * o.dt));
    }
  }
  ordered_json eff = {{"system", {{"m", config.system.m}, {"d", config.system.d}, {"b12", config.system.b12},
                                  {"v1", config.system.v1}, {"v2", config.system.v2}}},
                      {"x0", {x0(0), x0(1)}},
                      {"p", o.p},
                      {"dt", o.dt},
                      {"steps", o.steps},
                      {"scheme", o.scheme},
                      {"stages", o.stages}};
  if (o.out.empty()) {
    out << csv;
  } else {
    write_text_file(o.out, csv);
    write_manifest(dir_of(o.out), {"simulate", o.argv, fnv1a_hex(eff.dump()), {}, {}, eff, {o.out}}, start);
  }
  return failed ? kExitFailure : kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  auto config = load_config(o.config);
  if (o.seed) config.seed = *o.seed;
  if (o.epochs) config.epochs = *o.epochs;
  if (o.train_stages) {
    config.stages = *o.train_stages;
    config.matrix.stages = {config.stages};
  }
  if (o.collocation_points) config.collocation_points = *o.collocation_points;
  validate(config);

  const SmibSystem system(config.system);
  const auto tableau = make_tableau(config.scheme, config.stages);
  const auto grid = build_grid(config.grid);
  const auto split = split_data(grid, config.collocation_points, config.validation_points, config.test_points,
                                config.data_seed, config.seed);
  auto model = RkPinnModel::create(tableau, system.state_dim(), system.input_dim(), time_step_mode(config),
                                   config.hidden_layers, config.seed);
  if (config.input_normalization) normalize_to_domain(model, config.grid.domain);
  const auto result = train(model, system, split.collocation, split.validation, training_config(config, config.stages));

  const fs::path model_path = o.out;
  const fs::path log_path = dir_of(model_path) / (model_path.stem().string() + "_training.csv");
  write_text_file(log_path, training_log_csv(result.report));
  const auto hash = config_hash(config);
  std::vector<std::string> outputs{log_path.string()};
  if (!result.report.diverged) {
    save_checkpoint(model_path, {result.model, config.grid.domain, hash});
    outputs.insert(outputs.begin(), model_path.string());
  }
  write_manifest(dir_of(model_path),
                 {"train", o.argv, hash, {config.seed}, config.data_seed, ordered_json::parse(config_to_json(config)),
                  outputs},
                 start);
  if (result.report.diverged) {
    err << "error: training diverged: " << result.report.message << "\n";
    return kExitFailure;
  }
  out << fmt::format("epochs {} best_epoch {} best_validation_loss {} early_stop {}\n", result.report.epochs_run,
                     result.report.best_epoch, format_double(result.report.best_validation_loss),
                     result.report.stopped_early ? "yes" : "no");
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const auto ckpt = load_checkpoint(o.model);
  const Vector x0 = parse_state(o.x0);
  const Vector u{{o.p}};
  if (!ckpt.domain.contains(o.dt, x0(kDelta), x0(kOmega), o.p)) {
    err << "warning: input lies outside the training domain\n";
  }
  const Vector x1 = evaluate(ckpt.model, o.dt, x0, u);
  const std::string line = fmt::format("{},{},{}\n", format_double(o.dt), format_double(x1(kDelta)),
                                       format_double(x1(kOmega)));
  out << line;
  if (!o.out.empty()) {
    write_text_file(o.out, "dt,delta,omega\n" + line);
    ordered_json eff = {{"model", o.model}, {"dt", o.dt}, {"x0", {x0(0), x0(1)}}, {"p", o.p}};
    write_manifest(dir_of(o.out), {"evaluate", o.argv, ckpt.config_hash, {}, {}, eff, {o.out}}, start);
  }
  return kExitOk;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const auto start = Clock::now();
  const auto config = load_config(o.config);
  const SmibSystem system(config.system);

  std::vector<RkPinnModel> models;
  std::vector<std::uint64_t> seeds;
  for (const auto& path : o.models) models.push_back(load_checkpoint(path).model);
  if (models.empty()) {
    // Evaluation cost does not depend on the weight values.
    for (std::size_t s : {std::size_t{4}, std::size_t{32}}) {
      models.push_back(RkPinnModel::create(make_tableau(config.scheme, s), system.state_dim(), system.input_dim(),
                                           TimeStepMode::variable(), config.hidden_layers, config.seed));
    }
    seeds.push_back(config.seed);
  }
  std::vector<TimingMethod> methods;
  for (const auto& m : models) {
    if (!m.mode.is_variable()) throw UsageError("bench needs variable time step models");
    methods.push_back({TimingMethod::Kind::pinn, fmt::format("pinn_s{}", m.stages()), &m, {}});
  }
  for (auto s : config.timing.irk_stages) {
    methods.push_back({TimingMethod::Kind::irk, fmt::format("irk_s{}", s), nullptr, gauss_legendre(s)});
  }
  methods.push_back({TimingMethod::Kind::rk45, "rk45", nullptr, {}});

  TimingOptions opt;
  opt.dt_list = config.timing.dt_list;
  opt.repeats = o.repeats.value_or(config.timing.repeats);
  opt.warmup_calls = config.timing.warmup_calls;
  opt.solver_tol = config.timing.solver_tol;
  const auto rows = timing_benchmark(system, methods, opt);

  const fs::path out_path = o.out.empty() ? config.output_dir / "timing.csv" : fs::path(o.out);
  write_text_file(out_path, timing_csv(rows));
  auto eff = ordered_json::parse(config_to_json(config));
  eff["models"] = o.models;
  eff["repeats"] = opt.repeats;
  write_manifest(dir_of(out_path), {"bench", o.argv, config_hash(config), seeds, {}, eff, {out_path.string()}}, start);
  for (const auto& r : rows) {
    out << fmt::format("{:<10} dt={:<5g} {}\n", r.method, r.dt,
                       r.converged ? fmt::format("{:.3e} s/point", r.seconds_per_point) : std::string("not converged"));
  }
  return kExitOk;
}

int cmd_experiment(const Options& o, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  auto config = load_config(o.config);
  if (o.jobs) config.jobs = *o.jobs;
  if (!o.out_dir.empty()) config.output_dir = o.out_dir;
  validate(config);

  const auto summary = run_experiment(experiment_config(config));
  write_text_file(config.output_dir / "config.json", config_to_json(config));
  std::vector<std::string> outputs{"config.json", "percentiles.csv", "percentile_curve.csv", "runs.csv"};
  std::size_t failures = 0;
  for (const auto& r : summary.runs) {
    if (!r.ok) {
      ++failures;
      err << fmt::format("error: run s={} N={} seed={} failed: {}\n", r.stages, r.collocation_points, r.seed, r.error);
    }
    for (const auto& f : {r.model_file, r.errors_file, r.log_file}) {
      if (!f.empty()) outputs.push_back(fs::relative(f, config.output_dir).generic_string());
    }
  }
  write_manifest(config.output_dir,
                 {"experiment", o.argv, config_hash(config), config.matrix.seeds, config.data_seed,
                  ordered_json::parse(config_to_json(config)), outputs},
                 start);
  for (const auto& row : summary.percentiles) {
    out << fmt::format("s={} N={} k={:g} mean={:.3e} sd={:.3e}\n", row.stages, row.collocation_points, row.k, row.mean,
                       row.sd);
  }
  return failures == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  for (int i = 0; i < argc; ++i) o.argv.emplace_back(argv[i]);

  CLI::App app{"Runge-Kutta physics-informed neural networks for the SMIB swing equation", "rkpinn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", RKPINN_VERSION);

  auto* tab = app.add_subcommand("tableau", "Write a Butcher tableau as CSV");
  tab->add_option("--scheme", o.scheme, "gauss-legendre or a classical scheme name")->capture_default_str();
  tab->add_option("--stages", o.stages, "Number of stages (Gauss-Legendre)")->capture_default_str();
  tab->add_option("--out", o.out, "Output CSV (stdout when omitted)");

  auto* sim = app.add_subcommand("simulate", "Integrate the SMIB system with a fixed-step IRK scheme or rk45");
  sim->add_option("--config", o.config, "Config file for the system parameters");
  sim->add_option("--x0", o.x0, "Initial state delta,omega")->required();
  sim->add_option("--p", o.p, "Mechanical power P")->capture_default_str();
  sim->add_option("--dt", o.dt, "Step (output interval for rk45)")->capture_default_str();
  sim->add_option("--steps", o.steps, "Number of steps")->capture_default_str();
  sim->add_option("--scheme", o.scheme, "Tableau name or rk45")->capture_default_str();
  sim->add_option("--stages", o.stages, "Number of stages (Gauss-Legendre)")->capture_default_str();
  sim->add_option("--out", o.out, "Output CSV (stdout when omitted)");

  auto* trn = app.add_subcommand("train", "Train one model");
  trn->add_option("--config", o.config, "Config file (defaults when omitted)");
  trn->add_option("--out", o.out, "Model checkpoint path")->required();
  trn->add_option("--seed", o.seed, "Override seed");
  trn->add_option("--epochs", o.epochs, "Override training.epochs");
  trn->add_option("--stages", o.train_stages, "Override stages");
  trn->add_option("--collocation-points", o.collocation_points, "Override collocation_points");

  auto* ev = app.add_subcommand("evaluate", "Predict x(dt) with a trained model");
  ev->add_option("--model", o.model, "Model checkpoint")->required();
  ev->add_option("--dt", o.dt, "Time step")->required();
  ev->add_option("--x0", o.x0, "Initial state delta,omega")->required();
  ev->add_option("--p", o.p, "Mechanical power P")->required();
  ev->add_option("--out", o.out, "Also write the prediction as CSV");

  auto* bn = app.add_subcommand("bench", "Time PINN, IRK and rk45 evaluation per point");
  bn->add_option("--config", o.config, "Config file (timing section)");
  bn->add_option("--model", o.models, "Model checkpoint(s); untrained s=4 and s=32 models when omitted");
  bn->add_option("--repeats", o.repeats, "Override timing.repeats");
  bn->add_option("--out", o.out, "Timing CSV (default <output_dir>/timing.csv)");

  auto* ex = app.add_subcommand("experiment", "Run the (s, N, seed) experiment matrix");
  ex->add_option("--config", o.config, "Config file (defaults when omitted)");
  ex->add_option("--jobs", o.jobs, "Parallel runs");
  ex->add_option("--out-dir", o.out_dir, "Override output_dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e, out, err);
    if (std::string(e.what()).find("--help") == std::string::npos) {
      err << app.help();
    }
    return kExitUsage;
  }

  try {
    if (*tab) return cmd_tableau(o, out);
    if (*sim) return cmd_simulate(o, out, err);
    if (*trn) return cmd_train(o, out, err);
    if (*ev) return cmd_evaluate(o, out, err);
    if (*bn) return cmd_bench(o, out);
    if (*ex) return cmd_experiment(o, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace rkpinn
