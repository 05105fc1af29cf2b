#include "rkpinn/config.hpp"

#include <cmath>
#include <cstdlib>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "rkpinn/io.hpp"
#include "rkpinn/tableau.hpp"

namespace rkpinn {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& field, const std::string& message) {
  throw ConfigError(field, fmt::format("{}: {}", field, message));
}

// A JSON object being consumed; keys never looked up are rejected.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::optional<Section> child(const std::string& key) {
    if (const auto* v = find(key)) return Section(*v, field(key));
    return std::nullopt;
  }

  void read(const std::string& key, double& out) {
    if (const auto* v = find(key)) out = as_double(*v, field(key));
  }

  void read(const std::string& key, std::size_t& out) {
    if (const auto* v = find(key)) out = as_count(*v, field(key));
  }

  void read_seed(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) out = as_count(*v, field(key));
  }

  void read(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) fail(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) fail(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  template <typename T, typename Convert>
  bool read_list(const std::string& key, std::vector<T>& out, Convert convert) {
    const auto* v = find(key);
    if (v == nullptr) return false;
    if (!v->is_array()) fail(field(key), "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(static_cast<T>(convert((*v)[i], fmt::format("{}[{}]", field(key), i))));
    }
    return true;
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!used_.contains(key)) fail(field(key), "unknown config key");
    }
  }

  static double as_double(const json& v, const std::string& where) {
    if (!v.is_number()) fail(where, "expected a number");
    return v.get<double>();
  }

  static std::uint64_t as_count(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) fail(where, "must be >= 0");
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d >= 0.0 && d == std::floor(d) && d < 9.0e15) return static_cast<std::uint64_t>(d);
    }
    fail(where, "expected a non-negative integer");
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

void read_interval(Section& s, const std::string& key, Interval& out) {
  std::vector<double> v;
  if (!s.read_list(key, v, Section::as_double)) return;
  if (v.size() != 2) fail(s.field(key), "expected [lo, hi]");
  out = {v[0], v[1]};
}

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) fail(field, rule);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

ordered_json to_ordered(const RunConfig& c) {
  ordered_json j;
  j["system"] = {{"m", c.system.m}, {"d", c.system.d}, {"b12", c.system.b12}, {"v1", c.system.v1}, {"v2", c.system.v2}};
  j["scheme"] = c.scheme;
  j["stages"] = c.stages;
  j["hidden_layers"] = c.hidden_layers;
  j["mode"] = c.fixed_dt ? "fixed" : "variable";
  if (c.fixed_dt) j["fixed_dt"] = *c.fixed_dt;
  j["input_normalization"] = c.input_normalization;

  ordered_json t;
  t["epochs"] = c.epochs;
  t["validation_points"] = c.validation_points;
  t["patience"] = c.patience;
  t["log_every"] = c.log_every;
  if (c.loss_weights.stage_matrix.empty()) {
    t["lambda_stage"] = c.loss_weights.stage;
  } else {
    t["lambda_stage"] = c.loss_weights.stage_matrix;
  }
  if (c.loss_weights.dt_vector.empty()) {
    t["lambda_dt"] = c.loss_weights.dt;
  } else {
    t["lambda_dt"] = c.loss_weights.dt_vector;
  }
  t["learning_rate"] = {{"initial", c.learning_rate.initial},
                        {"decay", c.learning_rate.decay},
                        {"decay_every", c.learning_rate.decay_every}};
  j["training"] = t;

  j["seed"] = c.seed;
  j["collocation_points"] = c.collocation_points;

  const auto& d = c.grid.domain;
  j["grid"] = {{"dt_step", c.grid.dt_step},
               {"p_step", c.grid.p_step},
               {"delta0_step", c.grid.delta0_step},
               {"domain",
                {{"dt", {d.dt.lo, d.dt.hi}},
                 {"p", {d.p.lo, d.p.hi}},
                 {"delta0", {d.delta0.lo, d.delta0.hi}},
                 {"omega0", d.omega0}}}};
  j["experiment"] = {{"stages", c.matrix.stages},
                     {"collocation_points", c.matrix.collocation_points},
                     {"seeds", c.matrix.seeds},
                     {"test_points", c.test_points},
                     {"data_seed", c.data_seed},
                     {"reference_tol", c.reference_tol}};
  j["timing"] = {{"dt_list", c.timing.dt_list},
                 {"repeats", c.timing.repeats},
                 {"warmup_calls", c.timing.warmup_calls},
                 {"irk_stages", c.timing.irk_stages},
                 {"solver_tol", c.timing.solver_tol}};
  j["output_dir"] = c.output_dir.generic_string();
  j["jobs"] = c.jobs;
  return j;
}

void read_loss_weights(Section& t, LossWeightSpec& w) {
  if (const auto* v = t.find("lambda_stage")) {
    const auto where = t.field("lambda_stage");
    if (v->is_number()) {
      w.stage = Section::as_double(*v, where);
      w.stage_matrix.clear();
    } else if (v->is_array()) {
      w.stage_matrix.clear();
      for (std::size_t k = 0; k < v->size(); ++k) {
        const auto& row = (*v)[k];
        if (!row.is_array()) fail(where, "expected a number or an s x n array");
        std::vector<double> r;
        for (std::size_t i = 0; i < row.size(); ++i) {
          r.push_back(Section::as_double(row[i], fmt::format("{}[{}][{}]", where, k, i)));
        }
        w.stage_matrix.push_back(std::move(r));
      }
    } else {
      fail(where, "expected a number or an s x n array");
    }
  }
  if (const auto* v = t.find("lambda_dt")) {
    const auto where = t.field("lambda_dt");
    if (v->is_number()) {
      w.dt = Section::as_double(*v, where);
      w.dt_vector.clear();
    } else if (v->is_array()) {
      w.dt_vector.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        w.dt_vector.push_back(Section::as_double((*v)[i], fmt::format("{}[{}]", where, i)));
      }
    } else {
      fail(where, "expected a number or an array of length n");
    }
  }
}

RunConfig from_json(const json& root) {
  RunConfig c = default_config();
  Section top(root, "");

  if (auto s = top.child("system")) {
    s->read("m", c.system.m);
    s->read("d", c.system.d);
    s->read("b12", c.system.b12);
    s->read("v1", c.system.v1);
    s->read("v2", c.system.v2);
    s->finish();
  }
  top.read("scheme", c.scheme);
  top.read("stages", c.stages);
  top.read_list("hidden_layers", c.hidden_layers, Section::as_count);

  top.read("input_normalization", c.input_normalization);

  std::string mode = "variable";
  top.read("mode", mode);
  double fixed_dt = std::nan("");
  const bool has_fixed_dt = top.find("fixed_dt") != nullptr;
  top.read("fixed_dt", fixed_dt);
  if (mode == "fixed") {
    require(has_fixed_dt, "fixed_dt", "required when mode is \"fixed\"");
    c.fixed_dt = fixed_dt;
  } else if (mode == "variable") {
    require(!has_fixed_dt, "fixed_dt", "only allowed when mode is \"fixed\"");
  } else {
    fail("mode", "expected \"variable\" or \"fixed\"");
  }

  if (auto t = top.child("training")) {
    t->read("epochs", c.epochs);
    t->read("validation_points", c.validation_points);
    t->read("patience", c.patience);
    t->read("log_every", c.log_every);
    read_loss_weights(*t, c.loss_weights);
    if (auto lr = t->child("learning_rate")) {
      lr->read("initial", c.learning_rate.initial);
      lr->read("decay", c.learning_rate.decay);
      lr->read("decay_every", c.learning_rate.decay_every);
      lr->finish();
    }
    t->finish();
  }

  top.read_seed("seed", c.seed);
  top.read("collocation_points", c.collocation_points);

  if (auto g = top.child("grid")) {
    g->read("dt_step", c.grid.dt_step);
    g->read("p_step", c.grid.p_step);
    g->read("delta0_step", c.grid.delta0_step);
    if (auto d = g->child("domain")) {
      read_interval(*d, "dt", c.grid.domain.dt);
      read_interval(*d, "p", c.grid.domain.p);
      read_interval(*d, "delta0", c.grid.domain.delta0);
      d->read("omega0", c.grid.domain.omega0);
      d->finish();
    }
    g->finish();
  }

  // The run matrix follows the single-run fields unless given explicitly.
  c.matrix.stages = {c.stages};
  c.matrix.collocation_points = {c.collocation_points};
  if (auto e = top.child("experiment")) {
    e->read_list("stages", c.matrix.stages, Section::as_count);
    e->read_list("collocation_points", c.matrix.collocation_points, Section::as_count);
    e->read_list("seeds", c.matrix.seeds, Section::as_count);
    e->read("test_points", c.test_points);
    e->read_seed("data_seed", c.data_seed);
    e->read("reference_tol", c.reference_tol);
    e->finish();
  }

  if (auto t = top.child("timing")) {
    t->read_list("dt_list", c.timing.dt_list, Section::as_double);
    t->read("repeats", c.timing.repeats);
    t->read("warmup_calls", c.timing.warmup_calls);
    t->read_list("irk_stages", c.timing.irk_stages, Section::as_count);
    t->read("solver_tol", c.timing.solver_tol);
    t->finish();
  }

  std::string out_dir = c.output_dir.string();
  top.read("output_dir", out_dir);
  c.output_dir = out_dir;
  top.read("jobs", c.jobs);
  top.finish();

  validate(c);
  return c;
}

}  // namespace

LossWeights LossWeightSpec::build(std::size_t stages, std::size_t state_dim) const {
  LossWeights w = LossWeights::uniform(stages, state_dim, stage, dt);
  if (!stage_matrix.empty()) {
    if (stage_matrix.size() != stages) {
      throw ConfigError("training.lambda_stage",
                        fmt::format("training.lambda_stage: has {} rows, the scheme has {} stages", stage_matrix.size(),
                                    stages));
    }
    for (std::size_t k = 0; k < stages; ++k) {
      if (stage_matrix[k].size() != state_dim) {
        throw ConfigError("training.lambda_stage",
                          fmt::format("training.lambda_stage: row {} needs {} entries", k, state_dim));
      }
      for (std::size_t i = 0; i < state_dim; ++i) w.stage(k, i) = stage_matrix[k][i];
    }
  }
  if (!dt_vector.empty()) {
    if (dt_vector.size() != state_dim) {
      throw ConfigError("training.lambda_dt", fmt::format("training.lambda_dt: needs {} entries", state_dim));
    }
    for (std::size_t i = 0; i < state_dim; ++i) w.dt(i) = dt_vector[i];
  }
  return w;
}

std::filesystem::path default_output_dir() {
  const char* env = std::getenv("RKPINN_OUT_DIR");
  return env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::path("out");
}

RunConfig default_config() {
  RunConfig c;
  c.output_dir = default_output_dir();
  return c;
}

RunConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError("", fmt::format("config syntax error at line {}, column {}: {}", line, column, e.what()));
  }
  return from_json(root);
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("", fmt::format("config file {} does not exist", path.string()));
  }
  return parse_config(read_text_file(path));
}

void validate(const RunConfig& c) {
  auto wrap = [](const std::string& field, auto&& check) {
    try {
      check();
    } catch (const std::exception& e) {
      fail(field, e.what());
    }
  };
  wrap("system", [&] { rkpinn::validate(c.system); });

  require(c.stages >= 1, "stages", "must be >= 1");
  wrap("scheme", [&] { (void)make_tableau(c.scheme, c.stages); });
  require(!c.hidden_layers.empty(), "hidden_layers", "needs at least one hidden layer");
  for (std::size_t i = 0; i < c.hidden_layers.size(); ++i) {
    require(c.hidden_layers[i] >= 1, fmt::format("hidden_layers[{}]", i), "must be >= 1");
  }
  if (c.fixed_dt) require(positive(*c.fixed_dt), "fixed_dt", "must be a positive finite number");

  require(c.epochs >= 1, "training.epochs", "must be >= 1");
  require(c.validation_points >= 1, "training.validation_points", "must be >= 1");
  require(c.patience >= 1, "training.patience", "must be >= 1");
  require(c.log_every >= 1, "training.log_every", "must be >= 1");
  require(std::isfinite(c.loss_weights.stage) && c.loss_weights.stage >= 0.0, "training.lambda_stage", "must be >= 0");
  require(std::isfinite(c.loss_weights.dt) && c.loss_weights.dt >= 0.0, "training.lambda_dt", "must be >= 0");
  for (const auto& row : c.loss_weights.stage_matrix) {
    for (double v : row) require(std::isfinite(v) && v >= 0.0, "training.lambda_stage", "entries must be >= 0");
  }
  for (double v : c.loss_weights.dt_vector) {
    require(std::isfinite(v) && v >= 0.0, "training.lambda_dt", "entries must be >= 0");
  }
  require(positive(c.learning_rate.initial), "training.learning_rate.initial", "must be > 0");
  require(positive(c.learning_rate.decay), "training.learning_rate.decay", "must be > 0");
  require(positive(c.learning_rate.decay_every), "training.learning_rate.decay_every", "must be > 0");

  require(c.collocation_points >= 1, "collocation_points", "must be >= 1");
  wrap("grid", [&] { c.grid.validate(); });

  require(!c.matrix.stages.empty(), "experiment.stages", "must not be empty");
  for (auto s : c.matrix.stages) {
    require(s >= 1, "experiment.stages", "entries must be >= 1");
    wrap("experiment.stages", [&] { (void)make_tableau(c.scheme, s); });
    const bool explicit_weights = !c.loss_weights.stage_matrix.empty() || !c.loss_weights.dt_vector.empty();
    require(!explicit_weights || s == c.stages, "training.lambda_stage",
            "explicit per-entry weights need every experiment stage count to equal stages");
  }
  (void)c.loss_weights.build(c.stages, 2);
  require(!c.matrix.collocation_points.empty(), "experiment.collocation_points", "must not be empty");
  require(!c.matrix.seeds.empty(), "experiment.seeds", "must not be empty");
  require(std::set(c.matrix.seeds.begin(), c.matrix.seeds.end()).size() == c.matrix.seeds.size(), "experiment.seeds",
          "must be distinct");
  require(c.test_points >= 1, "experiment.test_points", "must be >= 1");
  require(positive(c.reference_tol), "experiment.reference_tol", "must be > 0");

  const double grid_size = [&] {
    const auto& d = c.grid.domain;
    const auto n = [](const Interval& r, double step) { return std::round((r.hi - r.lo) / step) + 1.0; };
    return n(d.dt, c.grid.dt_step) * n(d.p, c.grid.p_step) * n(d.delta0, c.grid.delta0_step);
  }();
  auto fits = [&](std::size_t n_col) {
    return static_cast<double>(n_col + c.validation_points + c.test_points) <= grid_size;
  };
  require(fits(c.collocation_points), "collocation_points", "collocation, validation and test sets exceed the grid");
  for (auto n : c.matrix.collocation_points) {
    require(n >= 1, "experiment.collocation_points", "entries must be >= 1");
    require(fits(n), "experiment.collocation_points", "collocation, validation and test sets exceed the grid");
  }

  require(!c.timing.dt_list.empty(), "timing.dt_list", "must not be empty");
  for (double dt : c.timing.dt_list) require(std::isfinite(dt) && dt >= 0.0, "timing.dt_list", "entries must be >= 0");
  require(c.timing.repeats >= 10, "timing.repeats", "must be >= 10");
  require(c.timing.warmup_calls >= 1, "timing.warmup_calls", "must be >= 1");
  for (auto s : c.timing.irk_stages) {
    require(s >= 1 && s <= kMaxGaussStages, "timing.irk_stages", fmt::format("entries must be in [1, {}]", kMaxGaussStages));
  }
  require(positive(c.timing.solver_tol), "timing.solver_tol", "must be > 0");

  require(!c.output_dir.empty(), "output_dir", "must not be empty");
  require(c.jobs >= 1, "jobs", "must be >= 1");
}

std::string config_to_json(const RunConfig& config) { return to_ordered(config).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  auto j = to_ordered(config);
  j.erase("output_dir");
  j.erase("jobs");
  return fnv1a_hex(j.dump());
}

TimeStepMode time_step_mode(const RunConfig& config) {
  return config.fixed_dt ? TimeStepMode::fixed(*config.fixed_dt) : TimeStepMode::variable();
}

TrainingConfig training_config(const RunConfig& config, std::size_t stages) {
  TrainingConfig t;
  t.epochs = config.epochs;
  t.validation_points = config.validation_points;
  t.patience = config.patience;
  t.log_every = config.log_every;
  t.seed = config.seed;
  t.learning_rate = config.learning_rate;
  t.loss_weights = config.loss_weights.build(stages, 2);
  return t;
}

ExperimentConfig experiment_config(const RunConfig& config) {
  ExperimentConfig e;
  e.system = config.system;
  e.scheme = config.scheme;
  e.hidden = config.hidden_layers;
  e.input_normalization = config.input_normalization;
  e.training = training_config(config, config.stages);
  // Uniform weights are rebuilt per run to match each stage count.
  const bool explicit_weights = !config.loss_weights.stage_matrix.empty() || !config.loss_weights.dt_vector.empty();
  if (!explicit_weights) e.training.loss_weights.reset();
  e.stage_weight = config.loss_weights.stage;
  e.dt_weight = config.loss_weights.dt;
  e.grid = config.grid;
  e.matrix = config.matrix;
  e.test_points = config.test_points;
  e.data_seed = config.data_seed;
  e.reference_tol = config.reference_tol;
  e.output_dir = config.output_dir;
  e.jobs = config.jobs;
  e.config_hash = config_hash(config);
  return e;
}

}  // namespace rkpinn
