#include <doctest.h>

#include <cstdlib>

#include "rkpinn/config.hpp"

using namespace rkpinn;

namespace {

std::string field_of(const std::string& text) {
  try {
    (void)parse_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

}  // namespace

TEST_CASE("empty config gives the built-in defaults") {
  const auto c = parse_config("{}");
  CHECK(c.system.m == 0.4);
  CHECK(c.system.d == 0.15);
  CHECK(c.system.b12 == 0.2);
  CHECK(c.scheme == "gauss-legendre");
  CHECK(c.stages == 4);
  CHECK(c.hidden_layers == std::vector<std::size_t>{50});
  CHECK_FALSE(c.fixed_dt.has_value());
  CHECK_FALSE(c.input_normalization);
  CHECK(parse_config(R"({"input_normalization": true})").input_normalization);
  CHECK(c.collocation_points == 1000);
  CHECK(c.epochs == 100000);
  CHECK(c.validation_points == 1000);
  CHECK(c.patience == 5000);
  CHECK(c.log_every == 100);
  CHECK(c.loss_weights.stage == 1.0);
  CHECK(c.loss_weights.dt == 1.0);
  CHECK(c.learning_rate.initial == 0.05);
  CHECK(c.learning_rate.decay == 0.995);
  CHECK(c.grid.dt_step == 0.1);
  CHECK(c.grid.p_step == 0.004);
  CHECK(c.matrix.stages == std::vector<std::size_t>{4});
  CHECK(c.matrix.collocation_points == std::vector<std::size_t>{1000});
  CHECK(c.matrix.seeds.size() == 5);
  CHECK(c.test_points == 2000);
  CHECK(c.reference_tol == 1e-12);
  CHECK(c.timing.irk_stages == std::vector<std::size_t>{4, 32});
}

TEST_CASE("validation errors name the field") {
  CHECK(field_of(R"({"stages": 0})") == "stages");
  CHECK(field_of(R"({"system": {"m": -1}})") == "system");
  CHECK(field_of(R"({"training": {"epochs": 0}})") == "training.epochs");
  CHECK(field_of(R"({"training": {"learning_rate": {"decay": 0}}})") == "training.learning_rate.decay");
  CHECK(field_of(R"({"grid": {"dt_step": 0.3}})") == "grid");
  CHECK(field_of(R"({"experiment": {"seeds": [1, 1]}})") == "experiment.seeds");
  CHECK(field_of(R"({"experiment": {"seeds": []}})") == "experiment.seeds");
  CHECK(field_of(R"({"timing": {"repeats": 3}})") == "timing.repeats");
  CHECK(field_of(R"({"scheme": "radau"})") == "scheme");
  CHECK(field_of(R"({"hidden_layers": [50, 0]})") == "hidden_layers[1]");
  CHECK(field_of(R"({"mode": "fixed"})") == "fixed_dt");
  CHECK(field_of(R"({"fixed_dt": 0.1})") == "fixed_dt");
  CHECK(field_of(R"({"collocation_points": 300000})") == "collocation_points");
  CHECK(field_of(R"({"jobs": 0})") == "jobs");
  CHECK(field_of(R"({"input_normalization": 1})") == "input_normalization");
  CHECK(field_of(R"({"stages": -2})") == "stages");
  CHECK(field_of(R"({"stages": "four"})") == "stages");
  CHECK(field_of(R"({"training": {"lambda_stage": [[1, 1]]}})") == "training.lambda_stage");
}

TEST_CASE("unknown keys are rejected") {
  CHECK(field_of(R"({"stagez": 4})") == "stagez");
  CHECK(field_of(R"({"training": {"epoch": 4}})") == "training.epoch");
}

TEST_CASE("syntax errors report a line") {
  try {
    (void)parse_config("{\n  \"stages\": 4,\n  oops\n}");
    FAIL("expected a syntax error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("overrides and the run matrix") {
  const auto c = parse_config(R"({"stages": 16, "collocation_points": 200, "seed": 9,
                                  "training": {"lambda_stage": 2.5, "lambda_dt": [1, 0.5]}})");
  CHECK(c.stages == 16);
  CHECK(c.matrix.stages == std::vector<std::size_t>{16});
  CHECK(c.matrix.collocation_points == std::vector<std::size_t>{200});
  CHECK(c.seed == 9);
  const auto w = c.loss_weights.build(16, 2);
  CHECK(w.stage(7, 1) == 2.5);
  CHECK(w.dt(1) == 0.5);
  const auto t = training_config(c, 16);
  REQUIRE(t.loss_weights.has_value());
  CHECK(t.loss_weights->dt(1) == 0.5);

  const auto e = parse_config(R"({"experiment": {"stages": [4, 16], "seeds": [3, 4]}})");
  CHECK(e.matrix.stages == std::vector<std::size_t>{4, 16});
  const auto ec = experiment_config(e);
  CHECK_FALSE(ec.training.loss_weights.has_value());
  CHECK(ec.config_hash == config_hash(e));
}

TEST_CASE("fixed time step mode") {
  const auto c = parse_config(R"({"mode": "fixed", "fixed_dt": 0.5})");
  REQUIRE(c.fixed_dt.has_value());
  CHECK(*c.fixed_dt == 0.5);
  CHECK_FALSE(time_step_mode(c).is_variable());
  CHECK(time_step_mode(c).fixed_dt == 0.5);
}

TEST_CASE("effective config round-trips") {
  const auto c = parse_config(R"({"stages": 8, "hidden_layers": [20, 30], "mode": "fixed", "fixed_dt": 0.1,
                                  "training": {"lambda_stage": [[1, 2], [3, 4], [5, 6], [7, 8], [1, 1], [1, 1],
                                                                [1, 1], [1, 1]]},
                                  "grid": {"domain": {"p": [0, 0.1]}, "p_step": 0.01},
                                  "output_dir": "somewhere", "jobs": 3})");
  const auto text = config_to_json(c);
  const auto back = parse_config(text);
  CHECK(config_to_json(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.loss_weights.stage_matrix[1][0] == 3.0);
  CHECK(back.grid.domain.p.hi == 0.1);

  const auto defaults = parse_config("{}");
  CHECK(config_to_json(parse_config(config_to_json(defaults))) == config_to_json(defaults));
  CHECK(parse_config(config_to_json(defaults)).grid.delta0_step == defaults.grid.delta0_step);
}

TEST_CASE("hash ignores output location and parallelism only") {
  const auto a = parse_config(R"({"output_dir": "a", "jobs": 1})");
  const auto b = parse_config(R"({"output_dir": "b", "jobs": 4})");
  const auto c = parse_config(R"({"seed": 2})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("output directory defaults from the environment") {
  ::setenv("RKPINN_OUT_DIR", "/tmp/rkpinn_env_out", 1);
  CHECK(parse_config("{}").output_dir == "/tmp/rkpinn_env_out");
  CHECK(parse_config(R"({"output_dir": "file_wins"})").output_dir == "file_wins");
  ::unsetenv("RKPINN_OUT_DIR");
  CHECK(parse_config("{}").output_dir == "out");
}

TEST_CASE("missing config file") {
  CHECK_THROWS_AS((void)parse_config_file("/nonexistent/config.json"), ConfigError);
}
