#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "rkpinn/cli.hpp"
#include "rkpinn/io.hpp"
#include "rkpinn/tableau.hpp"

using namespace rkpinn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "rkpinn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "rkpinn_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<double> fields(const std::string& line) {
  std::vector<double> v;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) v.push_back(std::stod(f));
  return v;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  const auto r = run({"tableau", "--bogus", "1"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("tableau") != std::string::npos);
  CHECK(run({"evaluate", "--dt", "1"}).code == kExitUsage);
  CHECK(run({"simulate", "--x0", "0.1"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("tableau writes the two-stage Gauss-Legendre coefficients") {
  const auto dir = scratch("tableau");
  const auto file = dir / "gl2.csv";
  const auto r = run({"tableau", "--scheme", "gauss-legendre", "--stages", "2", "--out", file.string()});
  REQUIRE(r.code == kExitOk);
  const auto l = lines(read_text_file(file));
  REQUIRE(l.size() == 1 + 4 + 1 + 2 + 1 + 2);
  CHECK(l[0] == "s,k,l,alpha");
  CHECK(l[5] == "s,k,beta");
  CHECK(l[8] == "s,k,gamma");
  const double r3 = std::sqrt(3.0);
  const double alpha[4] = {0.25, 0.25 - r3 / 6, 0.25 + r3 / 6, 0.25};
  for (int i = 0; i < 4; ++i) {
    const auto f = fields(l[1 + i]);
    CHECK(f[0] == 2);
    CHECK(f[1] == 1 + i / 2);
    CHECK(f[2] == 1 + i % 2);
    CHECK(std::abs(f[3] - alpha[i]) < 1e-15);
  }
  CHECK(std::abs(fields(l[6])[2] - 0.5) < 1e-15);
  CHECK(std::abs(fields(l[9])[2] - (0.5 - r3 / 6)) < 1e-15);
  CHECK(fs::exists(dir / "manifest.json"));
  const auto stdout_run = run({"tableau", "--stages", "1"});
  CHECK(stdout_run.out.rfind("s,k,l,alpha\n1,1,1,0.5\n", 0) == 0);
}

TEST_CASE("simulate at equilibrium is constant") {
  const auto dir = scratch("simulate");
  const auto file = dir / "eq.csv";
  const double delta = std::asin(0.1 / 0.2);
  const auto r = run({"simulate", "--x0", fmt::format("{:.17g},0", delta), "--p", "0.1", "--dt", "0.5", "--steps",
                      "20", "--stages", "4", "--out", file.string()});
  REQUIRE(r.code == kExitOk);
  const auto l = lines(read_text_file(file));
  REQUIRE(l.size() == 22);
  CHECK(l[0] == "t,delta,omega,converged,newton_iters");
  for (std::size_t i = 1; i < l.size(); ++i) {
    const auto f = fields(l[i]);
    CHECK(f[0] == doctest::Approx(0.5 * static_cast<double>(i - 1)));
    CHECK(std::abs(f[1] - delta) < 1e-14);
    CHECK(std::abs(f[2]) < 1e-14);
    CHECK(f[3] == 1);
  }
  CHECK(fs::exists(dir / "manifest.json"));

  const auto rk = run({"simulate", "--x0", "0.3,0.1", "--p", "0.1", "--dt", "1", "--steps", "3", "--scheme", "rk45"});
  CHECK(rk.code == kExitOk);
  CHECK(lines(rk.out).size() == 5);
}

TEST_CASE("train, evaluate and manifests") {
  const auto dir = scratch("train");
  const auto config = dir / "config.json";
  write_text_file(config, R"({"stages": 2, "hidden_layers": [8], "collocation_points": 30,
                              "training": {"epochs": 20, "log_every": 5, "validation_points": 10},
                              "experiment": {"test_points": 10}})");
  const auto model = dir / "model.json";
  const auto r = run({"train", "--config", config.string(), "--out", model.string(), "--seed", "3"});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(model));
  CHECK(fs::exists(dir / "model_training.csv"));
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seeds"][0] == 3);
  CHECK(manifest["effective"]["seed"] == 3);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(manifest.contains("wall_time_seconds"));
  CHECK(manifest.contains("versions"));

  const auto log_first = read_text_file(dir / "model_training.csv");
  const auto dir2 = scratch("train_again");
  REQUIRE(run({"train", "--config", config.string(), "--out", (dir2 / "model.json").string(), "--seed", "3"}).code ==
          kExitOk);
  CHECK(read_text_file(dir2 / "model_training.csv") == log_first);

  const auto ev = run({"evaluate", "--model", model.string(), "--dt", "1", "--x0", "0.2,0.1", "--p", "0.05"});
  REQUIRE(ev.code == kExitOk);
  const auto l = lines(ev.out);
  REQUIRE(l.size() == 1);
  CHECK(fields(l[0]).size() == 3);
  CHECK(fields(l[0])[0] == 1.0);
  CHECK(ev.err.empty());

  const auto zero = run({"evaluate", "--model", model.string(), "--dt", "0", "--x0", "0.2,0.1", "--p", "0.05"});
  CHECK(zero.out == "0,0.20000000000000001,0.10000000000000001\n");

  const auto outside = run({"evaluate", "--model", model.string(), "--dt", "20", "--x0", "0.2,0.1", "--p", "0.05"});
  CHECK(outside.code == kExitOk);
  CHECK(outside.err.find("outside") != std::string::npos);

  CHECK(run({"evaluate", "--model", (dir / "missing.json").string(), "--dt", "1", "--x0", "0.2,0.1", "--p", "0"})
            .code == kExitFailure);
}

TEST_CASE("invalid config is a runtime failure naming the field") {
  const auto dir = scratch("badconfig");
  write_text_file(dir / "c.json", R"({"stages": 0})");
  const auto r = run({"train", "--config", (dir / "c.json").string(), "--out", (dir / "m.json").string()});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find("stages") != std::string::npos);
}

TEST_CASE("experiment and bench subcommands") {
  const auto dir = scratch("experiment");
  write_text_file(dir / "c.json", R"({"stages": 2, "hidden_layers": [6], "collocation_points": 20,
      "training": {"epochs": 10, "log_every": 5, "validation_points": 10},
      "grid": {"dt_step": 0.5, "p_step": 0.05, "delta0_step": 0.3141592653589793, "domain": {"dt": [0, 2]}},
      "experiment": {"seeds": [1, 2], "test_points": 10},
      "timing": {"dt_list": [0.5, 1], "repeats": 10, "warmup_calls": 2, "irk_stages": [2]}})");
  const auto r = run({"experiment", "--config", (dir / "c.json").string(), "--out-dir", (dir / "out").string(),
                      "--jobs", "2"});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir / "out" / "manifest.json"));
  CHECK(fs::exists(dir / "out" / "config.json"));
  CHECK(fs::exists(dir / "out" / "percentiles.csv"));
  CHECK(fs::exists(dir / "out" / "models" / "model_2_20_1.json"));
  CHECK(fs::exists(dir / "out" / "models" / "model_2_20_2.json"));
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "out" / "manifest.json"));
  CHECK(manifest["seeds"].size() == 2);

  const auto b = run({"bench", "--config", (dir / "c.json").string(), "--model",
                      (dir / "out" / "models" / "model_2_20_1.json").string(), "--out",
                      (dir / "bench" / "timing.csv").string()});
  REQUIRE(b.code == kExitOk);
  const auto l = lines(read_text_file(dir / "bench" / "timing.csv"));
  CHECK(l[0] == "method,dt,seconds_per_point,converged");
  CHECK(l.size() == 1 + 3 * 2);
  CHECK(fs::exists(dir / "bench" / "manifest.json"));
}
