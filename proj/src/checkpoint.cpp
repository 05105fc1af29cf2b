#include "rkpinn/checkpoint.hpp"

#include <json.hpp>
#include <fmt/format.h>

#include "rkpinn/io.hpp"

namespace rkpinn {

namespace {

using nlohmann::json;

std::string num(double v) {
  if (!std::isfinite(v)) {
    throw CheckpointError("checkpoint values must be finite");
  }
  return fmt::format("{:.16e}", v);
}

void append_vector(std::string& out, const Vector& v) {
  out += '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    out += num(v(i));
  }
  out += ']';
}

template <typename MatrixType>
void append_matrix(std::string& out, const MatrixType& m, const std::string& indent) {
  out += "[\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out += indent + "  [";
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ", ";
      out += num(m(r, c));
    }
    out += r + 1 < m.rows() ? "],\n" : "]\n";
  }
  out += indent + "]";
}

Vector read_vector(const json& j, const char* what) {
  if (!j.is_array()) {
    throw CheckpointError(fmt::format("checkpoint field '{}' must be an array", what));
  }
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Matrix read_matrix(const json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw CheckpointError(fmt::format("checkpoint field '{}' must be a nested array", what));
  }
  const auto rows = j.size();
  const auto cols = j[0].size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) {
      throw CheckpointError(fmt::format("checkpoint field '{}' has ragged rows", what));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

std::string checkpoint_to_json(const ModelCheckpoint& ckpt) {
  const auto& model = ckpt.model;
  model.validate();
  std::string out = "{\n";
  out += fmt::format("  \"format_version\": {},\n", kCheckpointFormatVersion);
  out += fmt::format("  \"config_hash\": {},\n", json(ckpt.config_hash).dump());
  out += fmt::format("  \"state_dim\": {},\n  \"control_dim\": {},\n", model.state_dim, model.control_dim);
  if (model.mode.is_variable()) {
    out += "  \"mode\": {\"type\": \"variable_dt\"},\n";
  } else {
    out += fmt::format("  \"mode\": {{\"type\": \"fixed_dt\", \"dt\": {}}},\n", num(model.mode.fixed_dt));
  }
  const auto& d = ckpt.domain;
  out += fmt::format(
      "  \"domain\": {{\"dt\": [{}, {}], \"p\": [{}, {}], \"delta0\": [{}, {}], \"omega0\": {}}},\n", num(d.dt.lo),
      num(d.dt.hi), num(d.p.lo), num(d.p.hi), num(d.delta0.lo), num(d.delta0.hi), num(d.omega0));
  const auto& t = model.tableau;
  out += fmt::format("  \"tableau\": {{\n    \"scheme\": {},\n    \"stages\": {},\n    \"alpha\": ",
                     json(t.scheme_name).dump(), t.stages);
  append_matrix(out, t.alpha, "    ");
  out += ",\n    \"beta\": ";
  append_vector(out, t.beta);
  out += ",\n    \"gamma\": ";
  append_vector(out, t.gamma);
  out += "\n  },\n";
  if (model.normalizes_inputs()) {
    out += "  \"input_offset\": ";
    append_vector(out, model.input_offset);
    out += ",\n  \"input_scale\": ";
    append_vector(out, model.input_scale);
    out += ",\n";
  }

  out += "  \"layer_sizes\": [";
  for (std::size_t i = 0; i < model.mlp.layer_sizes.size(); ++i) {
    out += fmt::format("{}{}", i > 0 ? ", " : "", model.mlp.layer_sizes[i]);
  }
  out += "],\n  \"weights\": [\n";
  for (std::size_t i = 0; i < model.mlp.layers.size(); ++i) {
    out += "    ";
    append_matrix(out, model.mlp.layers[i].weights, "    ");
    out += i + 1 < model.mlp.layers.size() ? ",\n" : "\n";
  }
  out += "  ],\n  \"biases\": [\n";
  for (std::size_t i = 0; i < model.mlp.layers.size(); ++i) {
    out += "    ";
    append_vector(out, model.mlp.layers[i].biases);
    out += i + 1 < model.mlp.layers.size() ? ",\n" : "\n";
  }
  out += "  ]\n}\n";
  return out;
}

ModelCheckpoint checkpoint_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(fmt::format("checkpoint is not valid JSON: {}", e.what()));
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw CheckpointError(fmt::format("unsupported checkpoint format_version {}", version));
    }
    ModelCheckpoint ckpt;
    ckpt.config_hash = j.value("config_hash", std::string());
    auto& model = ckpt.model;
    model.state_dim = j.at("state_dim").get<std::size_t>();
    model.control_dim = j.at("control_dim").get<std::size_t>();
    const auto& mode = j.at("mode");
    const auto type = mode.at("type").get<std::string>();
    if (type == "variable_dt") {
      model.mode = TimeStepMode::variable();
    } else if (type == "fixed_dt") {
      model.mode = TimeStepMode::fixed(mode.at("dt").get<double>());
    } else {
      throw CheckpointError(fmt::format("unknown mode type '{}'", type));
    }
    if (j.contains("domain")) {
      const auto& d = j["domain"];
      ckpt.domain.dt = {d.at("dt")[0].get<double>(), d.at("dt")[1].get<double>()};
      ckpt.domain.p = {d.at("p")[0].get<double>(), d.at("p")[1].get<double>()};
      ckpt.domain.delta0 = {d.at("delta0")[0].get<double>(), d.at("delta0")[1].get<double>()};
      ckpt.domain.omega0 = d.at("omega0").get<double>();
    }
    const auto& t = j.at("tableau");
    model.tableau.scheme_name = t.at("scheme").get<std::string>();
    model.tableau.stages = t.at("stages").get<std::size_t>();
    model.tableau.alpha = read_matrix(t.at("alpha"), "tableau.alpha");
    model.tableau.beta = read_vector(t.at("beta"), "tableau.beta");
    model.tableau.gamma = read_vector(t.at("gamma"), "tableau.gamma");

    if (j.contains("input_offset") || j.contains("input_scale")) {
      model.input_offset = read_vector(j.at("input_offset"), "input_offset");
      model.input_scale = read_vector(j.at("input_scale"), "input_scale");
    }

    model.mlp.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (weights.size() != biases.size()) {
      throw CheckpointError("checkpoint weights and biases differ in layer count");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
      model.mlp.layers.push_back({read_matrix(weights[i], "weights"), read_vector(biases[i], "biases")});
    }
    model.validate();
    return ckpt;
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("malformed checkpoint: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(fmt::format("inconsistent checkpoint: {}", e.what()));
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const CheckpointError*>(&e) != nullptr) throw;
    throw CheckpointError(fmt::format("inconsistent checkpoint: {}", e.what()));
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  write_text_file(path, checkpoint_to_json(ckpt));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_text_file(path)); }

}  // namespace rkpinn
