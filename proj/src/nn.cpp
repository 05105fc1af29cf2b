#include "rkpinn/nn.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

namespace rkpinn {

namespace {

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementations.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 3) {
    throw ShapeError("an MLP needs an input size, at least one hidden layer and an output size");
  }
  for (auto n : sizes) {
    if (n == 0) {
      throw ShapeError("layer sizes must be positive");
    }
  }
}

}  // namespace

std::size_t MlpParameters::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers) {
    count += static_cast<std::size_t>(layer.weights.size() + layer.biases.size());
  }
  return count;
}

MlpParameters MlpParameters::zeros(const std::vector<std::size_t>& layer_sizes) {
  check_sizes(layer_sizes);
  MlpParameters p;
  p.layer_sizes = layer_sizes;
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
    const auto fan_in = static_cast<Eigen::Index>(layer_sizes[i]);
    const auto fan_out = static_cast<Eigen::Index>(layer_sizes[i + 1]);
    p.layers.push_back({Matrix::Zero(fan_out, fan_in), Vector::Zero(fan_out)});
  }
  return p;
}

bool MlpParameters::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.weights.allFinite() || !layer.biases.allFinite()) {
      return false;
    }
  }
  return true;
}

void MlpParameters::check_consistent() const {
  check_sizes(layer_sizes);
  if (layers.size() + 1 != layer_sizes.size()) {
    throw ShapeError(fmt::format("{} layers do not match {} layer sizes", layers.size(), layer_sizes.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto fan_in = static_cast<Eigen::Index>(layer_sizes[i]);
    const auto fan_out = static_cast<Eigen::Index>(layer_sizes[i + 1]);
    if (layers[i].weights.rows() != fan_out || layers[i].weights.cols() != fan_in ||
        layers[i].biases.size() != fan_out) {
      throw ShapeError(fmt::format("layer {} shape does not match {} -> {}", i, fan_in, fan_out));
    }
  }
}

Vector MlpParameters::flatten() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  for (const auto& layer : layers) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        flat(pos++) = layer.weights(r, c);
      }
    }
    for (Eigen::Index r = 0; r < layer.biases.size(); ++r) {
      flat(pos++) = layer.biases(r);
    }
  }
  return flat;
}

void MlpParameters::assign_flat(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw ShapeError(fmt::format("flat vector of size {} does not match {} parameters", flat.size(),
                                 parameter_count()));
  }
  Eigen::Index pos = 0;
  for (auto& layer : layers) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = flat(pos++);
      }
    }
    for (Eigen::Index r = 0; r < layer.biases.size(); ++r) {
      layer.biases(r) = flat(pos++);
    }
  }
}

MlpParameters& MlpParameters::operator+=(const MlpParameters& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weights += other.layers[i].weights;
    layers[i].biases += other.layers[i].biases;
  }
  return *this;
}

MlpParameters& MlpParameters::operator*=(double scale) {
  for (auto& layer : layers) {
    layer.weights *= scale;
    layer.biases *= scale;
  }
  return *this;
}

MlpParameters glorot_init(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed) {
  auto p = MlpParameters::zeros(layer_sizes);
  std::mt19937_64 rng(seed);
  for (auto& layer : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weights.rows() + layer.weights.cols()));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = limit * (2.0 * unit_uniform(rng) - 1.0);
      }
    }
  }
  return p;
}

Matrix forward(const MlpParameters& params, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.rows()) != params.input_dim()) {
    throw ShapeError(fmt::format("input has {} rows, network expects {}", inputs.rows(), params.input_dim()));
  }
  Matrix z = inputs;
  const std::size_t hidden = params.layers.size() - 1;
  for (std::size_t i = 0; i < hidden; ++i) {
    const auto& layer = params.layers[i];
    Matrix a = layer.weights * z;
    a.colwise() += layer.biases;
    z = a.array().tanh().matrix();
  }
  const auto& out = params.layers.back();
  Matrix y = out.weights * z;
  y.colwise() += out.biases;
  return y;
}

Vector forward(const MlpParameters& params, const Vector& input) {
  return forward(params, Matrix(input));
}

TangentResult forward_tangent(const MlpParameters& params, const Vector& input, std::size_t direction) {
  if (direction >= params.input_dim()) {
    throw ShapeError(fmt::format("tangent direction {} out of range for {} inputs", direction, params.input_dim()));
  }
  MlpTape tape;
  tape.record(params, Matrix(input), direction);
  return {tape.output().col(0), tape.output_tangent().col(0)};
}

BackwardResult backward(const MlpParameters& params, const Vector& input, const Vector& cotangent) {
  if (static_cast<std::size_t>(cotangent.size()) != params.output_dim()) {
    throw ShapeError(fmt::format("cotangent has {} entries, network has {} outputs", cotangent.size(),
                                 params.output_dim()));
  }
  MlpTape tape;
  tape.record(params, Matrix(input), std::nullopt);
  BackwardResult res{MlpParameters::zeros(params.layer_sizes), Vector()};
  res.input_gradient = tape.backward(Matrix(cotangent), Matrix(), res.gradients).col(0);
  return res;
}

void MlpTape::record(const MlpParameters& params, const Matrix& inputs, std::optional<std::size_t> direction) {
  if (static_cast<std::size_t>(inputs.rows()) != params.input_dim()) {
    throw ShapeError(fmt::format("input has {} rows, network expects {}", inputs.rows(), params.input_dim()));
  }
  if (direction && *direction >= params.input_dim()) {
    throw ShapeError(fmt::format("tangent direction {} out of range", *direction));
  }
  params_ = &params;
  direction_ = direction;
  const std::size_t hidden = params.layers.size() - 1;
  const auto batch = inputs.cols();
  activations_.resize(hidden + 1);
  tangents_.resize(hidden + 1);
  pre_tangents_.resize(hidden + 1);
  activations_[0] = inputs;

  for (std::size_t i = 0; i < hidden; ++i) {
    const auto& layer = params.layers[i];
    Matrix& z = activations_[i + 1];
    z.noalias() = layer.weights * activations_[i];
    z.colwise() += layer.biases;
    z = z.array().tanh().matrix();
    if (direction_) {
      Matrix& da = pre_tangents_[i + 1];
      if (i == 0) {
        da = layer.weights.col(static_cast<Eigen::Index>(*direction_)).replicate(1, batch);
      } else {
        da.noalias() = layer.weights * tangents_[i];
      }
      tangents_[i + 1] = (1.0 - z.array().square()) * da.array();
    }
  }
  const auto& out = params.layers.back();
  output_.noalias() = out.weights * activations_[hidden];
  output_.colwise() += out.biases;
  if (direction_) {
    output_tangent_.noalias() = out.weights * tangents_[hidden];
  } else {
    output_tangent_.resize(0, 0);
  }
}

Matrix MlpTape::backward(const Matrix& cot_output, const Matrix& cot_tangent, MlpGradients& grads) const {
  if (params_ == nullptr) {
    throw std::logic_error("MlpTape::backward called before record");
  }
  const auto& params = *params_;
  const bool with_tangent = cot_tangent.size() != 0;
  if (with_tangent && !direction_) {
    throw std::logic_error("tangent cotangent supplied but no tangent was recorded");
  }
  if (cot_output.rows() != output_.rows() || cot_output.cols() != output_.cols() ||
      (with_tangent && (cot_tangent.rows() != output_.rows() || cot_tangent.cols() != output_.cols()))) {
    throw ShapeError("cotangent shape does not match the recorded output");
  }
  const std::size_t hidden = params.layers.size() - 1;

  // Output layer.
  {
    auto& g = grads.layers.back();
    g.weights.noalias() += cot_output * activations_[hidden].transpose();
    g.biases += cot_output.rowwise().sum();
    if (with_tangent) {
      g.weights.noalias() += cot_tangent * tangents_[hidden].transpose();
    }
  }
  Matrix z_bar = params.layers.back().weights.transpose() * cot_output;
  Matrix dz_bar;
  if (with_tangent) {
    dz_bar = params.layers.back().weights.transpose() * cot_tangent;
  }

  Matrix a_bar;
  Matrix da_bar;
  for (std::size_t i = hidden; i >= 1; --i) {
    const auto& layer = params.layers[i - 1];
    auto& g = grads.layers[i - 1];
    const Matrix& z = activations_[i];
    const auto slope = (1.0 - z.array().square()).matrix();
    if (with_tangent) {
      // dz = slope * da with slope = 1 - z^2, so z collects -2 z slope da dz_bar.
      da_bar = dz_bar.cwiseProduct(slope);
      z_bar.array() -= 2.0 * dz_bar.array() * pre_tangents_[i].array() * z.array();
    }
    a_bar = z_bar.cwiseProduct(slope);
    g.weights.noalias() += a_bar * activations_[i - 1].transpose();
    g.biases += a_bar.rowwise().sum();
    if (with_tangent) {
      if (i == 1) {
        g.weights.col(static_cast<Eigen::Index>(*direction_)) += da_bar.rowwise().sum();
      } else {
        g.weights.noalias() += da_bar * tangents_[i - 1].transpose();
        dz_bar = layer.weights.transpose() * da_bar;
      }
    }
    z_bar = layer.weights.transpose() * a_bar;
  }
  return z_bar;
}

AdamState AdamState::for_parameters(const MlpParameters& params) {
  AdamState s;
  s.first_moment = MlpParameters::zeros(params.layer_sizes);
  s.second_moment = MlpParameters::zeros(params.layer_sizes);
  return s;
}

bool adam_step(MlpParameters& params, const MlpGradients& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) {
    throw std::invalid_argument(fmt::format("learning rate must be positive, got {}", lr));
  }
  if (grads.layers.size() != params.layers.size() || state.first_moment.layers.size() != params.layers.size()) {
    throw ShapeError("gradient or optimizer state does not match the parameters");
  }
  if (!grads.all_finite()) {
    return false;
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double eps = state.epsilon;
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weights, grads.layers[i].weights, state.first_moment.layers[i].weights,
           state.second_moment.layers[i].weights);
    update(params.layers[i].biases, grads.layers[i].biases, state.first_moment.layers[i].biases,
           state.second_moment.layers[i].biases);
  }
  return true;
}

double LearningRateSchedule::operator()(std::size_t epoch) const {
  return initial * std::pow(decay, static_cast<double>(epoch) / decay_every);
}

double lr_schedule(std::size_t epoch) { return LearningRateSchedule{}(epoch); }

}  // namespace rkpinn
