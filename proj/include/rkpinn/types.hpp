#pragma once

#include <Eigen/Dense>

namespace rkpinn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Row-major storage is used wherever a matrix is reshaped from the network
// output (stage-major layout).
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace rkpinn
