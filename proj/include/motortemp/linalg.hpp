#pragma once

#include <Eigen/Dense>

namespace motortemp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace motortemp
