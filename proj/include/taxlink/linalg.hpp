#pragma once

#include <Eigen/Dense>

namespace taxlink {

// Training runs in double precision throughout: log-space CRF arithmetic and
// the 1e-4 gradient-check tolerance leave no room for float32.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace taxlink
