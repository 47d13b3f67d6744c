#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace ssrem {

struct TransportPlan {
  double cost = 0.0;
  Eigen::MatrixXd flow;
  std::size_t iterations = 0;
};

// Exact balanced transportation problem: minimize sum(flow .* cost) subject to
// row sums = supply and column sums = demand. Transportation simplex with a
// northwest-corner start and MODI pricing. Totals must agree to 1e-9.
TransportPlan solve_transport(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                              const Eigen::MatrixXd& cost);

}  // namespace ssrem
