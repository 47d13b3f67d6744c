#include "ssrem/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ssrem {
namespace {

struct Cell {
  Eigen::Index row;
  Eigen::Index col;
};

// Basis cells form a spanning tree over m row nodes and n column nodes
// (column j is node m + j).
class Basis {
 public:
  Basis(Eigen::Index m, Eigen::Index n) : m_(m), n_(n), basic_(m, n) { basic_.setZero(); }

  void add(Cell c) {
    cells_.push_back(c);
    basic_(c.row, c.col) = 1;
  }
  void replace(std::size_t slot, Cell c) {
    basic_(cells_[slot].row, cells_[slot].col) = 0;
    cells_[slot] = c;
    basic_(c.row, c.col) = 1;
  }
  bool contains(Eigen::Index i, Eigen::Index j) const { return basic_(i, j) != 0; }
  const std::vector<Cell>& cells() const { return cells_; }

  // Basis slots on the tree path from column node `col` to row node `row`.
  std::vector<std::size_t> path(Eigen::Index row, Eigen::Index col) const {
    const auto nodes = static_cast<std::size_t>(m_ + n_);
    std::vector<std::vector<std::size_t>> adj(nodes);
    for (std::size_t s = 0; s < cells_.size(); ++s) {
      adj[static_cast<std::size_t>(cells_[s].row)].push_back(s);
      adj[static_cast<std::size_t>(m_ + cells_[s].col)].push_back(s);
    }
    const auto start = static_cast<std::size_t>(m_ + col);
    const auto goal = static_cast<std::size_t>(row);
    std::vector<std::size_t> via(nodes, std::numeric_limits<std::size_t>::max());
    std::vector<bool> seen(nodes, false);
    std::vector<std::size_t> queue{start};
    seen[start] = true;
    for (std::size_t head = 0; head < queue.size() && !seen[goal]; ++head) {
      const std::size_t node = queue[head];
      for (std::size_t s : adj[node]) {
        const auto r = static_cast<std::size_t>(cells_[s].row);
        const auto c = static_cast<std::size_t>(m_ + cells_[s].col);
        const std::size_t next = node == r ? c : r;
        if (seen[next]) continue;
        seen[next] = true;
        via[next] = s;
        queue.push_back(next);
      }
    }
    if (!seen[goal]) throw std::logic_error("transport basis is not a spanning tree");
    std::vector<std::size_t> slots;
    for (std::size_t node = goal; node != start;) {
      const std::size_t s = via[node];
      slots.push_back(s);
      const auto r = static_cast<std::size_t>(cells_[s].row);
      const auto c = static_cast<std::size_t>(m_ + cells_[s].col);
      node = node == r ? c : r;
    }
    std::reverse(slots.begin(), slots.end());
    return slots;
  }

  void potentials(const Eigen::MatrixXd& cost, Eigen::VectorXd& u, Eigen::VectorXd& v) const {
    u = Eigen::VectorXd::Constant(m_, std::numeric_limits<double>::quiet_NaN());
    v = Eigen::VectorXd::Constant(n_, std::numeric_limits<double>::quiet_NaN());
    u(0) = 0.0;
    // The tree has m + n - 1 edges; repeated sweeps settle it in tree depth passes.
    bool changed = true;
    while (changed) {
      changed = false;
      for (const Cell& c : cells_) {
        if (!std::isnan(u(c.row)) && std::isnan(v(c.col))) {
          v(c.col) = cost(c.row, c.col) - u(c.row);
          changed = true;
        } else if (std::isnan(u(c.row)) && !std::isnan(v(c.col))) {
          u(c.row) = cost(c.row, c.col) - v(c.col);
          changed = true;
        }
      }
    }
  }

 private:
  Eigen::Index m_;
  Eigen::Index n_;
  Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic> basic_;
  std::vector<Cell> cells_;
};

}  // namespace

TransportPlan solve_transport(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                              const Eigen::MatrixXd& cost) {
  const Eigen::Index m = supply.size();
  const Eigen::Index n = demand.size();
  if (m == 0 || n == 0) throw std::invalid_argument("transport: empty supply or demand");
  if (cost.rows() != m || cost.cols() != n) {
    throw std::invalid_argument("transport: cost matrix shape mismatch");
  }
  if ((supply.array() < 0).any() || (demand.array() < 0).any()) {
    throw std::invalid_argument("transport: negative mass");
  }
  const double total = supply.sum();
  if (!(total > 0) || std::abs(total - demand.sum()) > 1e-9 * std::max(1.0, total)) {
    throw std::invalid_argument("transport: unbalanced problem");
  }

  // Northwest corner: each step advances exactly one index, so the m + n - 1
  // cells form a staircase tree even when some allocations are zero.
  Eigen::VectorXd a = supply;
  Eigen::VectorXd b = demand;
  b(n - 1) += total - demand.sum();
  TransportPlan plan;
  plan.flow = Eigen::MatrixXd::Zero(m, n);
  Basis basis(m, n);
  for (Eigen::Index i = 0, j = 0;;) {
    const double x = std::max(0.0, std::min(a(i), b(j)));
    plan.flow(i, j) = x;
    basis.add({i, j});
    a(i) -= x;
    b(j) -= x;
    if (i == m - 1 && j == n - 1) break;
    if (j == n - 1 || (i < m - 1 && a(i) <= b(j))) {
      ++i;
    } else {
      ++j;
    }
  }

  const double tol = 1e-12 * std::max(1.0, cost.cwiseAbs().maxCoeff());
  const std::size_t max_iterations = 50 * static_cast<std::size_t>((m + n) * (m + n)) + 1000;
  Eigen::VectorXd u, v;
  for (;;) {
    basis.potentials(cost, u, v);
    double best = -tol;
    Cell entering{-1, -1};
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (basis.contains(i, j)) continue;
        const double reduced = cost(i, j) - u(i) - v(j);
        if (reduced < best) {
          best = reduced;
          entering = {i, j};
        }
      }
    }
    if (entering.row < 0) break;
    if (++plan.iterations > max_iterations) {
      throw std::runtime_error("transport: iteration limit exceeded");
    }

    // Cycle: entering cell (+), then alternating -, +, ... along the tree path
    // from the entering column back to the entering row.
    const auto slots = basis.path(entering.row, entering.col);
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leaving = slots.front();
    for (std::size_t k = 0; k < slots.size(); k += 2) {
      const Cell& c = basis.cells()[slots[k]];
      const double x = plan.flow(c.row, c.col);
      if (x < theta) {
        theta = x;
        leaving = slots[k];
      }
    }
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const Cell& c = basis.cells()[slots[k]];
      plan.flow(c.row, c.col) += (k % 2 == 0 ? -theta : theta);
    }
    plan.flow(entering.row, entering.col) = theta;
    const Cell& out = basis.cells()[leaving];
    plan.flow(out.row, out.col) = 0.0;
    basis.replace(leaving, entering);
  }

  plan.flow = plan.flow.cwiseMax(0.0);
  plan.cost = (plan.flow.array() * cost.array()).sum();
  return plan;
}

}  // namespace ssrem
