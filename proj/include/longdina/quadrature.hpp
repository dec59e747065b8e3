#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "longdina/params.hpp"

namespace longdina {

// Fixed rectangular grids: theta on a T-dim product grid with MVN weights
// renormalized each cycle, gamma on a 1-D grid with standard-normal weights.
struct QuadratureSpec {
  int theta_points = 15;      // per dimension, odd so the grid includes 0
  double theta_range = 5.0;   // grid spans [-range, range]
  int gamma_points = 21;
  double gamma_range = 5.0;

  void validate() const {
    if (theta_points < 3 || theta_points % 2 == 0)
      throw std::invalid_argument("quadrature: theta points must be odd and >= 3");
    if (gamma_points < 3 || gamma_points % 2 == 0)
      throw std::invalid_argument("quadrature: gamma points must be odd and >= 3");
    if (!(theta_range > 0.0) || !(gamma_range > 0.0))
      throw std::invalid_argument("quadrature: ranges must be positive");
  }

  std::vector<double> theta_grid() const {
    validate();
    std::vector<double> g(theta_points);
    const double h = 2.0 * theta_range / (theta_points - 1);
    for (int i = 0; i < theta_points; ++i) g[i] = -theta_range + h * i;
    return g;
  }

  std::vector<double> gamma_grid() const {
    validate();
    std::vector<double> g(gamma_points);
    const double h = 2.0 * gamma_range / (gamma_points - 1);
    for (int i = 0; i < gamma_points; ++i) g[i] = -gamma_range + h * i;
    return g;
  }

  // standard-normal weights at the gamma nodes, renormalized to sum to 1
  std::vector<double> gamma_weights() const {
    auto g = gamma_grid();
    std::vector<double> w(g.size());
    double s = 0.0;
    for (size_t i = 0; i < g.size(); ++i) s += (w[i] = norm_pdf(g[i]));
    for (double& x : w) x /= s;
    return w;
  }
};

// Product grid over T dimensions with per-node MVN log-density.
struct ThetaGrid {
  int T = 0;
  int points = 0;                  // per dimension
  std::vector<double> values;      // 1-D grid values
  std::vector<double> weights;     // normalized MVN weight per node, size points^T
  Eigen::MatrixXd nodes;           // node index -> T-vector (row per node)

  int num_nodes() const { return static_cast<int>(weights.size()); }
  int coord(int node, int dim) const {  // grid index along `dim` (0-based)
    for (int d = 0; d < dim; ++d) node /= points;
    return node % points;
  }
};

inline ThetaGrid make_theta_grid(const QuadratureSpec& quad, const StructuralParameters& st) {
  ThetaGrid g;
  g.T = static_cast<int>(st.mu.size());
  g.points = quad.theta_points;
  g.values = quad.theta_grid();
  int n = 1;
  for (int t = 0; t < g.T; ++t) n *= g.points;
  g.weights.resize(n);
  g.nodes.resize(n, g.T);

  Eigen::LLT<Eigen::MatrixXd> llt(st.sigma);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("theta grid: sigma is not positive-definite");
  const Eigen::MatrixXd L = llt.matrixL();
  double logdet = 0.0;
  for (int t = 0; t < g.T; ++t) logdet += 2.0 * std::log(L(t, t));

  Eigen::VectorXd x(g.T), z(g.T);
  double maxlog = -std::numeric_limits<double>::infinity();
  std::vector<double> logw(n);
  for (int node = 0; node < n; ++node) {
    int rem = node;
    for (int t = 0; t < g.T; ++t) {
      x[t] = g.values[rem % g.points];
      rem /= g.points;
    }
    g.nodes.row(node) = x;
    z = llt.matrixL().solve(x - st.mu);
    logw[node] = -0.5 * (z.squaredNorm() + logdet);
    maxlog = std::max(maxlog, logw[node]);
  }
  double s = 0.0;
  for (int node = 0; node < n; ++node) s += (g.weights[node] = std::exp(logw[node] - maxlog));
  for (double& w : g.weights) w /= s;
  return g;
}

}  // namespace longdina
