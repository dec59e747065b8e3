#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "longdina/estimate.hpp"

namespace longdina {

// Posterior scoring results for a fitted model.
struct PosteriorSummary {
  int T = 0, K = 0;
  Eigen::MatrixXd eap_theta;        // N x T
  Eigen::MatrixXd sd_theta;         // N x T
  Eigen::MatrixXd attr_posterior;   // N x T*K, occasion-major
  std::vector<std::uint32_t> map_pattern;  // per person, longitudinal pattern index
  Eigen::MatrixXd mixing;           // T x 2^K, per-occasion pattern proportions
};

inline PosteriorSummary score_persons(const ResponseMatrix& data,
                                      const LongitudinalDesign& design,
                                      const ItemParameters& items,
                                      const StructuralParameters& structural,
                                      const QuadratureSpec& quad) {
  detail::Layout lay(design);
  detail::ParamTables pt(lay, items, structural, quad);
  const int N = data.persons();
  const int nnode = pt.grid.num_nodes();

  PosteriorSummary ps;
  ps.T = lay.T;
  ps.K = lay.K;
  ps.eap_theta = Eigen::MatrixXd::Zero(N, lay.T);
  ps.sd_theta = Eigen::MatrixXd::Zero(N, lay.T);
  ps.attr_posterior = Eigen::MatrixXd::Zero(N, lay.T * lay.K);
  ps.map_pattern.resize(N);
  ps.mixing = Eigen::MatrixXd::Zero(lay.T, lay.nocc);

  detail::PersonFactors pf;
  Eigen::MatrixXd joint;
  std::vector<double> pat_post(lay.npat);
  for (int n = 0; n < N; ++n) {
    detail::person_factors(lay, pt, data.y, n, pf);
    double scale = 0.0;
    for (double v : pf.pattern_lik) scale = std::max(scale, v);
    if (scale <= 0.0) throw std::runtime_error("zero likelihood for person " + std::to_string(n));
    for (double& v : pf.pattern_lik) v /= scale;
    const double lik = detail::person_marginal(lay, pt, pf, &joint);
    joint /= lik;

    // theta moments over the node marginal
    for (int node = 0; node < nnode; ++node) {
      const double mass = joint.row(node).sum();
      if (mass == 0.0) continue;
      for (int t = 0; t < lay.T; ++t) {
        const double x = pt.grid.nodes(node, t);
        ps.eap_theta(n, t) += mass * x;
        ps.sd_theta(n, t) += mass * x * x;
      }
    }
    for (int t = 0; t < lay.T; ++t) {
      const double var = ps.sd_theta(n, t) - ps.eap_theta(n, t) * ps.eap_theta(n, t);
      ps.sd_theta(n, t) = var > 0.0 ? std::sqrt(var) : 0.0;
    }

    // pattern marginal, MAP (lowest index wins ties), attribute posteriors
    double best = -1.0;
    std::uint32_t best_a = 0;
    for (int a = 0; a < lay.npat; ++a) {
      pat_post[a] = joint.col(a).sum();
      if (pat_post[a] > best) {
        best = pat_post[a];
        best_a = static_cast<std::uint32_t>(a);
      }
    }
    ps.map_pattern[n] = best_a;
    for (int a = 0; a < lay.npat; ++a) {
      if (pat_post[a] == 0.0) continue;
      for (int b = 0; b < lay.T * lay.K; ++b)
        if ((a >> b) & 1) ps.attr_posterior(n, b) += pat_post[a];
      for (int t = 1; t <= lay.T; ++t)
        ps.mixing(t - 1, lay.ps.occasion_pattern(a, t)) += pat_post[a];
    }
  }
  if (N > 0) ps.mixing /= static_cast<double>(N);
  return ps;
}

// Successive EAP differences plus per-attribute mastery transitions
// ("0->1->1") from the MAP longitudinal pattern.
struct GrowthRecord {
  std::vector<double> theta;             // length T
  std::vector<double> theta_increments;  // length T-1
  std::vector<std::string> attribute_transitions;  // length K
};

inline GrowthRecord individual_growth(const PosteriorSummary& ps, int person) {
  if (ps.T < 2) throw std::invalid_argument("individual_growth: requires T >= 2");
  GrowthRecord g;
  for (int t = 0; t < ps.T; ++t) g.theta.push_back(ps.eap_theta(person, t));
  for (int t = 0; t + 1 < ps.T; ++t)
    g.theta_increments.push_back(g.theta[t + 1] - g.theta[t]);
  const std::uint32_t a = ps.map_pattern[person];
  for (int k = 0; k < ps.K; ++k) {
    std::string s;
    for (int t = 0; t < ps.T; ++t) {
      if (t) s += "->";
      s += ((a >> (t * ps.K + k)) & 1) ? '1' : '0';
    }
    g.attribute_transitions.push_back(s);
  }
  return g;
}

}  // namespace longdina
