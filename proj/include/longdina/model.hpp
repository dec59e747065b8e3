#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "longdina/math.hpp"
#include "longdina/params.hpp"
#include "longdina/patterns.hpp"

namespace longdina {

// DINA reparameterization: g = logistic(lambda0), s = 1 - logistic(lambda0 + lambdaK)
inline std::pair<double, double> guess_slip_from_loglinear(double lambda0, double lambdaK) {
  return {logistic(lambda0), 1.0 - logistic(lambda0 + lambdaK)};
}

inline std::pair<double, double> loglinear_from_guess_slip(double g, double s) {
  const double l0 = logit(g);
  return {l0, logit(1.0 - s) - l0};
}

// First-order kernel. eta is the conjunctive indicator, gamma the person's
// specific-dimension value (slope = 0 for non-anchor items).
inline double response_probability(double lambda0, double lambdaK, int eta, double slope = 0.0,
                                   double gamma = 0.0) {
  return logistic(lambda0 + lambdaK * eta + slope * gamma);
}

// Second-order kernel: P(alpha_kt = 1 | theta_t)
inline double attribute_mastery_probability(double delta_k, double beta_k, double theta_t) {
  return logistic(delta_k * theta_t + beta_k);
}

// Prior probability of a full longitudinal pattern given the ability vector,
// attributes independent across (t, k) given theta.
inline double profile_prior_given_theta(const StructuralParameters& st,
                                        const Eigen::VectorXd& theta, const PatternSpace& ps,
                                        std::uint32_t pattern) {
  if (theta.size() != ps.T || st.delta.size() != ps.K)
    throw std::invalid_argument("profile_prior_given_theta: dimension mismatch");
  double p = 1.0;
  for (int t = 1; t <= ps.T; ++t) {
    for (int k = 1; k <= ps.K; ++k) {
      const double pk = attribute_mastery_probability(st.delta[k - 1], st.beta[k - 1], theta[t - 1]);
      p *= ps.attribute(pattern, t, k) ? pk : 1.0 - pk;
    }
  }
  return p;
}

}  // namespace longdina
