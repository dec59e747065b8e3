#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "longdina/math.hpp"
#include "longdina/score.hpp"

namespace longdina {

// Population-level growth: mean increments and scale ratios per step.
struct OverallGrowth {
  std::vector<double> mean_increments;  // mu_{t+1} - mu_t
  std::vector<double> scale_ratios;     // sd_{t+1} / sd_t
};

inline OverallGrowth overall_growth(const Eigen::VectorXd& mu, const Eigen::VectorXd& variances) {
  if (mu.size() != variances.size() || mu.size() < 1)
    throw std::invalid_argument("overall_growth: size mismatch");
  for (int t = 0; t < variances.size(); ++t)
    if (!(variances[t] > 0.0)) throw std::invalid_argument("overall_growth: variances must be > 0");
  OverallGrowth g;
  for (int t = 0; t + 1 < mu.size(); ++t) {
    g.mean_increments.push_back(mu[t + 1] - mu[t]);
    g.scale_ratios.push_back(std::sqrt(variances[t + 1] / variances[t]));
  }
  return g;
}

inline Eigen::MatrixXd covariance_to_correlation(const Eigen::MatrixXd& sigma) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("covariance_to_correlation: input not positive-definite");
  const int T = static_cast<int>(sigma.rows());
  Eigen::MatrixXd r(T, T);
  for (int u = 0; u < T; ++u)
    for (int v = 0; v < T; ++v)
      r(u, v) = sigma(u, v) / std::sqrt(sigma(u, u) * sigma(v, v));
  return r;
}

// Classification and parameter recovery against known truth.
struct RecoveryReport {
  Eigen::MatrixXd accr;               // K x T
  Eigen::VectorXd pccr;               // per occasion
  double longitudinal_pccr = 0.0;     // all T*K attributes correct
  Eigen::MatrixXd theta_rmse_bias;    // 2 x T: row 0 RMSE, row 1 mean abs bias
};

inline RecoveryReport recovery_metrics(const Eigen::MatrixXi& true_alpha,
                                       const std::vector<std::uint32_t>& est_pattern,
                                       const PatternSpace& ps,
                                       const Eigen::MatrixXd* true_theta = nullptr,
                                       const Eigen::MatrixXd* est_theta = nullptr) {
  const int N = static_cast<int>(true_alpha.rows());
  if (true_alpha.cols() != ps.T * ps.K || static_cast<int>(est_pattern.size()) != N)
    throw std::invalid_argument("recovery_metrics: misaligned inputs");
  RecoveryReport rep;
  rep.accr = Eigen::MatrixXd::Zero(ps.K, ps.T);
  rep.pccr = Eigen::VectorXd::Zero(ps.T);
  rep.theta_rmse_bias = Eigen::MatrixXd::Zero(2, ps.T);
  int all_match_count = 0;
  for (int n = 0; n < N; ++n) {
    bool all_match = true;
    for (int t = 0; t < ps.T; ++t) {
      bool occ_match = true;
      for (int k = 0; k < ps.K; ++k) {
        const int est = (est_pattern[n] >> (t * ps.K + k)) & 1;
        const bool match = est == true_alpha(n, t * ps.K + k);
        if (match) rep.accr(k, t) += 1.0;
        occ_match = occ_match && match;
      }
      if (occ_match) rep.pccr[t] += 1.0;
      all_match = all_match && occ_match;
    }
    if (all_match) ++all_match_count;
  }
  if (N > 0) {
    rep.accr /= static_cast<double>(N);
    rep.pccr /= static_cast<double>(N);
    rep.longitudinal_pccr = static_cast<double>(all_match_count) / N;
  }
  if (true_theta && est_theta) {
    if (true_theta->rows() != N || est_theta->rows() != N)
      throw std::invalid_argument("recovery_metrics: theta rows misaligned");
    for (int t = 0; t < ps.T; ++t) {
      const Eigen::VectorXd err = est_theta->col(t) - true_theta->col(t);
      rep.theta_rmse_bias(0, t) = std::sqrt(err.squaredNorm() / N);
      rep.theta_rmse_bias(1, t) = err.cwiseAbs().mean();
    }
  }
  return rep;
}

inline double bias(const Eigen::VectorXd& est, const Eigen::VectorXd& truth) {
  if (est.size() != truth.size() || est.size() == 0)
    throw std::invalid_argument("bias: misaligned inputs");
  return (est - truth).mean();
}

inline double rmse(const Eigen::VectorXd& est, const Eigen::VectorXd& truth) {
  if (est.size() != truth.size() || est.size() == 0)
    throw std::invalid_argument("rmse: misaligned inputs");
  return std::sqrt((est - truth).squaredNorm() / est.size());
}

struct FitIndices {
  double aic = 0.0, bic = 0.0;
};

inline FitIndices fit_indices(double neg2_loglik, int np, int n) {
  if (n < 1) throw std::invalid_argument("fit_indices: N must be >= 1");
  return {neg2_loglik + 2.0 * np, neg2_loglik + np * std::log(static_cast<double>(n))};
}

struct LrtResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

inline LrtResult likelihood_ratio_test(double neg2ll_restricted, double neg2ll_full, int df) {
  if (df < 1) throw std::invalid_argument("likelihood_ratio_test: df must be >= 1");
  double stat = neg2ll_restricted - neg2ll_full;
  if (stat < -1e-6)
    throw std::invalid_argument(
        "likelihood_ratio_test: restricted model fits better; check input order");
  stat = std::max(stat, 0.0);
  return {stat, stat == 0.0 ? 1.0 : chi_square_sf(stat, df)};
}

// --- tetrachoric correlation ----------------------------------------------

struct Tetrachoric {
  double r = 0.0;
  bool boundary = false;   // |r| clamped at 0.999
  bool undefined = false;  // a zero margin
};

// ML estimate under a bivariate normal with thresholds fixed at the margins;
// rectangle probabilities via the bvn_cdf approximation, 1-D golden-section
// search over r in [-0.999, 0.999].
inline Tetrachoric tetrachoric_correlation(const Eigen::Matrix2d& counts) {
  Tetrachoric out;
  const double total = counts.sum();
  if (total < 1.0 || counts.minCoeff() < 0.0)
    throw std::invalid_argument("tetrachoric: counts must be nonnegative with total >= 1");
  const double row1 = counts(1, 0) + counts(1, 1);  // first variable = 1
  const double col1 = counts(0, 1) + counts(1, 1);  // second variable = 1
  if (row1 == 0.0 || row1 == total || col1 == 0.0 || col1 == total) {
    out.undefined = true;
    return out;
  }
  // thresholds: P(X > h) = row1/total, P(Y > k) = col1/total
  const auto inv_cdf = [](double p) {
    double lo = -10.0, hi = 10.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (norm_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  const double h = inv_cdf(1.0 - row1 / total);
  const double k = inv_cdf(1.0 - col1 / total);

  const auto loglik = [&](double r) {
    const double p11 = bvn_cdf(-h, -k, r);  // X>h, Y>k by symmetry of the BVN
    const double p1_ = 1.0 - norm_cdf(h);
    const double p_1 = 1.0 - norm_cdf(k);
    const double p10 = p1_ - p11;
    const double p01 = p_1 - p11;
    const double p00 = 1.0 - p1_ - p01;
    const double floor_p = 1e-12;
    return counts(0, 0) * std::log(std::max(p00, floor_p)) +
           counts(0, 1) * std::log(std::max(p01, floor_p)) +
           counts(1, 0) * std::log(std::max(p10, floor_p)) +
           counts(1, 1) * std::log(std::max(p11, floor_p));
  };
  // golden-section search (unimodal in r)
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -0.999, b = 0.999;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = loglik(c), fd = loglik(d);
  while (b - a > 1e-8) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = loglik(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = loglik(d);
    }
  }
  out.r = 0.5 * (a + b);
  if (out.r > 0.999 - 1e-6 || out.r < -0.999 + 1e-6) {
    out.r = out.r > 0.0 ? 0.999 : -0.999;
    out.boundary = true;
  }
  return out;
}

// Model-implied tetrachoric correlations among the T*K classified attribute
// indicators (lower triangle; diagonal 1).
inline Eigen::MatrixXd attribute_correlations(const Eigen::MatrixXi& classified) {
  const int B = static_cast<int>(classified.cols());
  const int N = static_cast<int>(classified.rows());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(B, B);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < i; ++j) {
      Eigen::Matrix2d counts = Eigen::Matrix2d::Zero();
      for (int n = 0; n < N; ++n) counts(classified(n, i), classified(n, j)) += 1.0;
      const Tetrachoric t = tetrachoric_correlation(counts);
      r(i, j) = r(j, i) = t.undefined ? std::numeric_limits<double>::quiet_NaN() : t.r;
    }
  return r;
}

// Per-(attribute, occasion) mean mastery probability and thresholded counts.
struct MasterySummary {
  Eigen::MatrixXd mean_probability;  // K x T
  Eigen::MatrixXi mastered_count;    // K x T
  double threshold = 0.5;
};

inline MasterySummary mastery_summary(const PosteriorSummary& ps, double threshold = 0.5) {
  const int N = static_cast<int>(ps.attr_posterior.rows());
  MasterySummary ms;
  ms.threshold = threshold;
  ms.mean_probability = Eigen::MatrixXd::Zero(ps.K, ps.T);
  ms.mastered_count = Eigen::MatrixXi::Zero(ps.K, ps.T);
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < ps.T; ++t)
      for (int k = 0; k < ps.K; ++k) {
        const double p = ps.attr_posterior(n, t * ps.K + k);
        ms.mean_probability(k, t) += p;
        if (p >= threshold) ms.mastered_count(k, t) += 1;
      }
  if (N > 0) ms.mean_probability /= static_cast<double>(N);
  return ms;
}

}  // namespace longdina
