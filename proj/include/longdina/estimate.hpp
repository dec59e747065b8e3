#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "longdina/math.hpp"
#include "longdina/model.hpp"
#include "longdina/params.hpp"
#include "longdina/patterns.hpp"
#include "longdina/quadrature.hpp"

namespace longdina {

struct EmConfig {
  int max_cycles = 2000;
  double param_change_tol = 1e-4;
  double inner_newton_tol = 1e-7;
  int inner_newton_max = 100;
  double count_floor = 1e-6;
  bool estimate_specific_slopes = true;  // complete vs simple variant
  bool use_contraction = false;          // occasion-wise tensor contraction in the likelihood

  void validate() const {
    if (!(param_change_tol > 0.0) || !(inner_newton_tol > 0.0) || !(count_floor > 0.0))
      throw std::invalid_argument("em config: tolerances must be positive");
    if (max_cycles < 1 || inner_newton_max < 1)
      throw std::invalid_argument("em config: cycle limits must be >= 1");
  }
};

struct FitResult {
  ItemParameters items;
  StructuralParameters structural;
  double neg2_loglik = 0.0;
  int cycles = 0;
  bool converged = false;
  std::vector<double> loglik_trace;
  std::vector<std::string> warnings;
  bool specific_slopes = true;  // complete (true) vs simple (false) variant
};

// E-step sufficient statistics.
struct ExpectedCounts {
  Eigen::MatrixXd item_trials;   // U x 2, non-anchor administrations only
  Eigen::MatrixXd item_correct;  // U x 2
  std::vector<Eigen::MatrixXd> group_trials;   // per group: 2 x G (eta level x gamma node)
  std::vector<Eigen::MatrixXd> group_correct;  // per group: 2 x G
  Eigen::MatrixXd attr_exposure;  // K x P (theta 1-D grid index), pooled over occasions
  Eigen::MatrixXd attr_mastery;   // K x P
  std::vector<double> node_mass;  // theta product-grid node mass
  double loglik = 0.0;
  double max_posterior_norm_err = 0.0;  // per-person normalization check
};

namespace detail {

// Precomputed, parameter-independent view of a design.
struct Layout {
  LongitudinalDesign design;
  ItemTable tab;
  PatternSpace ps;
  int T, K, J, U, M;
  int npat;                                   // 2^{TK}
  int nocc;                                   // 2^K
  std::vector<std::vector<int>> occ_admins;   // occasion (0-based) -> non-anchor admin ids
  std::vector<std::vector<int>> group_admins; // group -> admin ids (occasion order)
  std::vector<std::vector<std::uint8_t>> eta_tab;  // admin -> eta per occasion pattern

  explicit Layout(const LongitudinalDesign& d, int cap_bits = 16)
      : design(d), tab(ItemTable::build(d)), ps(d.T, d.K, cap_bits) {
    T = d.T;
    K = d.K;
    J = d.total_items();
    U = tab.num_unique;
    M = d.num_groups();
    npat = static_cast<int>(ps.size());
    nocc = 1 << K;
    occ_admins.resize(T);
    group_admins.resize(M);
    eta_tab.resize(J);
    for (int j = 0; j < J; ++j) {
      const ItemAdmin& a = tab.admins[j];
      if (a.group >= 0)
        group_admins[a.group].push_back(j);
      else
        occ_admins[a.t - 1].push_back(j);
      eta_tab[j].resize(nocc);
      for (int p = 0; p < nocc; ++p)
        eta_tab[j][p] = (static_cast<std::uint32_t>(p) & a.qmask) == a.qmask ? 1 : 0;
    }
  }
};

// Parameter-dependent tables shared across persons within one cycle.
struct ParamTables {
  std::vector<std::array<double, 2>> p_plain;       // admin -> P(y=1|eta), non-anchor
  std::vector<std::vector<std::array<double, 2>>> p_anchor;  // admin -> per gamma node
  Eigen::MatrixXd prior_tab;  // P x 2^K: per 1-D theta value, per occasion pattern
  ThetaGrid grid;
  std::vector<double> gamma_grid, gamma_w;

  ParamTables(const Layout& lay, const ItemParameters& items, const StructuralParameters& st,
              const QuadratureSpec& quad) {
    gamma_grid = quad.gamma_grid();
    gamma_w = quad.gamma_weights();
    const int G = static_cast<int>(gamma_grid.size());
    p_plain.resize(lay.J);
    p_anchor.resize(lay.J);
    for (int j = 0; j < lay.J; ++j) {
      const ItemAdmin& a = lay.tab.admins[j];
      if (a.group < 0) {
        for (int e = 0; e < 2; ++e)
          p_plain[j][e] = response_probability(items.lambda0[a.unique], items.lambdaK[a.unique], e);
      } else {
        p_anchor[j].resize(G);
        const double s = items.slope[a.group];
        for (int g = 0; g < G; ++g)
          for (int e = 0; e < 2; ++e)
            p_anchor[j][g][e] = response_probability(items.lambda0[a.unique],
                                                     items.lambdaK[a.unique], e, s, gamma_grid[g]);
      }
    }
    grid = make_theta_grid(quad, st);
    const int P = grid.points;
    prior_tab.resize(P, lay.nocc);
    for (int x = 0; x < P; ++x) {
      for (int p = 0; p < lay.nocc; ++p) {
        double v = 1.0;
        for (int k = 0; k < lay.K; ++k) {
          const double pk = attribute_mastery_probability(st.delta[k], st.beta[k], grid.values[x]);
          v *= (p >> k) & 1 ? pk : 1.0 - pk;
        }
        prior_tab(x, p) = v;
      }
    }
  }
};

// Per-person intermediate quantities of the factorized likelihood.
struct PersonFactors {
  std::vector<std::vector<double>> occ_factor;   // T x 2^K, non-anchor product
  std::vector<std::vector<double>> group_factor; // M x 2^{|m|}, gamma integrated out
  // M x 2^{|m|} x G: unnormalized gamma posterior (weights * member likelihood)
  std::vector<std::vector<std::vector<double>>> group_gamma;
  std::vector<double> pattern_lik;  // 2^{TK}
};

inline int pf_eta(const Layout& lay, int admin, int occ_pattern) {
  return lay.eta_tab[admin][occ_pattern];
}

// eta tuple of group m's administrations under full pattern a
inline int group_tuple(const Layout& lay, int m, std::uint32_t a) {
  const auto& admins = lay.group_admins[m];
  int tup = 0;
  for (size_t s = 0; s < admins.size(); ++s) {
    const ItemAdmin& ad = lay.tab.admins[admins[s]];
    if (lay.eta_tab[admins[s]][lay.ps.occasion_pattern(a, ad.t)]) tup |= 1 << s;
  }
  return tup;
}

inline void person_factors(const Layout& lay, const ParamTables& pt,
                           const Eigen::MatrixXi& y, int n, PersonFactors& pf) {
  const int G = static_cast<int>(pt.gamma_grid.size());
  pf.occ_factor.assign(lay.T, std::vector<double>(lay.nocc, 1.0));
  for (int t = 0; t < lay.T; ++t) {
    for (int j : lay.occ_admins[t]) {
      const int yv = y(n, j);
      if (yv < 0) continue;
      for (int p = 0; p < lay.nocc; ++p) {
        const double pr = pt.p_plain[j][pf_eta(lay, j, p)];
        pf.occ_factor[t][p] *= yv ? pr : 1.0 - pr;
      }
    }
  }
  pf.group_factor.assign(lay.M, {});
  pf.group_gamma.assign(lay.M, {});
  for (int m = 0; m < lay.M; ++m) {
    const auto& admins = lay.group_admins[m];
    const int S = static_cast<int>(admins.size());
    const int ntup = 1 << S;
    pf.group_factor[m].assign(ntup, 0.0);
    pf.group_gamma[m].assign(ntup, std::vector<double>(G));
    for (int tup = 0; tup < ntup; ++tup) {
      double total = 0.0;
      for (int g = 0; g < G; ++g) {
        double v = pt.gamma_w[g];
        for (int s = 0; s < S; ++s) {
          const int j = admins[s];
          const int yv = y(n, j);
          if (yv < 0) continue;
          const double pr = pt.p_anchor[j][g][(tup >> s) & 1];
          v *= yv ? pr : 1.0 - pr;
        }
        pf.group_gamma[m][tup][g] = v;
        total += v;
      }
      pf.group_factor[m][tup] = total;
    }
  }
  pf.pattern_lik.assign(lay.npat, 0.0);
  for (int a = 0; a < lay.npat; ++a) {
    double L = 1.0;
    for (int t = 1; t <= lay.T; ++t)
      L *= pf.occ_factor[t - 1][lay.ps.occasion_pattern(a, t)];
    for (int m = 0; m < lay.M; ++m)
      L *= pf.group_factor[m][group_tuple(lay, m, a)];
    pf.pattern_lik[a] = L;
  }
}

// Per-person marginal likelihood sum_node w sum_a prior*L, plus the joint
// posterior over (node, pattern) when `joint` is non-null.
inline double person_marginal(const Layout& lay, const ParamTables& pt, const PersonFactors& pf,
                              Eigen::MatrixXd* joint) {
  const int nnode = pt.grid.num_nodes();
  double total = 0.0;
  if (joint) joint->resize(nnode, lay.npat);
  std::vector<int> coords(lay.T);
  for (int node = 0; node < nnode; ++node) {
    int rem = node;
    for (int t = 0; t < lay.T; ++t) {
      coords[t] = rem % pt.grid.points;
      rem /= pt.grid.points;
    }
    const double wn = pt.grid.weights[node];
    for (int a = 0; a < lay.npat; ++a) {
      double pr = wn;
      for (int t = 1; t <= lay.T; ++t)
        pr *= pt.prior_tab(coords[t - 1], lay.ps.occasion_pattern(a, t));
      const double v = pr * pf.pattern_lik[a];
      if (joint) (*joint)(node, a) = v;
      total += v;
    }
  }
  return total;
}

// Same marginal via occasion-wise contraction of sum_a prod_t prior * L.
inline double person_marginal_contracted(const Layout& lay, const ParamTables& pt,
                                         const PersonFactors& pf) {
  const int P = pt.grid.points;
  // cur: [grid-index block over processed occasions] x [remaining occasion patterns]
  std::vector<double> cur(pf.pattern_lik);
  int done_nodes = 1;
  int rest = lay.npat;
  for (int t = 0; t < lay.T; ++t) {
    rest /= lay.nocc;
    std::vector<double> next(static_cast<size_t>(done_nodes) * P * rest, 0.0);
    for (int r = 0; r < rest; ++r)
      for (int p = 0; p < lay.nocc; ++p)
        for (int x = 0; x < P; ++x) {
          const double c = pt.prior_tab(x, p);
          double* dst = &next[(static_cast<size_t>(r) * P + x) * done_nodes];
          const double* src = &cur[(static_cast<size_t>(r) * lay.nocc + p) * done_nodes];
          for (int d = 0; d < done_nodes; ++d) dst[d] += c * src[d];
        }
    cur.swap(next);
    done_nodes *= P;
  }
  double total = 0.0;
  for (int node = 0; node < done_nodes; ++node) total += pt.grid.weights[node] * cur[node];
  return total;
}

}  // namespace detail

// Likelihood of one person's responses for every longitudinal pattern, with
// the specific dimensions integrated out per anchor group. Missing cells
// contribute a factor of 1.
inline std::vector<double> person_pattern_likelihood(const Eigen::MatrixXi& responses, int person,
                                                     const LongitudinalDesign& design,
                                                     const ItemParameters& items,
                                                     const StructuralParameters& structural,
                                                     const QuadratureSpec& quad) {
  detail::Layout lay(design);
  detail::ParamTables pt(lay, items, structural, quad);
  detail::PersonFactors pf;
  detail::person_factors(lay, pt, responses, person, pf);
  return pf.pattern_lik;
}

inline double marginal_loglikelihood(const ResponseMatrix& data, const LongitudinalDesign& design,
                                     const ItemParameters& items,
                                     const StructuralParameters& structural,
                                     const QuadratureSpec& quad, bool use_contraction = false) {
  if (data.items() != design.total_items())
    throw std::invalid_argument("marginal_loglikelihood: data width does not match design");
  detail::Layout lay(design);
  detail::ParamTables pt(lay, items, structural, quad);
  detail::PersonFactors pf;
  double ll = 0.0;
  for (int n = 0; n < data.persons(); ++n) {
    detail::person_factors(lay, pt, data.y, n, pf);
    // scale by the largest pattern likelihood to guard the log
    double scale = 0.0;
    for (double v : pf.pattern_lik) scale = std::max(scale, v);
    if (scale <= 0.0) throw std::runtime_error("zero likelihood for person " + std::to_string(n));
    for (double& v : pf.pattern_lik) v /= scale;
    const double m = use_contraction ? detail::person_marginal_contracted(lay, pt, pf)
                                     : detail::person_marginal(lay, pt, pf, nullptr);
    ll += std::log(m) + std::log(scale);
  }
  return ll;
}

// Verification oracle: direct sum over the full joint (theta, gamma) product
// grid and all patterns, no per-group factorization.
inline double brute_force_loglikelihood(const ResponseMatrix& data,
                                        const LongitudinalDesign& design,
                                        const ItemParameters& items,
                                        const StructuralParameters& structural,
                                        const QuadratureSpec& quad) {
  detail::Layout lay(design, 12);
  detail::ParamTables pt(lay, items, structural, quad);
  const int G = static_cast<int>(pt.gamma_grid.size());
  const int nnode = pt.grid.num_nodes();
  long long gcombos = 1;
  for (int m = 0; m < lay.M; ++m) {
    gcombos *= G;
    if (gcombos * static_cast<long long>(nnode) * lay.npat > 200'000'000LL)
      throw std::length_error("brute_force_loglikelihood: joint grid too large");
  }
  std::vector<int> coords(lay.T), gidx(lay.M);
  double ll = 0.0;
  for (int n = 0; n < data.persons(); ++n) {
    double lik = 0.0;
    for (long long gc = 0; gc < gcombos; ++gc) {
      long long rem = gc;
      double wg = 1.0;
      for (int m = 0; m < lay.M; ++m) {
        gidx[m] = static_cast<int>(rem % G);
        rem /= G;
        wg *= pt.gamma_w[gidx[m]];
      }
      for (int node = 0; node < nnode; ++node) {
        int nr = node;
        for (int t = 0; t < lay.T; ++t) {
          coords[t] = nr % pt.grid.points;
          nr /= pt.grid.points;
        }
        for (int a = 0; a < lay.npat; ++a) {
          double pr = pt.grid.weights[node] * wg;
          for (int t = 1; t <= lay.T; ++t)
            pr *= pt.prior_tab(coords[t - 1], lay.ps.occasion_pattern(a, t));
          double L = 1.0;
          for (int j = 0; j < lay.J; ++j) {
            const int yv = data.y(n, j);
            if (yv < 0) continue;
            const ItemAdmin& ad = lay.tab.admins[j];
            const int eta = lay.eta_tab[j][lay.ps.occasion_pattern(a, ad.t)];
            const double p = ad.group < 0 ? pt.p_plain[j][eta]
                                          : pt.p_anchor[j][gidx[ad.group]][eta];
            L *= yv ? p : 1.0 - p;
          }
          lik += pr * L;
        }
      }
    }
    ll += std::log(lik);
  }
  return ll;
}

inline ExpectedCounts e_step(const ResponseMatrix& data, const LongitudinalDesign& design,
                             const ItemParameters& items, const StructuralParameters& structural,
                             const QuadratureSpec& quad) {
  detail::Layout lay(design);
  detail::ParamTables pt(lay, items, structural, quad);
  const int G = static_cast<int>(pt.gamma_grid.size());
  const int nnode = pt.grid.num_nodes();
  const int P = pt.grid.points;

  ExpectedCounts ec;
  ec.item_trials = Eigen::MatrixXd::Zero(lay.U, 2);
  ec.item_correct = Eigen::MatrixXd::Zero(lay.U, 2);
  ec.group_trials.assign(lay.M, Eigen::MatrixXd::Zero(2, G));
  ec.group_correct.assign(lay.M, Eigen::MatrixXd::Zero(2, G));
  ec.attr_exposure = Eigen::MatrixXd::Zero(lay.K, P);
  ec.attr_mastery = Eigen::MatrixXd::Zero(lay.K, P);
  ec.node_mass.assign(nnode, 0.0);

  // joint mass over (node, pattern) aggregated across persons; attribute and
  // density statistics are contractions of this table
  Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(nnode, lay.npat);

  detail::PersonFactors pf;
  Eigen::MatrixXd joint;
  std::vector<double> pat_post(lay.npat);
  std::vector<std::vector<double>> occ_mass(lay.T, std::vector<double>(lay.nocc));

  for (int n = 0; n < data.persons(); ++n) {
    detail::person_factors(lay, pt, data.y, n, pf);
    double scale = 0.0;
    for (double v : pf.pattern_lik) scale = std::max(scale, v);
    if (scale <= 0.0) throw std::runtime_error("zero likelihood for person " + std::to_string(n));
    for (double& v : pf.pattern_lik) v /= scale;
    const double lik = detail::person_marginal(lay, pt, pf, &joint);
    ec.loglik += std::log(lik) + std::log(scale);
    joint /= lik;
    ec.max_posterior_norm_err = std::max(ec.max_posterior_norm_err, std::fabs(joint.sum() - 1.0));
    agg += joint;

    // pattern marginal and per-occasion marginals
    for (int a = 0; a < lay.npat; ++a) pat_post[a] = joint.col(a).sum();
    for (int t = 0; t < lay.T; ++t) std::fill(occ_mass[t].begin(), occ_mass[t].end(), 0.0);
    for (int a = 0; a < lay.npat; ++a)
      for (int t = 1; t <= lay.T; ++t)
        occ_mass[t - 1][lay.ps.occasion_pattern(a, t)] += pat_post[a];

    // non-anchor item counts
    for (int t = 0; t < lay.T; ++t) {
      for (int j : lay.occ_admins[t]) {
        const int yv = data.y(n, j);
        if (yv < 0) continue;
        const int u = lay.tab.admins[j].unique;
        for (int p = 0; p < lay.nocc; ++p) {
          const int e = lay.eta_tab[j][p];
          ec.item_trials(u, e) += occ_mass[t][p];
          if (yv) ec.item_correct(u, e) += occ_mass[t][p];
        }
      }
    }

    // anchor-group counts: distribute eta-tuple mass over the gamma posterior
    for (int m = 0; m < lay.M; ++m) {
      const auto& admins = lay.group_admins[m];
      const int ntup = 1 << static_cast<int>(admins.size());
      std::vector<double> tup_mass(ntup, 0.0);
      for (int a = 0; a < lay.npat; ++a) tup_mass[detail::group_tuple(lay, m, a)] += pat_post[a];
      for (int tup = 0; tup < ntup; ++tup) {
        if (tup_mass[tup] <= 0.0) continue;
        const double denom = pf.group_factor[m][tup];
        for (int g = 0; g < G; ++g) {
          const double w = tup_mass[tup] * pf.group_gamma[m][tup][g] / denom;
          for (size_t s = 0; s < admins.size(); ++s) {
            const int yv = data.y(n, admins[s]);
            if (yv < 0) continue;
            const int e = (tup >> s) & 1;
            ec.group_trials[m](e, g) += w;
            if (yv) ec.group_correct[m](e, g) += w;
          }
        }
      }
    }
  }

  // attribute and density statistics from the aggregated joint
  std::vector<int> coords(lay.T);
  for (int node = 0; node < nnode; ++node) {
    int rem = node;
    for (int t = 0; t < lay.T; ++t) {
      coords[t] = rem % P;
      rem /= P;
    }
    for (int a = 0; a < lay.npat; ++a) {
      const double mass = agg(node, a);
      if (mass == 0.0) continue;
      ec.node_mass[node] += mass;
      for (int t = 1; t <= lay.T; ++t) {
        const std::uint32_t p = lay.ps.occasion_pattern(a, t);
        for (int k = 0; k < lay.K; ++k) {
          ec.attr_exposure(k, coords[t - 1]) += mass;
          if ((p >> k) & 1) ec.attr_mastery(k, coords[t - 1]) += mass;
        }
      }
    }
  }
  return ec;
}

namespace detail {

// Weighted Bernoulli log-likelihood, gradient, Hessian for cells with linear
// predictor x'w. Cells: (design vector, trials, correct).
struct LogisticCells {
  std::vector<Eigen::VectorXd> x;
  std::vector<double> trials, correct;

  double objective(const Eigen::VectorXd& w) const {
    double obj = 0.0;
    for (size_t c = 0; c < x.size(); ++c) {
      if (trials[c] <= 0.0) continue;
      const double lin = x[c].dot(w);
      // r*log(p) + (n-r)*log(1-p) = r*lin - n*log(1+exp(lin))
      const double softplus = lin > 0.0 ? lin + std::log1p(std::exp(-lin))
                                        : std::log1p(std::exp(lin));
      obj += correct[c] * lin - trials[c] * softplus;
    }
    return obj;
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
    for (size_t c = 0; c < x.size(); ++c) {
      if (trials[c] <= 0.0) continue;
      g += (correct[c] - trials[c] * logistic(x[c].dot(w))) * x[c];
    }
    return g;
  }
  Eigen::MatrixXd hessian(const Eigen::VectorXd& w) const {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(w.size(), w.size());
    for (size_t c = 0; c < x.size(); ++c) {
      if (trials[c] <= 0.0) continue;
      const double p = logistic(x[c].dot(w));
      h -= trials[c] * p * (1.0 - p) * x[c] * x[c].transpose();
    }
    return h;
  }
};

// Projected Newton with backtracking for small logistic blocks. `lower`
// holds per-coordinate lower bounds (-inf when unbounded). Returns false on
// non-convergence; w holds the best point found either way.
inline bool newton_maximize(const LogisticCells& cells, Eigen::VectorXd& w,
                            const Eigen::VectorXd& lower, double tol, int max_iter) {
  const int d = static_cast<int>(w.size());
  for (int i = 0; i < d; ++i) w[i] = std::max(w[i], lower[i]);
  double obj = cells.objective(w);
  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::VectorXd g = cells.gradient(w);
    // active set: at a lower bound with outward-pointing gradient
    std::vector<bool> active(d, false);
    bool any_free = false;
    for (int i = 0; i < d; ++i) {
      active[i] = std::isfinite(lower[i]) && w[i] <= lower[i] && g[i] < 0.0;
      any_free = any_free || !active[i];
    }
    double gnorm = 0.0;
    for (int i = 0; i < d; ++i)
      if (!active[i]) gnorm = std::max(gnorm, std::fabs(g[i]));
    if (gnorm < tol || !any_free) return true;

    Eigen::MatrixXd h = cells.hessian(w);
    for (int i = 0; i < d; ++i)
      if (active[i]) {
        h.row(i).setZero();
        h.col(i).setZero();
        h(i, i) = -1.0;
        g[i] = 0.0;
      }
    // damp toward steepest ascent if the solve is unreliable
    Eigen::VectorXd step = (-h).ldlt().solve(g);
    if (!step.allFinite() || step.dot(g) <= 0.0) step = g;
    double alpha = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 50; ++ls, alpha *= 0.5) {
      Eigen::VectorXd cand = w + alpha * step;
      for (int i = 0; i < d; ++i) cand[i] = std::max(cand[i], lower[i]);
      const double cobj = cells.objective(cand);
      if (cobj >= obj - 1e-12) {
        w = cand;
        obj = cobj;
        improved = true;
        break;
      }
    }
    if (!improved) return true;  // no ascent direction left; treat as stationary
  }
  return false;
}

// Expected log of the normalized grid prior as a function of the free
// density parameters; keeping the normalization term makes each EM cycle
// exactly monotone on the discretized model.
struct DensityObjective {
  const ThetaGrid* grid;
  const std::vector<double>* mass;
  int T;

  // v = [mu_2..mu_T, vech entries of L with L(0,0) fixed at 1, diagonal in log scale]
  static int dim(int T) { return (T - 1) + T * (T + 1) / 2 - 1; }

  static Eigen::VectorXd pack(const StructuralParameters& st) {
    const int T = static_cast<int>(st.mu.size());
    Eigen::LLT<Eigen::MatrixXd> llt(st.sigma);
    const Eigen::MatrixXd L = llt.matrixL();
    Eigen::VectorXd v(dim(T));
    int p = 0;
    for (int t = 1; t < T; ++t) v[p++] = st.mu[t];
    for (int r = 1; r < T; ++r)
      for (int c = 0; c <= r; ++c) v[p++] = c == r ? std::log(L(r, c)) : L(r, c);
    return v;
  }

  static void unpack(const Eigen::VectorXd& v, int T, Eigen::VectorXd& mu, Eigen::MatrixXd& sigma) {
    mu = Eigen::VectorXd::Zero(T);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(T, T);
    L(0, 0) = 1.0;
    int p = 0;
    for (int t = 1; t < T; ++t) mu[t] = v[p++];
    for (int r = 1; r < T; ++r)
      for (int c = 0; c <= r; ++c) L(r, c) = c == r ? std::exp(v[p++]) : v[p++];
    sigma = L * L.transpose();
  }

  double operator()(const Eigen::VectorXd& v) const {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    unpack(v, T, mu, sigma);
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const int nnode = grid->num_nodes();
    std::vector<double> q(nnode);
    double qmin = std::numeric_limits<double>::infinity();
    Eigen::VectorXd z;
    for (int node = 0; node < nnode; ++node) {
      z = llt.matrixL().solve(grid->nodes.row(node).transpose() - mu);
      q[node] = 0.5 * z.squaredNorm();
      qmin = std::min(qmin, q[node]);
    }
    double zsum = 0.0;
    for (int node = 0; node < nnode; ++node) zsum += std::exp(-(q[node] - qmin));
    const double logz = std::log(zsum) - qmin;
    double obj = 0.0, wtot = 0.0;
    for (int node = 0; node < nnode; ++node) {
      obj -= (*mass)[node] * q[node];
      wtot += (*mass)[node];
    }
    return obj - wtot * logz;
  }
};

// Compact BFGS with numerical gradient for the low-dimensional density step.
template <typename F>
inline Eigen::VectorXd bfgs_maximize(const F& f, Eigen::VectorXd x, int max_iter = 200,
                                     double gtol = 1e-9) {
  const int d = static_cast<int>(x.size());
  const double h = 1e-6;
  auto grad = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd g(d), e = p;
    for (int i = 0; i < d; ++i) {
      e[i] = p[i] + h;
      const double fp = f(e);
      e[i] = p[i] - h;
      const double fm = f(e);
      e[i] = p[i];
      g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
  };
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(d, d);
  double fx = f(x);
  Eigen::VectorXd g = grad(x);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < gtol) break;
    Eigen::VectorXd p = Hinv * g;
    if (p.dot(g) <= 0.0) p = g;
    double alpha = 1.0;
    Eigen::VectorXd xn;
    double fn = -std::numeric_limits<double>::infinity();
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      xn = x + alpha * p;
      fn = f(xn);
      if (fn > fx + 1e-4 * alpha * p.dot(g)) {
        ok = true;
        break;
      }
    }
    if (!ok) break;
    Eigen::VectorXd gn = grad(xn);
    Eigen::VectorXd s = xn - x, yv = g - gn;  // ascent: y = -(gn - g)
    const double sy = s.dot(yv);
    if (sy > 1e-12) {
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
      Hinv = (I - s * yv.transpose() / sy) * Hinv * (I - yv * s.transpose() / sy) +
             s * s.transpose() / sy;
    }
    x = xn;
    fx = fn;
    g = gn;
  }
  return x;
}

}  // namespace detail

// Analytic gradient of the expected complete-data objective for one anchor
// group at (lambda0, lambdaK, slope); by the Fisher identity this equals the
// gradient of the marginal log-likelihood in those coordinates.
inline Eigen::Vector3d anchor_group_gradient(const ExpectedCounts& ec, int group,
                                             const QuadratureSpec& quad, double lambda0,
                                             double lambdaK, double slope) {
  const auto gg = quad.gamma_grid();
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  for (int e = 0; e < 2; ++e)
    for (size_t gi = 0; gi < gg.size(); ++gi) {
      const double n = ec.group_trials[group](e, gi);
      if (n <= 0.0 && ec.group_correct[group](e, gi) <= 0.0) continue;
      const double r = ec.group_correct[group](e, gi);
      const double resid = r - n * logistic(lambda0 + lambdaK * e + slope * gg[gi]);
      g[0] += resid;
      g[1] += resid * e;
      g[2] += resid * gg[gi];
    }
  return g;
}

// Same identity for one attribute block at (delta_k, beta_k).
inline Eigen::Vector2d attribute_block_gradient(const ExpectedCounts& ec, int k,
                                                const QuadratureSpec& quad, double delta,
                                                double beta) {
  const auto xs = quad.theta_grid();
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (size_t xi = 0; xi < xs.size(); ++xi) {
    const double n = ec.attr_exposure(k, xi);
    if (n <= 0.0) continue;
    const double resid = ec.attr_mastery(k, xi) - n * logistic(delta * xs[xi] + beta);
    g[0] += resid * xs[xi];
    g[1] += resid;
  }
  return g;
}

inline void m_step(const ExpectedCounts& ec, const LongitudinalDesign& design,
                   const QuadratureSpec& quad, const EmConfig& cfg, ItemParameters& items,
                   StructuralParameters& structural, std::vector<std::string>* warnings) {
  const ItemTable tab = ItemTable::build(design);
  const int U = tab.num_unique, M = design.num_groups(), K = design.K;
  const int T = static_cast<int>(structural.mu.size());
  const double eps = cfg.count_floor;
  const auto gg = quad.gamma_grid();
  const auto xs = quad.theta_grid();

  std::vector<bool> is_anchor_unique(U, false);
  for (int m = 0; m < M; ++m) is_anchor_unique[tab.group_unique[m]] = true;

  // (a) non-anchor items: closed form with count floor
  for (int u = 0; u < U; ++u) {
    if (is_anchor_unique[u]) continue;
    const double p0 = (ec.item_correct(u, 0) + eps) / (ec.item_trials(u, 0) + 2.0 * eps);
    const double p1 = (ec.item_correct(u, 1) + eps) / (ec.item_trials(u, 1) + 2.0 * eps);
    items.lambda0[u] = logit(p0);
    items.lambdaK[u] = std::max(0.0, logit(p1) - logit(p0));
  }

  // (b) anchor groups: Newton on (lambda0, lambdaK[, slope])
  for (int m = 0; m < M; ++m) {
    const int u = tab.group_unique[m];
    const bool with_slope = cfg.estimate_specific_slopes;
    const int d = with_slope ? 3 : 2;
    detail::LogisticCells cells;
    for (int e = 0; e < 2; ++e)
      for (size_t gi = 0; gi < gg.size(); ++gi) {
        Eigen::VectorXd x(d);
        x[0] = 1.0;
        x[1] = e;
        if (with_slope) x[2] = gg[gi];
        cells.x.push_back(x);
        cells.trials.push_back(ec.group_trials[m](e, gi));
        cells.correct.push_back(ec.group_correct[m](e, gi));
      }
    Eigen::VectorXd w(d), lower(d);
    w[0] = items.lambda0[u];
    w[1] = items.lambdaK[u];
    lower[0] = -std::numeric_limits<double>::infinity();
    lower[1] = 0.0;
    if (with_slope) {
      w[2] = items.slope[m];
      lower[2] = 0.0;
    }
    if (!detail::newton_maximize(cells, w, lower, cfg.inner_newton_tol, cfg.inner_newton_max)) {
      if (warnings)
        warnings->push_back("anchor group " + std::to_string(m + 1) +
                            ": inner Newton did not converge; keeping previous values");
      continue;
    }
    items.lambda0[u] = w[0];
    items.lambdaK[u] = w[1];
    if (with_slope) items.slope[m] = w[2];
  }

  // (c) attribute blocks: Newton on (delta_k, beta_k), delta clamped positive
  for (int k = 0; k < K; ++k) {
    detail::LogisticCells cells;
    for (size_t xi = 0; xi < xs.size(); ++xi) {
      Eigen::VectorXd x(2);
      x[0] = xs[xi];
      x[1] = 1.0;
      cells.x.push_back(x);
      cells.trials.push_back(ec.attr_exposure(k, xi));
      cells.correct.push_back(ec.attr_mastery(k, xi));
    }
    Eigen::VectorXd w(2), lower(2);
    w << structural.delta[k], structural.beta[k];
    lower << 1e-6, -std::numeric_limits<double>::infinity();
    if (!detail::newton_maximize(cells, w, lower, cfg.inner_newton_tol, cfg.inner_newton_max)) {
      if (warnings)
        warnings->push_back("attribute " + std::to_string(k + 1) +
                            ": inner Newton did not converge; keeping previous values");
      continue;
    }
    structural.delta[k] = std::max(w[0], 1e-6);
    structural.beta[k] = w[1];
  }

  // (d) density: maximize the expected normalized-grid log prior over the
  // free mean components and Cholesky factor (sigma_11 fixed by L(0,0)=1)
  if (T > 1) {
    ThetaGrid grid = make_theta_grid(quad, structural);
    detail::DensityObjective obj{&grid, &ec.node_mass, T};
    Eigen::VectorXd v0 = detail::DensityObjective::pack(structural);
    const double f0 = obj(v0);
    Eigen::VectorXd v = detail::bfgs_maximize(obj, v0);
    if (obj(v) >= f0) {
      detail::DensityObjective::unpack(v, T, structural.mu, structural.sigma);
    } else if (warnings) {
      warnings->push_back("density step: optimizer failed to improve; keeping previous values");
    }
  }
}

namespace detail {

inline Eigen::VectorXd pack_all(const ItemParameters& items, const StructuralParameters& st) {
  const int T = static_cast<int>(st.mu.size());
  std::vector<double> v;
  for (int i = 0; i < items.lambda0.size(); ++i) v.push_back(items.lambda0[i]);
  for (int i = 0; i < items.lambdaK.size(); ++i) v.push_back(items.lambdaK[i]);
  for (int i = 0; i < items.slope.size(); ++i) v.push_back(items.slope[i]);
  for (int i = 0; i < st.delta.size(); ++i) v.push_back(st.delta[i]);
  for (int i = 0; i < st.beta.size(); ++i) v.push_back(st.beta[i]);
  for (int t = 1; t < T; ++t) v.push_back(st.mu[t]);
  for (int r = 0; r < T; ++r)
    for (int c = 0; c <= r; ++c)
      if (!(r == 0 && c == 0)) v.push_back(st.sigma(r, c));
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
}

}  // namespace detail

inline ItemParameters default_item_init(const LongitudinalDesign& design) {
  const ItemTable tab = ItemTable::build(design);
  ItemParameters items;
  items.lambda0.setConstant(tab.num_unique, logit(0.2));
  items.lambdaK.setConstant(tab.num_unique, logit(0.8) - logit(0.2));
  items.slope.setConstant(design.num_groups(), 0.5);
  return items;
}

inline StructuralParameters default_structural_init(const LongitudinalDesign& design) {
  StructuralParameters st;
  st.delta.setConstant(design.K, 1.0);
  st.beta.setZero(design.K);
  st.mu.setZero(design.T);
  st.sigma = Eigen::MatrixXd::Constant(design.T, design.T, 0.5);
  st.sigma.diagonal().setOnes();
  return st;
}

inline FitResult fit_em(const ResponseMatrix& data, const LongitudinalDesign& design,
                        const QuadratureSpec& quad, const EmConfig& cfg,
                        const ItemParameters* init_items = nullptr,
                        const StructuralParameters* init_structural = nullptr) {
  cfg.validate();
  quad.validate();
  if (data.persons() == 0) throw std::invalid_argument("fit_em: empty data");
  if (data.items() != design.total_items())
    throw std::invalid_argument("fit_em: data width does not match design");

  FitResult fit;
  fit.items = init_items ? *init_items : default_item_init(design);
  fit.structural = init_structural ? *init_structural : default_structural_init(design);
  fit.specific_slopes = cfg.estimate_specific_slopes;
  if (!cfg.estimate_specific_slopes) fit.items.slope.setZero();

  Eigen::VectorXd prev = detail::pack_all(fit.items, fit.structural);
  for (int cycle = 0; cycle < cfg.max_cycles; ++cycle) {
    ExpectedCounts ec = e_step(data, design, fit.items, fit.structural, quad);
    fit.loglik_trace.push_back(ec.loglik);
    m_step(ec, design, quad, cfg, fit.items, fit.structural, &fit.warnings);
    fit.cycles = cycle + 1;
    Eigen::VectorXd cur = detail::pack_all(fit.items, fit.structural);
    const double change = (cur - prev).lpNorm<Eigen::Infinity>();
    prev = cur;
    if (change < cfg.param_change_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.neg2_loglik =
      -2.0 * marginal_loglikelihood(data, design, fit.items, fit.structural, quad,
                                    cfg.use_contraction);
  return fit;
}

// --- finite-difference standard errors -------------------------------------

struct StandardErrors {
  std::vector<std::string> names;
  Eigen::VectorXd se;            // NaN where the Hessian was not usable
  bool hessian_pd = false;
};

namespace detail {

struct FreeParamMap {
  std::vector<std::string> names;
  // pack/unpack between the free vector and (items, structural)
  std::function<Eigen::VectorXd(const ItemParameters&, const StructuralParameters&)> pack;
  std::function<void(const Eigen::VectorXd&, ItemParameters&, StructuralParameters&)> unpack;
};

inline FreeParamMap make_free_map(const LongitudinalDesign& design, bool with_slopes) {
  const ItemTable tab = ItemTable::build(design);
  const int U = tab.num_unique, M = design.num_groups(), K = design.K, T = design.T;
  FreeParamMap fm;
  for (int u = 0; u < U; ++u) {
    fm.names.push_back("lambda0[" + std::to_string(u + 1) + "]");
    fm.names.push_back("lambdaK[" + std::to_string(u + 1) + "]");
  }
  if (with_slopes)
    for (int m = 0; m < M; ++m) fm.names.push_back("s[" + std::to_string(m + 1) + "]");
  for (int k = 0; k < K; ++k) fm.names.push_back("delta[" + std::to_string(k + 1) + "]");
  for (int k = 0; k < K; ++k) fm.names.push_back("beta[" + std::to_string(k + 1) + "]");
  for (int t = 1; t < T; ++t) fm.names.push_back("mu[" + std::to_string(t + 1) + "]");
  for (int r = 0; r < T; ++r)
    for (int c = 0; c <= r; ++c)
      if (!(r == 0 && c == 0))
        fm.names.push_back("sigma[" + std::to_string(r + 1) + "," + std::to_string(c + 1) + "]");

  fm.pack = [U, M, K, T, with_slopes](const ItemParameters& it, const StructuralParameters& st) {
    std::vector<double> v;
    for (int u = 0; u < U; ++u) {
      v.push_back(it.lambda0[u]);
      v.push_back(it.lambdaK[u]);
    }
    if (with_slopes)
      for (int m = 0; m < M; ++m) v.push_back(it.slope[m]);
    for (int k = 0; k < K; ++k) v.push_back(st.delta[k]);
    for (int k = 0; k < K; ++k) v.push_back(st.beta[k]);
    for (int t = 1; t < T; ++t) v.push_back(st.mu[t]);
    for (int r = 0; r < T; ++r)
      for (int c = 0; c <= r; ++c)
        if (!(r == 0 && c == 0)) v.push_back(st.sigma(r, c));
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
  };
  fm.unpack = [U, M, K, T, with_slopes](const Eigen::VectorXd& v, ItemParameters& it,
                                        StructuralParameters& st) {
    int p = 0;
    for (int u = 0; u < U; ++u) {
      it.lambda0[u] = v[p++];
      it.lambdaK[u] = v[p++];
    }
    if (with_slopes)
      for (int m = 0; m < M; ++m) it.slope[m] = v[p++];
    for (int k = 0; k < K; ++k) st.delta[k] = v[p++];
    for (int k = 0; k < K; ++k) st.beta[k] = v[p++];
    for (int t = 1; t < T; ++t) st.mu[t] = v[p++];
    for (int r = 0; r < T; ++r)
      for (int c = 0; c <= r; ++c)
        if (!(r == 0 && c == 0)) {
          st.sigma(r, c) = v[p];
          st.sigma(c, r) = v[p];
          ++p;
        }
  };
  return fm;
}

// Central finite-difference Hessian of a scalar function.
template <typename F>
inline Eigen::MatrixXd fd_hessian(const F& f, const Eigen::VectorXd& x, double step) {
  const int d = static_cast<int>(x.size());
  Eigen::MatrixXd H(d, d);
  Eigen::VectorXd e = x;
  const double f0 = f(x);
  for (int i = 0; i < d; ++i) {
    e = x;
    e[i] = x[i] + step;
    const double fp = f(e);
    e[i] = x[i] - step;
    const double fm = f(e);
    H(i, i) = (fp - 2.0 * f0 + fm) / (step * step);
    for (int j = i + 1; j < d; ++j) {
      e = x;
      e[i] += step;
      e[j] += step;
      const double fpp = f(e);
      e[j] -= 2.0 * step;
      const double fpm = f(e);
      e[i] -= 2.0 * step;
      const double fmm = f(e);
      e[j] += 2.0 * step;
      const double fmp = f(e);
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
    }
  }
  return H;
}

}  // namespace detail

// SEs from the inverse negative finite-difference Hessian of the marginal
// log-likelihood at the MLE; fixed parameters (mu_1, sigma_11) are excluded.
inline StandardErrors standard_errors_fd(const ResponseMatrix& data,
                                         const LongitudinalDesign& design, const FitResult& fit,
                                         const QuadratureSpec& quad, double step = 1e-4) {
  const bool with_slopes = fit.specific_slopes && fit.items.slope.size() > 0;
  detail::FreeParamMap fm = detail::make_free_map(design, with_slopes);
  ItemParameters it = fit.items;
  StructuralParameters st = fit.structural;
  auto f = [&](const Eigen::VectorXd& v) {
    ItemParameters it2 = it;
    StructuralParameters st2 = st;
    fm.unpack(v, it2, st2);
    Eigen::LLT<Eigen::MatrixXd> llt(st2.sigma);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    return marginal_loglikelihood(data, design, it2, st2, quad);
  };
  const Eigen::VectorXd x = fm.pack(it, st);
  const Eigen::MatrixXd H = detail::fd_hessian(f, x, step);
  StandardErrors out;
  out.names = fm.names;
  const int d = static_cast<int>(x.size());
  out.se = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::quiet_NaN());
  Eigen::LLT<Eigen::MatrixXd> llt(-H);
  if (llt.info() == Eigen::Success) {
    out.hessian_pd = true;
    const Eigen::MatrixXd cov = (-H).inverse();
    for (int i = 0; i < d; ++i)
      if (cov(i, i) > 0.0) out.se[i] = std::sqrt(cov(i, i));
  } else {
    // fall back to per-parameter curvature where usable
    for (int i = 0; i < d; ++i)
      if (H(i, i) < 0.0) out.se[i] = std::sqrt(-1.0 / H(i, i));
  }
  return out;
}

}  // namespace longdina
