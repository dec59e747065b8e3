#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "longdina/design.hpp"

namespace longdina {

// One administration of an item within the flattened longitudinal test.
struct ItemAdmin {
  int t = 0;            // occasion, 1-based
  int within = 0;       // within-occasion index, 1-based
  int global = 0;       // recoded index, 1-based
  std::uint32_t qmask = 0;  // required attributes of its occasion, bit k-1
  int unique = -1;      // unique-item id, 0-based
  int group = -1;       // anchor group (0-based), -1 for non-anchor
};

// Flattened view of a design: administrations in recoded order plus the
// administration lists per unique item and per anchor group.
struct ItemTable {
  std::vector<ItemAdmin> admins;                 // size = total items
  std::vector<std::vector<int>> unique_admins;   // unique id -> admin indices
  std::vector<int> group_unique;                 // group -> unique id
  int num_unique = 0;

  static ItemTable build(const LongitudinalDesign& d) {
    d.validate();
    ItemTable tab;
    const int J = d.total_items();
    tab.admins.resize(J);
    // map (t, within) -> group
    std::vector<std::vector<int>> group_of(d.T);
    for (int t = 0; t < d.T; ++t) group_of[t].assign(d.I[t], -1);
    for (size_t g = 0; g < d.anchor_groups.size(); ++g)
      for (const auto& [t, i] : d.anchor_groups[g].members)
        group_of[t - 1][i - 1] = static_cast<int>(g);

    tab.group_unique.assign(d.anchor_groups.size(), -1);
    int j = 0;
    for (int t = 1; t <= d.T; ++t) {
      for (int i = 1; i <= d.I[t - 1]; ++i, ++j) {
        ItemAdmin& a = tab.admins[j];
        a.t = t;
        a.within = i;
        a.global = j + 1;
        for (int k = 0; k < d.K; ++k)
          if (d.Q[t - 1](i - 1, k)) a.qmask |= (1u << k);
        a.group = group_of[t - 1][i - 1];
        if (a.group >= 0 && tab.group_unique[a.group] >= 0) {
          a.unique = tab.group_unique[a.group];
        } else {
          a.unique = tab.num_unique++;
          if (a.group >= 0) tab.group_unique[a.group] = a.unique;
        }
        tab.unique_admins.resize(tab.num_unique);
        tab.unique_admins[a.unique].push_back(j);
      }
    }
    return tab;
  }
};

// Item parameters in log-linear form, one entry per unique item, plus one
// specific-dimension slope per anchor group.
struct ItemParameters {
  Eigen::VectorXd lambda0;  // intercepts, logit units
  Eigen::VectorXd lambdaK;  // K-way interaction effects, >= 0
  Eigen::VectorXd slope;    // per anchor group, >= 0

  void validate() const {
    for (int i = 0; i < lambda0.size(); ++i)
      if (!std::isfinite(lambda0[i]) || !std::isfinite(lambdaK[i]))
        throw std::invalid_argument("item parameters must be finite");
    for (int i = 0; i < lambdaK.size(); ++i)
      if (lambdaK[i] < 0.0) throw std::invalid_argument("lambdaK must be >= 0");
    for (int m = 0; m < slope.size(); ++m)
      if (!(std::isfinite(slope[m]) && slope[m] >= 0.0))
        throw std::invalid_argument("specific-dimension slopes must be finite and >= 0");
  }
};

// Higher-order structure: attribute slopes/intercepts and the ability
// distribution with mu_1 = 0 and sigma_11 = 1 fixed for identification.
struct StructuralParameters {
  Eigen::VectorXd delta;  // K, > 0
  Eigen::VectorXd beta;   // K
  Eigen::VectorXd mu;     // T, mu[0] == 0
  Eigen::MatrixXd sigma;  // T x T SPD, sigma(0,0) == 1

  void validate() const {
    const int K = static_cast<int>(delta.size());
    const int T = static_cast<int>(mu.size());
    if (beta.size() != K) throw std::invalid_argument("structural: beta size mismatch");
    if (sigma.rows() != T || sigma.cols() != T)
      throw std::invalid_argument("structural: sigma size mismatch");
    for (int k = 0; k < K; ++k)
      if (!(delta[k] > 0.0) || !std::isfinite(beta[k]))
        throw std::invalid_argument("structural: delta must be > 0 and beta finite");
    if (mu[0] != 0.0) throw std::invalid_argument("structural: mu_1 must be 0");
    if (sigma(0, 0) != 1.0) throw std::invalid_argument("structural: sigma_11 must be 1");
    if (!sigma.isApprox(sigma.transpose(), 1e-12))
      throw std::invalid_argument("structural: sigma must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("structural: sigma must be positive-definite");
  }

  Eigen::MatrixXd cholesky() const {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("sigma is not positive-definite");
    return llt.matrixL();
  }
};

// Binary responses, persons x recoded items; -1 marks missing.
struct ResponseMatrix {
  std::vector<std::string> person_ids;
  Eigen::MatrixXi y;  // entries in {0, 1, -1}

  int persons() const { return static_cast<int>(y.rows()); }
  int items() const { return static_cast<int>(y.cols()); }
};

}  // namespace longdina
