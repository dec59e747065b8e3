#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace longdina {

// One physical item administered on several occasions. `members` are
// (occasion, within-occasion item index), both 1-based, occasions strictly
// increasing.
struct AnchorGroup {
  int id = 0;                                // 1..M
  std::vector<std::pair<int, int>> members;  // (occasion t, within-occasion index)
};

// Test design across occasions: per-occasion Q-matrices plus the anchor-item
// topology. Validated on construction via validate().
struct LongitudinalDesign {
  int T = 0;                         // occasions
  int K = 0;                         // attributes per occasion
  std::vector<int> I;                // per-occasion item counts, size T
  std::vector<Eigen::MatrixXi> Q;    // per-occasion I_t x K
  std::vector<AnchorGroup> anchor_groups;

  int total_items() const {
    int s = 0;
    for (int it : I) s += it;
    return s;
  }
  int num_groups() const { return static_cast<int>(anchor_groups.size()); }

  // unique items: each anchor group counts once
  int unique_items() const {
    int dup = 0;
    for (const auto& g : anchor_groups) dup += static_cast<int>(g.members.size()) - 1;
    return total_items() - dup;
  }

  void validate() const;
};

// global recoded index (1-based): items of occasion t follow all items of
// occasions 1..t-1
inline int recode_item_index(int t, int within_index, const std::vector<int>& I) {
  if (t < 1 || t > static_cast<int>(I.size()))
    throw std::out_of_range("recode_item_index: occasion out of range");
  if (within_index < 1 || within_index > I[t - 1])
    throw std::out_of_range("recode_item_index: item " + std::to_string(within_index) +
                            " out of range for occasion " + std::to_string(t));
  int g = within_index;
  for (int u = 0; u < t - 1; ++u) g += I[u];
  return g;
}

inline void LongitudinalDesign::validate() const {
  if (T < 1) throw std::invalid_argument("design: T must be >= 1");
  if (K < 1) throw std::invalid_argument("design: K must be >= 1");
  if (static_cast<int>(I.size()) != T || static_cast<int>(Q.size()) != T)
    throw std::invalid_argument("design: per-occasion sizes do not match T");
  for (int t = 0; t < T; ++t) {
    if (Q[t].rows() != I[t] || Q[t].cols() != K)
      throw std::invalid_argument("design: Q matrix for occasion " + std::to_string(t + 1) +
                                  " is not " + std::to_string(I[t]) + "x" + std::to_string(K));
    for (int i = 0; i < Q[t].rows(); ++i) {
      int rowsum = 0;
      for (int k = 0; k < K; ++k) {
        const int q = Q[t](i, k);
        if (q != 0 && q != 1)
          throw std::invalid_argument("design: non-binary Q entry at occasion " +
                                      std::to_string(t + 1) + " row " + std::to_string(i + 1) +
                                      " column " + std::to_string(k + 1));
        rowsum += q;
      }
      if (rowsum == 0)
        throw std::invalid_argument("design: item " + std::to_string(i + 1) + " on occasion " +
                                    std::to_string(t + 1) + " requires no attribute");
    }
  }
  std::set<std::pair<int, int>> seen;
  std::set<int> ids;
  for (const auto& g : anchor_groups) {
    if (g.members.size() < 2)
      throw std::invalid_argument("design: anchor group " + std::to_string(g.id) +
                                  " has fewer than 2 members");
    if (!ids.insert(g.id).second)
      throw std::invalid_argument("design: duplicate anchor group id " + std::to_string(g.id));
    int prev_t = 0;
    Eigen::RowVectorXi qrow;
    for (const auto& [t, i] : g.members) {
      if (t < 1 || t > T || i < 1 || i > I[t - 1])
        throw std::out_of_range("design: anchor group " + std::to_string(g.id) +
                                " member (" + std::to_string(t) + "," + std::to_string(i) +
                                ") out of range");
      if (t <= prev_t)
        throw std::invalid_argument("design: anchor group " + std::to_string(g.id) +
                                    " occasions not strictly increasing");
      prev_t = t;
      if (!seen.insert({t, i}).second)
        throw std::invalid_argument("design: item (" + std::to_string(t) + "," +
                                    std::to_string(i) + ") appears in two anchor groups");
      if (qrow.size() == 0) {
        qrow = Q[t - 1].row(i - 1);
      } else if (qrow != Q[t - 1].row(i - 1)) {
        throw std::invalid_argument("design: anchor group " + std::to_string(g.id) +
                                    " members have differing Q rows");
      }
    }
  }
}

// Block-diagonal stack of Q_1..Q_T: (sum I_t) x (T*K)
inline Eigen::MatrixXi build_longitudinal_q(const LongitudinalDesign& d) {
  d.validate();
  Eigen::MatrixXi L = Eigen::MatrixXi::Zero(d.total_items(), d.T * d.K);
  int row = 0;
  for (int t = 0; t < d.T; ++t) {
    L.block(row, t * d.K, d.I[t], d.K) = d.Q[t];
    row += d.I[t];
  }
  return L;
}

// Free-parameter count: intercept+interaction per unique item, one slope per
// anchor group (optional), slope+intercept per attribute, free means,
// variances and covariances of the ability distribution.
inline int count_parameters(const LongitudinalDesign& d, bool include_specific_slopes) {
  const int U = d.unique_items();
  const int M = d.num_groups();
  int np = 2 * U + 2 * d.K + (d.T - 1) + (d.T - 1) + d.T * (d.T - 1) / 2;
  if (include_specific_slopes) np += M;
  return np;
}

}  // namespace longdina
