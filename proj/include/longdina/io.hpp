#pragma once

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "longdina/analytics.hpp"
#include "longdina/estimate.hpp"
#include "longdina/score.hpp"

namespace longdina {

namespace io {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',' || ch == '\t' || ch == ' ' || ch == ';') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    // skip blank lines
    bool blank = true;
    for (char c : line)
      if (!isspace(static_cast<unsigned char>(c))) blank = false;
    if (!blank) lines.push_back(line);
  }
  return lines;
}

inline std::string format_fixed(double v, int decimals) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  os << v;
  return os.str();
}

inline std::string format_full(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace io

// Integer-delimited Q-matrix file: rows = items, columns = attributes.
inline Eigen::MatrixXi load_q_matrix(const std::string& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw std::runtime_error("empty Q-matrix file: " + path);
  std::vector<std::vector<int>> rows;
  for (size_t r = 0; r < lines.size(); ++r) {
    const auto fields = io::split_fields(lines[r]);
    std::vector<int> row;
    for (size_t c = 0; c < fields.size(); ++c) {
      try {
        size_t pos = 0;
        const int v = std::stoi(fields[c], &pos);
        if (pos != fields[c].size()) throw std::invalid_argument("trailing");
        row.push_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error(path + ": non-integer entry at row " + std::to_string(r + 1) +
                                 " column " + std::to_string(c + 1));
      }
    }
    if (!rows.empty() && row.size() != rows[0].size())
      throw std::runtime_error(path + ": ragged row " + std::to_string(r + 1));
    rows.push_back(row);
  }
  Eigen::MatrixXi q(rows.size(), rows[0].size());
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[0].size(); ++c) q(r, c) = rows[r][c];
  return q;
}

// Anchor map: one row per membership, (group_id, occasion, within_item_index).
inline std::vector<AnchorGroup> load_anchor_map(const std::string& path) {
  const auto lines = io::read_lines(path);
  std::map<int, AnchorGroup> groups;
  for (size_t r = 0; r < lines.size(); ++r) {
    const auto fields = io::split_fields(lines[r]);
    if (r == 0 && !fields.empty() && !isdigit(static_cast<unsigned char>(fields[0][0])))
      continue;  // optional header
    if (fields.size() != 3)
      throw std::runtime_error(path + ": row " + std::to_string(r + 1) +
                               " must have (group_id, occasion, item) fields");
    int v[3];
    for (int i = 0; i < 3; ++i) {
      try {
        v[i] = std::stoi(fields[i]);
      } catch (const std::exception&) {
        throw std::runtime_error(path + ": non-integer entry at row " + std::to_string(r + 1));
      }
    }
    groups[v[0]].id = v[0];
    groups[v[0]].members.push_back({v[1], v[2]});
  }
  std::vector<AnchorGroup> out;
  for (auto& [id, g] : groups) {
    std::sort(g.members.begin(), g.members.end());
    out.push_back(g);
  }
  return out;
}

inline LongitudinalDesign load_design(const std::vector<std::string>& q_files,
                                      const std::string& anchor_file) {
  LongitudinalDesign d;
  d.T = static_cast<int>(q_files.size());
  for (const auto& f : q_files) {
    d.Q.push_back(load_q_matrix(f));
    d.I.push_back(static_cast<int>(d.Q.back().rows()));
  }
  d.K = d.Q.empty() ? 0 : static_cast<int>(d.Q[0].cols());
  if (!anchor_file.empty()) d.anchor_groups = load_anchor_map(anchor_file);
  d.validate();
  return d;
}

// Delimited responses: header row of item labels after a person-id column,
// one person per row, cells in {0, 1, missing_token}.
inline ResponseMatrix load_responses(const std::string& path, const LongitudinalDesign& design,
                                     const std::string& missing_token = "NA",
                                     int min_observed_per_occasion = 1) {
  const auto lines = io::read_lines(path);
  if (lines.size() < 2) throw std::runtime_error(path + ": expected header and data rows");
  const int J = design.total_items();
  const auto header = io::split_fields(lines[0]);
  if (static_cast<int>(header.size()) != J + 1)
    throw std::runtime_error(path + ": header has " + std::to_string(header.size() - 1) +
                             " item columns, design expects " + std::to_string(J));
  ResponseMatrix rm;
  const int N = static_cast<int>(lines.size()) - 1;
  rm.y.resize(N, J);
  rm.person_ids.resize(N);
  for (int n = 0; n < N; ++n) {
    const auto fields = io::split_fields(lines[n + 1]);
    if (static_cast<int>(fields.size()) != J + 1)
      throw std::runtime_error(path + ": row " + std::to_string(n + 2) + " has " +
                               std::to_string(fields.size() - 1) + " cells, expected " +
                               std::to_string(J));
    rm.person_ids[n] = fields[0];
    for (int j = 0; j < J; ++j) {
      const std::string& cell = fields[j + 1];
      if (cell == missing_token)
        rm.y(n, j) = -1;
      else if (cell == "0")
        rm.y(n, j) = 0;
      else if (cell == "1")
        rm.y(n, j) = 1;
      else
        throw std::runtime_error(path + ": invalid cell '" + cell + "' at row " +
                                 std::to_string(n + 2) + " column " + std::to_string(j + 2));
    }
  }
  // per-occasion observed-response minimum
  std::vector<std::string> rejected;
  int start = 0;
  std::vector<std::pair<int, int>> occ_span;
  for (int t = 0; t < design.T; ++t) {
    occ_span.push_back({start, start + design.I[t]});
    start += design.I[t];
  }
  for (int n = 0; n < N; ++n) {
    for (const auto& [lo, hi] : occ_span) {
      int obs = 0;
      for (int j = lo; j < hi; ++j)
        if (rm.y(n, j) >= 0) ++obs;
      if (obs < min_observed_per_occasion) {
        rejected.push_back(rm.person_ids[n]);
        break;
      }
    }
  }
  if (!rejected.empty()) {
    std::string msg = path + ": persons below the per-occasion observed-response minimum:";
    for (const auto& id : rejected) msg += " " + id;
    throw std::runtime_error(msg);
  }
  return rm;
}

inline void save_responses(const std::string& path, const ResponseMatrix& rm,
                           const std::string& missing_token = "NA") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "person";
  for (int j = 0; j < rm.items(); ++j) out << ",i" << j + 1;
  out << "\n";
  for (int n = 0; n < rm.persons(); ++n) {
    out << rm.person_ids[n];
    for (int j = 0; j < rm.items(); ++j) {
      out << ",";
      if (rm.y(n, j) < 0)
        out << missing_token;
      else
        out << rm.y(n, j);
    }
    out << "\n";
  }
}

// --- JSON (de)serialization ------------------------------------------------

inline nlohmann::json to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const int R = static_cast<int>(j.size());
  const int C = R > 0 ? static_cast<int>(j[0].size()) : 0;
  Eigen::MatrixXd m(R, C);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) m(r, c) = j[r][c].get<double>();
  return m;
}

inline nlohmann::json to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline nlohmann::json params_to_json(const ItemParameters& items,
                                     const StructuralParameters& st) {
  nlohmann::json j;
  j["items"]["lambda0"] = to_json(items.lambda0);
  j["items"]["lambdaK"] = to_json(items.lambdaK);
  j["items"]["slope"] = to_json(items.slope);
  nlohmann::json gs = nlohmann::json::array();
  for (int u = 0; u < items.lambda0.size(); ++u) {
    const auto [g, s] = guess_slip_from_loglinear(items.lambda0[u], items.lambdaK[u]);
    gs.push_back({{"guess", g}, {"slip", s}});
  }
  j["items"]["guess_slip"] = gs;
  j["structural"]["delta"] = to_json(st.delta);
  j["structural"]["beta"] = to_json(st.beta);
  j["structural"]["mu"] = to_json(st.mu);
  j["structural"]["sigma"] = to_json(st.sigma);
  return j;
}

inline void params_from_json(const nlohmann::json& j, ItemParameters& items,
                             StructuralParameters& st) {
  items.lambda0 = vector_from_json(j.at("items").at("lambda0"));
  items.lambdaK = vector_from_json(j.at("items").at("lambdaK"));
  items.slope = vector_from_json(j.at("items").at("slope"));
  st.delta = vector_from_json(j.at("structural").at("delta"));
  st.beta = vector_from_json(j.at("structural").at("beta"));
  st.mu = vector_from_json(j.at("structural").at("mu"));
  st.sigma = matrix_from_json(j.at("structural").at("sigma"));
}

inline nlohmann::json fit_to_json(const FitResult& fit, const LongitudinalDesign& design,
                                  int n_persons) {
  nlohmann::json j = params_to_json(fit.items, fit.structural);
  const int np = count_parameters(design, fit.specific_slopes);
  const FitIndices fi = fit_indices(fit.neg2_loglik, np, n_persons);
  j["fit"]["neg2_loglik"] = fit.neg2_loglik;
  j["fit"]["np"] = np;
  j["fit"]["n"] = n_persons;
  j["fit"]["aic"] = fi.aic;
  j["fit"]["bic"] = fi.bic;
  j["fit"]["cycles"] = fit.cycles;
  j["fit"]["converged"] = fit.converged;
  j["fit"]["variant"] = fit.specific_slopes ? "complete" : "simple";
  j["fit"]["loglik_trace"] = fit.loglik_trace;
  j["fit"]["warnings"] = fit.warnings;
  return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

// Per-person score table: EAP theta, posterior SDs, attribute posteriors,
// MAP pattern bits and thresholded masteries.
inline void save_scores(const std::string& path, const PosteriorSummary& ps,
                        const std::vector<std::string>& person_ids, double threshold = 0.5) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "person";
  for (int t = 1; t <= ps.T; ++t) out << ",eap_theta_t" << t;
  for (int t = 1; t <= ps.T; ++t) out << ",sd_theta_t" << t;
  for (int t = 1; t <= ps.T; ++t)
    for (int k = 1; k <= ps.K; ++k) out << ",post_a" << k << "_t" << t;
  for (int t = 1; t <= ps.T; ++t)
    for (int k = 1; k <= ps.K; ++k) out << ",map_a" << k << "_t" << t;
  for (int t = 1; t <= ps.T; ++t)
    for (int k = 1; k <= ps.K; ++k) out << ",mastered_a" << k << "_t" << t;
  out << "\n";
  const int N = static_cast<int>(ps.eap_theta.rows());
  for (int n = 0; n < N; ++n) {
    out << person_ids[n];
    for (int t = 0; t < ps.T; ++t) out << "," << io::format_full(ps.eap_theta(n, t));
    for (int t = 0; t < ps.T; ++t) out << "," << io::format_full(ps.sd_theta(n, t));
    for (int b = 0; b < ps.T * ps.K; ++b) out << "," << io::format_full(ps.attr_posterior(n, b));
    for (int b = 0; b < ps.T * ps.K; ++b) out << "," << ((ps.map_pattern[n] >> b) & 1);
    for (int b = 0; b < ps.T * ps.K; ++b) out << "," << (ps.attr_posterior(n, b) >= threshold);
    out << "\n";
  }
}

inline void save_mixing(const std::string& path, const PosteriorSummary& ps) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "occasion,pattern,proportion\n";
  for (int t = 0; t < ps.T; ++t)
    for (int p = 0; p < ps.mixing.cols(); ++p) {
      std::string bits;
      for (int k = 0; k < ps.K; ++k) bits += ((p >> k) & 1) ? '1' : '0';
      out << t + 1 << "," << bits << "," << io::format_full(ps.mixing(t, p)) << "\n";
    }
}

// Run configuration for the CLI.
struct ProjectConfig {
  std::vector<std::string> q_files;
  std::string anchor_file;
  std::string data_file;
  QuadratureSpec quad;
  EmConfig em;
  std::string variant = "complete";  // or "simple"
  std::string output_dir = ".";
  std::uint64_t seed = 1;
  std::string missing_token = "NA";

  static ProjectConfig from_json(const nlohmann::json& j) {
    ProjectConfig c;
    if (j.contains("q_files")) c.q_files = j["q_files"].get<std::vector<std::string>>();
    if (j.contains("anchor_file")) c.anchor_file = j["anchor_file"].get<std::string>();
    if (j.contains("data_file")) c.data_file = j["data_file"].get<std::string>();
    if (j.contains("variant")) c.variant = j["variant"].get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("missing_token")) c.missing_token = j["missing_token"].get<std::string>();
    if (j.contains("quadrature")) {
      const auto& q = j["quadrature"];
      if (q.contains("theta_points")) c.quad.theta_points = q["theta_points"].get<int>();
      if (q.contains("theta_range")) c.quad.theta_range = q["theta_range"].get<double>();
      if (q.contains("gamma_points")) c.quad.gamma_points = q["gamma_points"].get<int>();
      if (q.contains("gamma_range")) c.quad.gamma_range = q["gamma_range"].get<double>();
    }
    if (j.contains("em")) {
      const auto& e = j["em"];
      if (e.contains("max_cycles")) c.em.max_cycles = e["max_cycles"].get<int>();
      if (e.contains("param_change_tol")) c.em.param_change_tol = e["param_change_tol"].get<double>();
      if (e.contains("inner_newton_tol")) c.em.inner_newton_tol = e["inner_newton_tol"].get<double>();
      if (e.contains("inner_newton_max")) c.em.inner_newton_max = e["inner_newton_max"].get<int>();
      if (e.contains("count_floor")) c.em.count_floor = e["count_floor"].get<double>();
      if (e.contains("use_contraction")) c.em.use_contraction = e["use_contraction"].get<bool>();
    }
    if (c.variant != "complete" && c.variant != "simple")
      throw std::runtime_error("config: variant must be 'complete' or 'simple'");
    c.em.estimate_specific_slopes = c.variant == "complete";
    return c;
  }
};

}  // namespace longdina
