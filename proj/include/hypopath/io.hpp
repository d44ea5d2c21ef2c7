#pragma once

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hypopath/join.hpp"
#include "hypopath/lyndon.hpp"
#include "hypopath/path.hpp"
#include "hypopath/tensor.hpp"

namespace hypopath {

using json = nlohmann::json;

// Shortest-round-trip double formatting: stable across runs, exact reload.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json tensor_to_json(const TruncatedTensor& t) {
  json levels = json::array();
  for (int k = 0; k <= t.level(); ++k) levels.push_back(t.level_coeffs(k));
  return json{{"d", t.dim()}, {"l", t.level()}, {"levels", levels}};
}

inline TruncatedTensor tensor_from_json(const json& j) {
  TruncatedTensor t(j.at("d").get<int>(), j.at("l").get<int>());
  const auto& levels = j.at("levels");
  if (static_cast<int>(levels.size()) != t.level() + 1)
    throw std::invalid_argument("tensor_from_json: level count mismatch");
  for (int k = 0; k <= t.level(); ++k) {
    auto vals = levels[k].get<std::vector<double>>();
    if (vals.size() != t.level_coeffs(k).size())
      throw std::invalid_argument("tensor_from_json: level size mismatch");
    t.level_coeffs(k) = vals;
  }
  return t;
}

inline json lie_to_json(const LieElement& u) {
  std::vector<double> coords(u.coords.data(), u.coords.data() + u.coords.size());
  return json{{"d", u.basis->dim()}, {"l", u.basis->level()}, {"coords", coords}};
}

inline LieElement lie_from_json(const json& j, BasisPtr basis = nullptr) {
  int d = j.at("d").get<int>();
  int l = j.at("l").get<int>();
  if (!basis) basis = make_basis(d, l);
  if (basis->dim() != d || basis->level() != l)
    throw std::invalid_argument("lie_from_json: basis mismatch");
  auto coords = j.at("coords").get<std::vector<double>>();
  if (static_cast<int>(coords.size()) != basis->total_dim())
    throw std::invalid_argument("lie_from_json: coordinate count mismatch");
  LieElement u(basis);
  for (int i = 0; i < basis->total_dim(); ++i) u.coords[i] = coords[i];
  return u;
}

inline json basis_to_json(const LyndonBasis& basis) {
  json words = json::array();
  json brackets = json::array();
  for (const auto& e : basis.elements()) {
    words.push_back(e.word);
    brackets.push_back(json::array({e.left, e.right}));
  }
  std::vector<long long> dims;
  for (int k = 1; k <= basis.level(); ++k) dims.push_back(basis.level_dim(k));
  return json{{"d", basis.dim()},
              {"l", basis.level()},
              {"dims", dims},
              {"homogeneous_dimension", basis.homogeneous_dimension()},
              {"words", words},
              {"standard_factorization", brackets}};
}

// GridPath CSV: comment lines with '#', then a header row t,x_1,..,x_d.
// Smooth-segment structure is not serialized; readers get the polyline, which
// is signature-equivalent.
inline void write_path_csv(std::ostream& os, const GridPath& path,
                           const std::string& preamble = "") {
  if (!preamble.empty()) os << preamble;
  os << "t";
  for (int c = 1; c <= path.dim(); ++c) os << ",x_" << c;
  os << "\n";
  for (std::size_t i = 0; i < path.times.size(); ++i) {
    os << format_double(path.times[i]);
    for (int c = 0; c < path.dim(); ++c) os << "," << format_double(path.values(i, c));
    os << "\n";
  }
}

inline GridPath read_path_csv(std::istream& is) {
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // column names
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() < 2) throw std::invalid_argument("read_path_csv: need t plus coordinates");
    times.push_back(row.front());
    rows.push_back(std::vector<double>(row.begin() + 1, row.end()));
  }
  if (rows.size() < 2) throw std::invalid_argument("read_path_csv: need at least two rows");
  Eigen::MatrixXd values(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c) values(i, c) = rows[i][c];
  return GridPath::polyline(std::move(times), std::move(values));
}

inline void write_join_csv(std::ostream& os, const JoinResult& res,
                           const std::string& preamble = "") {
  if (!preamble.empty()) os << preamble;
  os << "iteration,residual,interval_length\n";
  for (std::size_t m = 0; m < res.residuals.size(); ++m) {
    os << m << "," << format_double(res.residuals[m]) << ",";
    os << (m < res.interval_lengths.size() ? format_double(res.interval_lengths[m]) : "");
    os << "\n";
  }
}

inline std::string slurp_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
}

}  // namespace hypopath
