// Command-line front end: signature calculus, control joins, distance scans,
// and the Monte Carlo experiment battery. Every artifact embeds the effective
// configuration, the seed, and the library version; identical configurations
// produce bit-identical artifacts regardless of thread count.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hypopath/hypopath.hpp"

namespace hp = hypopath;
using hp::json;

namespace {

std::vector<double> parse_vector(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  Eigen::VectorXd out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
  return out;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(hp::slurp_file(path));
}

// flags win over the config file; config fills in everything not given
template <class T>
void config_fill(const CLI::App* cmd, const json& cfg, const std::string& flag,
                 const std::string& key, T& var) {
  if (cmd->count(flag) == 0 && cfg.contains(key)) var = cfg.at(key).get<T>();
}

hp::VectorFieldSystem resolve_system(const std::string& name, int dim, const json& cfg) {
  if (name == "user") {
    if (!cfg.contains("user_system"))
      throw std::invalid_argument("system 'user' needs a user_system block in the config file");
    const auto& u = cfg.at("user_system");
    return hp::make_user_system(u.at("state_dim").get<int>(), u.at("drive_dim").get<int>(),
                                u.at("fields").get<std::vector<std::vector<std::string>>>());
  }
  return hp::make_system(name, dim);
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty())
    std::cout << content;
  else
    hp::spit_file(out_path, content);
}

std::string artifact_preamble(const json& config) {
  return "# hypopath " + std::string(hp::version_string) + "\n# config: " + config.dump() + "\n";
}

json artifact_header(const json& config) {
  return json{{"version", hp::version_string}, {"config", config}};
}

const auto hurst_validator = CLI::Validator(
    [](std::string& s) -> std::string {
      double h = std::stod(s);
      if (!(h > 0.25 && h < 1.0)) return "H must lie in (0.25, 1)";
      return {};
    },
    "H in (0.25,1)");

struct SelfTest {
  int failures = 0;
  void check(const std::string& name, bool ok) {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
    if (!ok) ++failures;
  }
};

int run_selftest() {
  SelfTest st;
  hp::SplitMix64 rng(20240901);

  {  // algebra round trips
    auto basis = hp::make_basis(2, 4);
    bool ok = true;
    for (int rep = 0; rep < 10; ++rep) {
      auto u = hp::random_lie(basis, rng);
      u *= 0.8 / hp::hs_norm(u);
      auto t = hp::to_tensor(u);
      ok = ok && hp::hs_norm(hp::tensor_log(hp::tensor_exp(t)) - t) <= 1e-12;
    }
    st.check("exp/log round trip", ok);
  }
  {  // Witt dimensions
    bool ok = true;
    for (int d = 2; d <= 4 && ok; ++d) {
      auto basis = hp::make_basis(d, d == 4 ? 5 : 6);
      for (int k = 1; k <= basis->level(); ++k)
        ok = ok && basis->level_dim(k) == hp::witt_dimension(d, k);
    }
    st.check("Witt dimensions", ok);
  }
  {  // Chen identity
    auto basis = hp::make_basis(2, 4);
    bool ok = true;
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::MatrixXd a(4, 2), b(3, 2);
      a.row(0).setZero();
      for (int i = 1; i < 4; ++i)
        for (int c = 0; c < 2; ++c) a(i, c) = a(i - 1, c) + 0.4 * rng.next_gaussian();
      b.row(0).setZero();
      for (int i = 1; i < 3; ++i)
        for (int c = 0; c < 2; ++c) b(i, c) = b(i - 1, c) + 0.4 * rng.next_gaussian();
      auto p1 = hp::GridPath::polyline({0, 0.3, 0.7, 1.0}, a);
      auto p2 = hp::GridPath::polyline({0, 0.5, 1.0}, b);
      auto joined = hp::concat({p1, p2}, {1.0, 1.0});
      ok = ok && hp::hs_norm(hp::signature(joined, 4) -
                             hp::tensor_mul(hp::signature(p1, 4), hp::signature(p2, 4))) <= 1e-12;
    }
    st.check("Chen identity", ok);
  }
  {  // reconstruction
    auto basis = hp::make_basis(2, 4);
    bool ok = true;
    for (int rep = 0; rep < 10; ++rep) {
      auto u = hp::random_lie(basis, rng);
      u *= (0.2 + 0.7 * rng.next_uniform()) / hp::hs_norm(u);
      auto path = hp::path_from_group_element(u);
      ok = ok && (hp::log_signature(path, basis).coords - u.coords).norm() <= 1e-8;
      double lambda = 0.4 + rng.next_uniform();
      ok = ok && std::abs(hp::cc_len(hp::dilate(u, lambda)) - lambda * hp::cc_len(u)) <= 1e-10;
    }
    st.check("path reconstruction and cc homogeneity", ok);
  }
  {  // psi and a short join
    auto heis = hp::make_system("heisenberg");
    auto basis = hp::make_basis(2, 2);
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd eta(3);
    eta << 0.002, -0.001, 0.004;
    hp::LieElement zero(basis);
    auto pr = hp::psi(heis, zero, x0, eta);
    st.check("psi residual", pr.residual <= 1e-10);
    Eigen::VectorXd target(3);
    target << 0.0, 0.0, 0.01;
    auto join = hp::join_points(heis, x0, target, basis, 0.7);
    st.check("join endpoint", join.converged && join.endpoint_error <= 1e-6);
  }
  {  // fbm covariance pin
    hp::FbmBatch batch(0.7, 4, 1, 4000, 7);
    std::vector<double> prod(4000);
    for (int i = 0; i < 4000; ++i) {
      auto p = batch.path(i);
      prod[i] = p(2, 0) * p(4, 0);
    }
    auto stat = hp::moments(prod);
    st.check("fbm covariance pin", std::abs(stat.mean - 0.5) <= 4.0 * stat.std_error);
  }
  {  // fractional calculus pin
    const int n = 1 << 9;
    Eigen::VectorXd one = Eigen::VectorXd::Ones(n + 1);
    auto i_half = hp::frac_integral(one, 1.0, 0.5);
    double expected = 1.0 / std::tgamma(1.5);
    st.check("fractional integral closed form", std::abs(i_half[n] - expected) <= 1e-12);
  }

  std::cout << (st.failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  return st.failures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypopath: truncated signature algebra, hypoelliptic control joins, and "
               "signature-density experiments"};
  app.require_subcommand(1);
  std::function<int()> runner;

  // ---- signature ----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("signature", "truncated signature of a path CSV");
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto level = std::make_shared<int>(2);
    cmd->add_option("--in", *in, "path CSV (t,x_1..x_d)")->required();
    cmd->add_option("--out", *out, "output JSON (stdout when omitted)");
    cmd->add_option("--level", *level, "truncation level")->check(CLI::Range(1, 6));
    cmd->callback([=, &runner]() {
      runner = [=]() {
        std::ifstream is(*in);
        if (!is) throw std::runtime_error("cannot open '" + *in + "'");
        auto path = hp::read_path_csv(is);
        auto sig = hp::signature(path, *level);
        json config{{"subcommand", "signature"}, {"in", *in}, {"level", *level}};
        json doc = artifact_header(config);
        doc["signature"] = hp::tensor_to_json(sig);
        emit(*out, doc.dump(2) + "\n");
        return 0;
      };
    });
  }

  // ---- logsig -------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("logsig", "truncated log-signature of a path CSV");
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto level = std::make_shared<int>(2);
    cmd->add_option("--in", *in)->required();
    cmd->add_option("--out", *out);
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->callback([=, &runner]() {
      runner = [=]() {
        std::ifstream is(*in);
        if (!is) throw std::runtime_error("cannot open '" + *in + "'");
        auto path = hp::read_path_csv(is);
        if (path.dim() > 4) throw std::invalid_argument("d must be at most 4");
        auto basis = hp::make_basis(path.dim(), *level);
        auto u = hp::log_signature(path, basis);
        json config{{"subcommand", "logsig"}, {"in", *in}, {"level", *level}};
        json doc = artifact_header(config);
        doc["element"] = hp::lie_to_json(u);
        doc["basis"] = hp::basis_to_json(*basis);
        emit(*out, doc.dump(2) + "\n");
        return 0;
      };
    });
  }

  // ---- reconstruct --------------------------------------------------------
  {
    auto* cmd = app.add_subcommand(
        "reconstruct", "smooth path on [0,1] with prescribed truncated log-signature");
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--in", *in, "Lie element JSON {d, l, coords}")->required();
    cmd->add_option("--out", *out, "path CSV output");
    cmd->callback([=, &runner]() {
      runner = [=]() {
        auto u = hp::lie_from_json(json::parse(hp::slurp_file(*in)));
        auto path = hp::path_from_group_element(u);
        double residual = (hp::log_signature(path, u.basis, 1e6).coords - u.coords).norm();
        json config{{"subcommand", "reconstruct"}, {"in", *in}};
        std::ostringstream os;
        hp::write_path_csv(os, path, artifact_preamble(config));
        emit(*out, os.str());
        json summary = artifact_header(config);
        summary["residual"] = residual;
        summary["cc_length"] = hp::cc_len(u);
        std::cout << summary.dump(2) << "\n";
        return 0;
      };
    });
  }

  // ---- join ---------------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("join", "construct a control joining two states");
    auto system = std::make_shared<std::string>("heisenberg");
    auto dim = std::make_shared<int>(2);
    auto from = std::make_shared<std::string>();
    auto to = std::make_shared<std::string>();
    auto level = std::make_shared<int>(2);
    auto hurst = std::make_shared<double>(0.7);
    auto out = std::make_shared<std::string>();
    auto config_path = std::make_shared<std::string>();
    cmd->add_option("--system", *system);
    cmd->add_option("--dim", *dim, "state dimension for elliptic-identity");
    cmd->add_option("--from", *from, "start state, comma separated")->required();
    cmd->add_option("--to", *to, "target state, comma separated")->required();
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--out", *out, "iteration CSV; the control goes to <out stem>_path.csv");
    cmd->add_option("--config", *config_path, "JSON config file");
    cmd->callback([=, &runner]() {
      runner = [=]() {
        json cfg = load_config(*config_path);
        config_fill(cmd, cfg, "--system", "system", *system);
        config_fill(cmd, cfg, "--level", "level", *level);
        config_fill(cmd, cfg, "--hurst", "hurst", *hurst);
        auto sys = resolve_system(*system, *dim, cfg);
        auto basis = hp::make_basis(sys.drive_dim(), *level);
        auto x = to_eigen(parse_vector(*from));
        auto y = to_eigen(parse_vector(*to));
        auto res = hp::join_points(sys, x, y, basis, *hurst);

        json config{{"subcommand", "join"}, {"system", *system}, {"from", *from},
                    {"to", *to},            {"level", *level},   {"hurst", *hurst}};
        std::ostringstream os;
        hp::write_join_csv(os, res, artifact_preamble(config));
        emit(*out, os.str());
        if (!out->empty()) {
          std::string stem = *out;
          auto pos = stem.rfind(".csv");
          if (pos != std::string::npos) stem = stem.substr(0, pos);
          std::ostringstream ps;
          hp::write_path_csv(ps, res.control, artifact_preamble(config));
          hp::spit_file(stem + "_path.csv", ps.str());
        }
        json summary = artifact_header(config);
        summary["converged"] = res.converged;
        summary["iterations"] = res.iterations;
        summary["d_upper"] = res.d_upper;
        summary["norm_exact"] = res.norm_exact;
        summary["endpoint_error"] = res.endpoint_error;
        summary["total_length"] = res.total_length;
        std::cout << summary.dump(2) << "\n";
        return res.converged ? 0 : 1;
      };
    });
  }

  // ---- distance-scan ------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("distance-scan",
                                   "upper distance estimates along a ray of targets");
    auto system = std::make_shared<std::string>("heisenberg");
    auto dim = std::make_shared<int>(2);
    auto from = std::make_shared<std::string>();
    auto direction = std::make_shared<std::string>();
    auto radii = std::make_shared<std::string>("0.001,0.003,0.01,0.03,0.1");
    auto level = std::make_shared<int>(2);
    auto hursts = std::make_shared<std::vector<double>>(std::vector<double>{0.7});
    auto out = std::make_shared<std::string>();
    auto config_path = std::make_shared<std::string>();
    cmd->add_option("--system", *system);
    cmd->add_option("--dim", *dim);
    cmd->add_option("--from", *from)->required();
    cmd->add_option("--direction", *direction)->required();
    cmd->add_option("--radii", *radii);
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--hurst", *hursts, "one or two Hurst indices")->check(hurst_validator);
    cmd->add_option("--out", *out);
    cmd->add_option("--config", *config_path);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        json cfg = load_config(*config_path);
        auto sys = resolve_system(*system, *dim, cfg);
        auto basis = hp::make_basis(sys.drive_dim(), *level);
        auto x = to_eigen(parse_vector(*from));
        auto dir = to_eigen(parse_vector(*direction));
        auto rs = parse_vector(*radii);
        if (hursts->empty() || hursts->size() > 2)
          throw std::invalid_argument("--hurst takes one or two values");

        std::vector<hp::ScanResult> scans;
        for (double h : *hursts) scans.push_back(hp::distance_scan(sys, x, dir, rs, basis, h));

        json config{{"subcommand", "distance-scan"}, {"system", *system}, {"from", *from},
                    {"direction", *direction},       {"radii", *radii},   {"level", *level},
                    {"hurst", *hursts}};
        std::ostringstream os;
        os << artifact_preamble(config);
        os << "radius";
        for (double h : *hursts) os << ",d_upper_H" << h;
        if (hursts->size() == 2) os << ",ratio";
        os << "\n";
        for (std::size_t i = 0; i < rs.size(); ++i) {
          os << hp::format_double(rs[i]);
          for (const auto& scan : scans)
            os << ","
               << (scan.rows[i].ok ? hp::format_double(scan.rows[i].d_upper) : "failed");
          if (hursts->size() == 2 && scans[0].rows[i].ok && scans[1].rows[i].ok)
            os << "," << hp::format_double(scans[0].rows[i].d_upper / scans[1].rows[i].d_upper);
          os << "\n";
        }
        emit(*out, os.str());

        json summary = artifact_header(config);
        json slopes = json::array();
        for (const auto& scan : scans) slopes.push_back(scan.slope);
        summary["slopes"] = slopes;
        if (hursts->size() == 2) {
          double lo = 1e300, hi = 0.0;
          for (std::size_t i = 0; i < rs.size(); ++i)
            if (scans[0].rows[i].ok && scans[1].rows[i].ok) {
              double ratio = scans[0].rows[i].d_upper / scans[1].rows[i].d_upper;
              lo = std::min(lo, ratio);
              hi = std::max(hi, ratio);
            }
          summary["ratio_spread"] = hi / lo;
        }
        std::cout << summary.dump(2) << "\n";
        return 0;
      };
    });
  }

  // ---- elliptic-join ------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("elliptic-join", "explicit control for elliptic systems");
    auto system = std::make_shared<std::string>("elliptic-identity");
    auto dim = std::make_shared<int>(2);
    auto from = std::make_shared<std::string>();
    auto to = std::make_shared<std::string>();
    auto hurst = std::make_shared<double>(0.5);
    auto grid = std::make_shared<int>(1 << 10);
    auto out = std::make_shared<std::string>();
    auto config_path = std::make_shared<std::string>();
    cmd->add_option("--system", *system);
    cmd->add_option("--dim", *dim);
    cmd->add_option("--from", *from)->required();
    cmd->add_option("--to", *to)->required();
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--grid", *grid)->check(CLI::Range(8, 1 << 12));
    cmd->add_option("--out", *out);
    cmd->add_option("--config", *config_path);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        json cfg = load_config(*config_path);
        auto sys = resolve_system(*system, *dim, cfg);
        auto x = to_eigen(parse_vector(*from));
        auto y = to_eigen(parse_vector(*to));
        auto h = hp::elliptic_join(sys, x, y, *hurst, *grid);
        hp::FlowOptions fopt;
        fopt.steps_per_unit = 512.0;
        double residual = (hp::flow(sys, x, hp::cm_to_path(h), fopt).endpoint - y).norm();

        json config{{"subcommand", "elliptic-join"}, {"system", *system}, {"from", *from},
                    {"to", *to},                     {"hurst", *hurst},   {"grid", *grid}};
        std::ostringstream os;
        os << artifact_preamble(config) << "t";
        for (int c = 1; c <= h.dim(); ++c) os << ",h_" << c;
        os << "\n";
        for (int i = 0; i <= h.cells(); ++i) {
          os << hp::format_double(h.horizon * i / h.cells());
          for (int c = 0; c < h.dim(); ++c) os << "," << hp::format_double(h.values(i, c));
          os << "\n";
        }
        emit(*out, os.str());
        json summary = artifact_header(config);
        summary["endpoint_residual"] = residual;
        summary["cm_norm"] = hp::cm_norm(h).value;
        std::cout << summary.dump(2) << "\n";
        return 0;
      };
    });
  }

  // ---- fbm-sample ---------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("fbm-sample",
                                   "sample truncated log-signatures of fractional Brownian motion");
    auto hurst = std::make_shared<double>(0.7);
    auto grid = std::make_shared<int>(1 << 10);
    auto dim = std::make_shared<int>(2);
    auto level = std::make_shared<int>(2);
    auto t = std::make_shared<double>(1.0);
    auto samples = std::make_shared<int>(10000);
    auto seed = std::make_shared<std::uint64_t>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--grid", *grid)->check(CLI::Range(2, 1 << 12));
    cmd->add_option("--dim", *dim)->check(CLI::Range(1, 4));
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--t", *t, "signature horizon (batch grid covers [0, t])");
    cmd->add_option("--samples", *samples)->check(CLI::Range(1, 10000000));
    cmd->add_option("--seed", *seed)->required();
    cmd->add_option("--out", *out, "binary batch output")->required();
    cmd->callback([=, &runner]() {
      runner = [=]() {
        auto basis = hp::make_basis(*dim, *level);
        hp::FbmBatch batch(*hurst, *grid, *dim, *samples, *seed, *t);
        auto us = hp::sample_log_signature(batch, *t, basis);

        std::ofstream os(*out, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write '" + *out + "'");
        const char magic[8] = {'H', 'Y', 'P', 'O', 'U', 'B', 'N', '1'};
        os.write(magic, 8);
        double hd = *hurst;
        std::int32_t vals[4] = {static_cast<std::int32_t>(*grid), static_cast<std::int32_t>(*dim),
                                static_cast<std::int32_t>(*level),
                                static_cast<std::int32_t>(basis->total_dim())};
        std::int64_t n = *samples;
        os.write(reinterpret_cast<const char*>(&hd), sizeof hd);
        os.write(reinterpret_cast<const char*>(vals), sizeof vals);
        os.write(reinterpret_cast<const char*>(&n), sizeof n);
        for (const auto& u : us)
          os.write(reinterpret_cast<const char*>(u.coords.data()),
                   static_cast<std::streamsize>(sizeof(double) * u.coords.size()));

        json config{{"subcommand", "fbm-sample"}, {"hurst", *hurst}, {"grid", *grid},
                    {"dim", *dim},                {"level", *level}, {"t", *t},
                    {"samples", *samples},        {"seed", *seed}};
        json summary = artifact_header(config);
        summary["coordinates_per_sample"] = basis->total_dim();
        summary["out"] = *out;
        std::cout << summary.dump(2) << "\n";
        return 0;
      };
    });
  }

  // ---- u-scaling ----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("u-scaling", "log-signature scaling-law moment battery");
    auto hurst = std::make_shared<double>(0.7);
    auto t = std::make_shared<double>(0.25);
    auto dim = std::make_shared<int>(2);
    auto level = std::make_shared<int>(2);
    auto grid = std::make_shared<int>(256);
    auto samples = std::make_shared<int>(100000);
    auto seed = std::make_shared<std::uint64_t>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--t", *t);
    cmd->add_option("--dim", *dim)->check(CLI::Range(1, 4));
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--grid", *grid)->check(CLI::Range(2, 1 << 12));
    cmd->add_option("--samples", *samples);
    cmd->add_option("--seed", *seed)->required();
    cmd->add_option("--out", *out);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        auto basis = hp::make_basis(*dim, *level);
        auto rep = hp::scaling_check_U(*hurst, *t, basis, *grid, *samples, *seed);
        json config{{"subcommand", "u-scaling"}, {"hurst", *hurst}, {"t", *t},
                    {"dim", *dim},               {"level", *level}, {"grid", *grid},
                    {"samples", *samples},       {"seed", *seed}};
        json doc = artifact_header(config);
        json rows = json::array();
        for (const auto& m : rep.moments)
          rows.push_back(json{{"name", m.name},
                              {"dilated_reference", m.value_a},
                              {"direct", m.value_b},
                              {"std_diff", m.std_diff}});
        doc["moments"] = rows;
        doc["max_std_diff"] = rep.max_std_diff;
        doc["pass"] = rep.max_std_diff <= 4.0;
        emit(*out, doc.dump(2) + "\n");
        return rep.max_std_diff <= 4.0 ? 0 : 1;
      };
    });
  }

  // ---- rho-scaling --------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("rho-scaling", "density scaling check for the log-signature");
    auto hurst = std::make_shared<double>(0.7);
    auto t = std::make_shared<double>(0.25);
    auto dim = std::make_shared<int>(2);
    auto level = std::make_shared<int>(2);
    auto grid = std::make_shared<int>(256);
    auto samples = std::make_shared<int>(200000);
    auto seed = std::make_shared<std::uint64_t>();
    auto probes = std::make_shared<int>(5);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--t", *t);
    cmd->add_option("--dim", *dim)->check(CLI::Range(1, 4));
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--grid", *grid)->check(CLI::Range(2, 1 << 12));
    cmd->add_option("--samples", *samples);
    cmd->add_option("--probes", *probes, "number of off-origin probe points");
    cmd->add_option("--seed", *seed)->required();
    cmd->add_option("--out", *out);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        auto basis = hp::make_basis(*dim, *level);
        const int m = basis->total_dim();
        Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(*probes + 1, m);
        hp::SplitMix64 rng(hp::derive_seed(*seed, 777));
        for (int p = 1; p <= *probes; ++p)
          for (int j = 0; j < m; ++j) pts(p, j) = 0.25 * rng.next_gaussian();
        auto rows = hp::scaling_check_rho(*hurst, *t, basis, pts, *samples, *seed, *grid);

        json config{{"subcommand", "rho-scaling"}, {"hurst", *hurst}, {"t", *t},
                    {"dim", *dim},                 {"level", *level}, {"grid", *grid},
                    {"samples", *samples},         {"seed", *seed},   {"probes", *probes}};
        json doc = artifact_header(config);
        json out_rows = json::array();
        bool pass = true;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const auto& r = rows[i];
          double tol = 3.0 * r.band + (i == 0 ? 0.15 : 0.0);
          bool ok = r.rhs > 0.0 && std::abs(r.ratio - 1.0) <= tol;
          pass = pass && ok;
          std::vector<double> coords(r.point.data(), r.point.data() + r.point.size());
          out_rows.push_back(json{{"point", coords},
                                  {"lhs", r.lhs},
                                  {"rhs", r.rhs},
                                  {"ratio", r.ratio},
                                  {"band", r.band},
                                  {"pass", ok}});
        }
        doc["rows"] = out_rows;
        doc["pass"] = pass;
        emit(*out, doc.dump(2) + "\n");
        return pass ? 0 : 1;
      };
    });
  }

  // ---- positivity ---------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("positivity", "min-density probe over a compact box");
    auto hurst = std::make_shared<double>(0.5);
    auto t = std::make_shared<double>(1.0);
    auto dim = std::make_shared<int>(2);
    auto level = std::make_shared<int>(2);
    auto box = std::make_shared<double>(1.0);
    auto grid = std::make_shared<int>(128);
    auto samples = std::make_shared<int>(100000);
    auto seed = std::make_shared<std::uint64_t>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--t", *t);
    cmd->add_option("--dim", *dim)->check(CLI::Range(1, 4));
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--box", *box, "HS-radius of the probe box");
    cmd->add_option("--grid", *grid)->check(CLI::Range(2, 1 << 12));
    cmd->add_option("--samples", *samples);
    cmd->add_option("--seed", *seed)->required();
    cmd->add_option("--out", *out);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        auto basis = hp::make_basis(*dim, *level);
        auto rep = hp::positivity_report(*hurst, *t, basis, *box, *samples, *seed, *grid);
        json config{{"subcommand", "positivity"}, {"hurst", *hurst}, {"t", *t},
                    {"dim", *dim},                {"level", *level}, {"box", *box},
                    {"grid", *grid},              {"samples", *samples}, {"seed", *seed}};
        json doc = artifact_header(config);
        doc["min_density"] = rep.min_density;
        doc["min_density_se"] = rep.min_density_se;
        doc["positive"] = rep.positive;
        doc["inconclusive"] = rep.inconclusive;
        doc["probe_count"] = rep.probe_count;
        emit(*out, doc.dump(2) + "\n");
        return rep.positive ? 0 : 1;
      };
    });
  }

  // ---- taylor-order -------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("taylor-order", "small-time order of the Taylor approximation");
    auto system = std::make_shared<std::string>("heisenberg");
    auto dim = std::make_shared<int>(2);
    auto hurst = std::make_shared<double>(0.5);
    auto level = std::make_shared<int>(2);
    auto t_list = std::make_shared<std::string>("0.05,0.1,0.2,0.35,0.5");
    auto samples = std::make_shared<int>(10000);
    auto seed = std::make_shared<std::uint64_t>();
    auto from = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto config_path = std::make_shared<std::string>();
    cmd->add_option("--system", *system);
    cmd->add_option("--dim", *dim);
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--t-list", *t_list);
    cmd->add_option("--samples", *samples);
    cmd->add_option("--seed", *seed)->required();
    cmd->add_option("--from", *from, "base state (defaults to the origin)");
    cmd->add_option("--out", *out);
    cmd->add_option("--config", *config_path);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        json cfg = load_config(*config_path);
        auto sys = resolve_system(*system, *dim, cfg);
        auto basis = hp::make_basis(sys.drive_dim(), *level);
        Eigen::VectorXd x = from->empty() ? Eigen::VectorXd::Zero(sys.state_dim())
                                          : to_eigen(parse_vector(*from));
        auto res = hp::taylor_error_order(sys, x, *hurst, basis, parse_vector(*t_list), *samples,
                                          *seed);
        json config{{"subcommand", "taylor-order"}, {"system", *system}, {"hurst", *hurst},
                    {"level", *level},              {"t_list", *t_list}, {"samples", *samples},
                    {"seed", *seed}};
        json doc = artifact_header(config);
        doc["t"] = res.t_values;
        doc["mean_errors"] = res.mean_errors;
        doc["slope"] = res.slope;
        doc["noise_floor"] = res.noise_floor_hit;
        doc["short_span"] = res.short_span;
        emit(*out, doc.dump(2) + "\n");
        return 0;
      };
    });
  }

  // ---- density-lower ------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("density-lower",
                                   "density-times-ball-volume stability statistic");
    auto system = std::make_shared<std::string>("heisenberg");
    auto dim = std::make_shared<int>(2);
    auto hurst = std::make_shared<double>(0.5);
    auto level = std::make_shared<int>(2);
    auto t = std::make_shared<double>(0.2);
    auto samples = std::make_shared<int>(20000);
    auto seed = std::make_shared<std::uint64_t>();
    auto from = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto config_path = std::make_shared<std::string>();
    cmd->add_option("--system", *system);
    cmd->add_option("--dim", *dim);
    cmd->add_option("--hurst", *hurst)->check(hurst_validator);
    cmd->add_option("--level", *level)->check(CLI::Range(1, 6));
    cmd->add_option("--t", *t);
    cmd->add_option("--samples", *samples);
    cmd->add_option("--seed", *seed)->required();
    cmd->add_option("--from", *from);
    cmd->add_option("--out", *out);
    cmd->add_option("--config", *config_path);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        json cfg = load_config(*config_path);
        auto sys = resolve_system(*system, *dim, cfg);
        auto basis = hp::make_basis(sys.drive_dim(), *level);
        Eigen::VectorXd x = from->empty() ? Eigen::VectorXd::Zero(sys.state_dim())
                                          : to_eigen(parse_vector(*from));
        auto rep = hp::taylor_density_lower(sys, x, *hurst, basis, *t, *samples, *seed);
        json config{{"subcommand", "density-lower"}, {"system", *system}, {"hurst", *hurst},
                    {"level", *level},               {"t", *t},           {"samples", *samples},
                    {"seed", *seed}};
        json doc = artifact_header(config);
        doc["r_cutoff"] = rep.r_cutoff;
        doc["kept_fraction"] = rep.kept_fraction;
        doc["density_at_x"] = rep.density_at_x;
        doc["density_se"] = rep.density_se;
        doc["ball_volume"] = rep.ball_volume;
        doc["ball_volume_se"] = rep.ball_volume_se;
        doc["product"] = rep.product;
        doc["insufficient_samples"] = rep.insufficient_samples;
        emit(*out, doc.dump(2) + "\n");
        return rep.insufficient_samples ? 1 : 0;
      };
    });
  }

  // ---- disintegration -----------------------------------------------------
  {
    auto* cmd = app.add_subcommand("disintegration",
                                   "run the built-in fiber-integration battery");
    auto out = std::make_shared<std::string>();
    cmd->add_option("--out", *out);
    cmd->callback([=, &runner]() {
      runner = [=]() {
        json results = json::array();
        bool pass = true;

        {  // coordinate projection
          hp::DisintegrationProblem prob;
          prob.ambient_dim = 2;
          prob.target_dim = 1;
          prob.map = [](const Eigen::VectorXd& x) {
            return Eigen::VectorXd::Constant(1, x[0]).eval();
          };
          prob.jacobian = [](const Eigen::VectorXd&) {
            Eigen::MatrixXd J(1, 2);
            J << 1.0, 0.0;
            return J;
          };
          prob.test_fn = [](const Eigen::VectorXd& x) { return std::exp(-8.0 * x.squaredNorm()); };
          prob.support_lo = Eigen::VectorXd::Constant(2, -2.0);
          prob.support_hi = Eigen::VectorXd::Constant(2, 2.0);
          prob.fiber_seed = [](const Eigen::VectorXd& y) {
            Eigen::VectorXd p(2);
            p << y[0], 0.0;
            return p;
          };
          prob.target_lo = Eigen::VectorXd::Constant(1, -2.0);
          prob.target_hi = Eigen::VectorXd::Constant(1, 2.0);
          auto res = hp::disintegration_check(prob);
          bool ok = res.rel_error <= 1e-6;
          pass = pass && ok;
          results.push_back(json{{"case", "coordinate-projection"},
                                 {"lhs", res.lhs},
                                 {"rhs", res.rhs},
                                 {"rel_error", res.rel_error},
                                 {"tolerance", 1e-6},
                                 {"pass", ok}});
        }
        {  // radius-squared on an annulus
          auto radial = [](double r) {
            double z = (r - 1.0) / 0.4;
            if (std::abs(z) >= 1.0) return 0.0;
            return std::exp(-1.0 / (1.0 - z * z));
          };
          hp::DisintegrationProblem prob;
          prob.ambient_dim = 2;
          prob.target_dim = 1;
          prob.map = [](const Eigen::VectorXd& x) {
            return Eigen::VectorXd::Constant(1, x.squaredNorm()).eval();
          };
          prob.jacobian = [](const Eigen::VectorXd& x) {
            Eigen::MatrixXd J(1, 2);
            J << 2.0 * x[0], 2.0 * x[1];
            return J;
          };
          prob.test_fn = [radial](const Eigen::VectorXd& x) { return radial(x.norm()); };
          prob.support_lo = Eigen::VectorXd::Constant(2, -1.5);
          prob.support_hi = Eigen::VectorXd::Constant(2, 1.5);
          prob.fiber_seed = [](const Eigen::VectorXd& y) {
            Eigen::VectorXd p(2);
            p << std::sqrt(std::max(y[0], 1e-12)), 0.0;
            return p;
          };
          prob.target_lo = Eigen::VectorXd::Constant(1, 0.36);
          prob.target_hi = Eigen::VectorXd::Constant(1, 1.96);
          hp::DisintegrationOptions opt;
          opt.step = 0.0015;
          opt.ambient_nodes = 160;
          opt.outer_nodes = 160;
          auto res = hp::disintegration_check(prob, opt);
          bool ok = res.rel_error <= 1e-4;
          pass = pass && ok;
          results.push_back(json{{"case", "annulus-radius-squared"},
                                 {"lhs", res.lhs},
                                 {"rhs", res.rhs},
                                 {"rel_error", res.rel_error},
                                 {"tolerance", 1e-4},
                                 {"pass", ok}});
        }
        {  // linear map with non-orthonormal rows
          Eigen::MatrixXd A(2, 3);
          A << 1.0, 0.3, 0.0, -0.2, 1.0, 0.4;
          hp::DisintegrationProblem prob;
          prob.ambient_dim = 3;
          prob.target_dim = 2;
          prob.map = [A](const Eigen::VectorXd& x) { return (A * x).eval(); };
          prob.jacobian = [A](const Eigen::VectorXd&) { return A; };
          prob.test_fn = [](const Eigen::VectorXd& x) { return std::exp(-6.0 * x.squaredNorm()); };
          prob.support_lo = Eigen::VectorXd::Constant(3, -2.2);
          prob.support_hi = Eigen::VectorXd::Constant(3, 2.2);
          Eigen::MatrixXd pinv = A.transpose() * (A * A.transpose()).inverse();
          prob.fiber_seed = [pinv](const Eigen::VectorXd& y) { return (pinv * y).eval(); };
          prob.target_lo = Eigen::VectorXd::Constant(2, -4.0);
          prob.target_hi = Eigen::VectorXd::Constant(2, 4.0);
          hp::DisintegrationOptions opt;
          opt.outer_nodes = 32;
          opt.step = 0.012;
          auto res = hp::disintegration_check(prob, opt);
          bool ok = res.rel_error <= 1e-4;
          pass = pass && ok;
          results.push_back(json{{"case", "linear-nonorthonormal"},
                                 {"lhs", res.lhs},
                                 {"rhs", res.rhs},
                                 {"rel_error", res.rel_error},
                                 {"tolerance", 1e-4},
                                 {"pass", ok}});
        }

        json config{{"subcommand", "disintegration"}};
        json doc = artifact_header(config);
        doc["cases"] = results;
        doc["pass"] = pass;
        emit(*out, doc.dump(2) + "\n");
        return pass ? 0 : 1;
      };
    });
  }

  // ---- selftest -----------------------------------------------------------
  {
    auto* cmd = app.add_subcommand("selftest", "run the fast invariant battery");
    cmd->callback([&runner]() { runner = run_selftest; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) {
      json err{{"error", e.what()}, {"kind", "usage"}};
      std::cerr << err.dump() << "\n";
    }
    return app.exit(e);
  }

  try {
    return runner();
  } catch (const std::exception& e) {
    json err{{"error", e.what()}, {"kind", "runtime"}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
