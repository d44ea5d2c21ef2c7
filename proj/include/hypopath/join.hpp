#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hypopath/fractional.hpp"
#include "hypopath/lyndon.hpp"
#include "hypopath/numerics.hpp"
#include "hypopath/path.hpp"
#include "hypopath/vfield.hpp"

namespace hypopath {

struct PsiOptions {
  double target_residual = 1e-10;
  int max_iterations = 50;
  double rank_threshold = 1e-12;
};

struct PsiResult {
  LieElement v;
  int iterations = 0;
  double residual = 0.0;
  double shift_ratio = 0.0;  // ||v - u||_HS / |eta|
};

// Numerical realization of the correction map: returns v with
// F_l(v, x) = F_l(u, x) + eta, reached from u by minimum-norm Gauss-Newton
// steps. eta = 0 returns u itself with zero iterations.
inline PsiResult psi(const VectorFieldSystem& sys, const LieElement& u, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& eta, const PsiOptions& opt = {}) {
  TaylorPolynomial F(sys, x, u.basis->level());
  Eigen::VectorXd target = F.eval(u) + eta;

  PsiResult res;
  res.v = u;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    Eigen::VectorXd r = F.eval(res.v) - target;
    res.residual = r.norm();
    res.iterations = it;
    if (res.residual <= opt.target_residual) {
      double e = eta.norm();
      res.shift_ratio = e > 0.0 ? hs_norm(res.v - u) / e : 0.0;
      return res;
    }
    Eigen::MatrixXd J = jacobian_JF(sys, res.v, x);
    Eigen::MatrixXd JJt = J * J.transpose();
    if (!(JJt.determinant() > opt.rank_threshold))
      throw std::runtime_error("psi: rank deficient along the correction path");
    res.v.coords -= J.transpose() * JJt.ldlt().solve(r);
  }
  throw std::runtime_error("psi: Newton diverged (residual " + std::to_string(res.residual) + ")");
}

struct JoinOptions {
  double eps_stop = 1e-6;
  int max_iterations = 60;
  double contraction_limit = 0.95;
  int contraction_patience = 3;  // consecutive non-contracting steps tolerated
  int cm_grid = 1 << 11;
  int profile_order = 4;
  CmNormMode norm_mode = CmNormMode::Auto;
  PsiOptions psi;
  FlowOptions flow;
};

struct JoinResult {
  GridPath control;                      // concatenated control on [0, sum |I_m|]
  std::vector<double> interval_lengths;  // |I_m| = cc_len(u_m)
  std::vector<double> residuals;         // |x_m - y|, starting with |x - y|
  double d_upper = 0.0;
  bool norm_exact = false;
  int iterations = 0;
  bool converged = false;
  std::string status;
  double total_length = 0.0;           // sum |I_m|
  double max_logsig_residual = 0.0;    // worst || log S(h_m) - u_m ||
  double max_contraction_ratio = 0.0;  // worst residual ratio after iteration 1
  double endpoint_error = 0.0;         // |flow(x; control) - y| re-integrated
};

inline GridPath with_unit_time(const GridPath& path) {
  GridPath out = path;
  double t0 = path.times.front(), span = path.duration();
  for (auto& t : out.times) t = (t - t0) / span;
  return out;
}

// Iterative construction of a smooth control joining x to y: at each step the
// correction map produces u_m joining x_m to y in the Taylor sense, u_m is
// realized as a path of length |I_m| = cc_len(u_m), and the flow is advanced.
// The pieces concatenate into the control h-tilde whose rescaled
// Cameron-Martin norm bounds the control distance from above.
inline JoinResult join_points(const VectorFieldSystem& sys, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y, const BasisPtr& basis, double hurst,
                              const JoinOptions& opt = {}) {
  if (basis->dim() != sys.drive_dim()) throw std::invalid_argument("join_points: dimension mismatch");
  JoinResult res;
  Eigen::VectorXd xm = x;
  res.residuals.push_back((x - y).norm());

  std::vector<GridPath> pieces;
  ReconstructionOptions rec;
  rec.profile_order = opt.profile_order;
  int stall = 0;

  while (res.iterations < opt.max_iterations) {
    double current = res.residuals.back();
    if (current <= opt.eps_stop) {
      res.converged = true;
      break;
    }
    LieElement zero(basis);
    PsiResult step = psi(sys, zero, xm, y - xm, opt.psi);
    double len = cc_len(step.v);
    if (len == 0.0) {
      res.converged = current <= opt.eps_stop;
      break;
    }
    LieElement unit_u = dilate(step.v, 1.0 / len);
    GridPath piece = path_from_group_element(unit_u, rec).scaled(len);
    res.max_logsig_residual = std::max(
        res.max_logsig_residual,
        (log_signature(piece, basis, 1e6).coords - step.v.coords).norm());

    xm = flow(sys, xm, piece, opt.flow).endpoint;
    pieces.push_back(std::move(piece));
    res.interval_lengths.push_back(len);
    ++res.iterations;

    double next = (xm - y).norm();
    res.residuals.push_back(next);
    if (res.iterations >= 2) {
      double ratio = next / current;
      res.max_contraction_ratio = std::max(res.max_contraction_ratio, ratio);
      if (ratio > opt.contraction_limit) {
        if (++stall >= opt.contraction_patience)
          throw std::runtime_error(
              "join_points: no contraction; |x - y| is likely outside the locality radius");
      } else {
        stall = 0;
      }
    }
    if (next <= opt.eps_stop) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged && res.status.empty()) res.status = "max iterations reached";
  if (res.converged) res.status = "converged";

  if (pieces.empty()) {
    res.control = GridPath::constant(0.0, 1.0, sys.drive_dim());
    res.d_upper = 0.0;
    res.norm_exact = hurst >= 0.5;
    return res;
  }

  res.control = concat(pieces, res.interval_lengths);
  for (double L : res.interval_lengths) res.total_length += L;

  Eigen::MatrixXd samples = res.control.sample_uniform(opt.cm_grid);
  for (int c = 0; c < samples.cols(); ++c) samples.col(c).array() -= samples(0, c);
  CMFunction h = CMFunction::make(res.total_length, hurst, std::move(samples));
  CmNormResult norm = cm_norm(h, opt.norm_mode);
  res.norm_exact = norm.exact;
  res.d_upper = std::pow(res.total_length, hurst) * norm.value;

  res.endpoint_error = (flow(sys, x, res.control, opt.flow).endpoint - y).norm();
  return res;
}

// Explicit elliptic control along the straight segment from x to y:
// h_t = int_0^t V^T (V V^T)^{-1}(z_s) (y - x) ds. Requires ellipticity of
// V V^T along the segment.
inline CMFunction elliptic_join(const VectorFieldSystem& sys, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& y, double hurst, int grid = 1 << 10,
                                double ellipticity_threshold = 1e-8) {
  const int n = sys.state_dim();
  const int d = sys.drive_dim();
  Eigen::MatrixXd integrand(grid + 1, d);
  for (int i = 0; i <= grid; ++i) {
    double s = static_cast<double>(i) / grid;
    Eigen::VectorXd z = (1.0 - s) * x + s * y;
    Eigen::MatrixXd V(n, d);
    for (int a = 1; a <= d; ++a) V.col(a - 1) = sys.field(a, z);
    Eigen::MatrixXd VVt = V * V.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(VVt, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > ellipticity_threshold))
      throw std::runtime_error("elliptic_join: not elliptic on segment");
    integrand.row(i) = (V.transpose() * VVt.ldlt().solve(y - x)).transpose();
  }
  // cumulative Simpson: fourth order, so the endpoint defect is dominated by
  // the flow tolerance rather than this quadrature
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(grid + 1, d);
  const double dt = 1.0 / grid;
  for (int i = 1; i <= grid; ++i) {
    if (i % 2 == 0) {
      h.row(i) = h.row(i - 2) +
                 (dt / 3.0) * (integrand.row(i - 2) + 4.0 * integrand.row(i - 1) + integrand.row(i));
    } else if (i == grid) {
      // odd final cell: trapezoid correction on the last cell
      h.row(i) = h.row(i - 1) + 0.5 * dt * (integrand.row(i - 1) + integrand.row(i));
    } else {
      // odd interior node from the parabola through i-1, i, i+1
      h.row(i) = h.row(i - 1) + (dt / 12.0) * (5.0 * integrand.row(i - 1) +
                                               8.0 * integrand.row(i) - integrand.row(i + 1));
    }
  }
  return CMFunction::make(1.0, hurst, std::move(h));
}

inline GridPath cm_to_path(const CMFunction& h) {
  std::vector<double> times(h.values.rows());
  for (std::size_t i = 0; i < times.size(); ++i)
    times[i] = h.horizon * static_cast<double>(i) / h.cells();
  return GridPath::polyline(std::move(times), h.values);
}

struct DistanceEstimate {
  double value = 0.0;
  bool exact = false;
  JoinResult join;
};

// Upper bound on the control distance d_H(x, y): any admissible control
// bounds the infimum, and the time rescaling trades the interval length for
// the factor (sum |I_m|)^H.
inline DistanceEstimate distance_upper(const VectorFieldSystem& sys, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& y, const BasisPtr& basis,
                                       double hurst, const JoinOptions& opt = {}) {
  DistanceEstimate est;
  est.join = join_points(sys, x, y, basis, hurst, opt);
  if (!est.join.converged)
    throw std::runtime_error("distance_upper: join did not converge (" + est.join.status + ")");
  est.value = est.join.d_upper;
  est.exact = est.join.norm_exact;
  return est;
}

struct ScanRow {
  double radius = 0.0;
  double d_upper = 0.0;
  bool ok = false;
  int iterations = 0;
  std::string note;
};

struct ScanResult {
  std::vector<ScanRow> rows;
  double slope = 0.0;  // fitted log-log slope over successful rows
  int converged_count = 0;
};

inline ScanResult distance_scan(const VectorFieldSystem& sys, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& direction, const std::vector<double>& radii,
                                const BasisPtr& basis, double hurst, const JoinOptions& opt = {}) {
  Eigen::VectorXd dir = direction / direction.norm();
  ScanResult scan;
  std::vector<double> xs, ys;
  for (double r : radii) {
    ScanRow row;
    row.radius = r;
    try {
      auto est = distance_upper(sys, x, (x + r * dir).eval(), basis, hurst, opt);
      row.d_upper = est.value;
      row.ok = true;
      row.iterations = est.join.iterations;
      xs.push_back(r);
      ys.push_back(est.value);
      ++scan.converged_count;
    } catch (const std::exception& e) {
      row.note = e.what();
    }
    scan.rows.push_back(std::move(row));
  }
  if (xs.size() >= 2) scan.slope = fit_loglog_slope(xs, ys);
  return scan;
}

}  // namespace hypopath
