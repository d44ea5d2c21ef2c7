#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypopath/fbm.hpp"
#include "hypopath/join.hpp"
#include "hypopath/lyndon.hpp"
#include "hypopath/numerics.hpp"
#include "hypopath/parallel.hpp"
#include "hypopath/vfield.hpp"

namespace hypopath {

inline Eigen::MatrixXd coords_matrix(const std::vector<LieElement>& samples) {
  if (samples.empty()) return Eigen::MatrixXd();
  Eigen::MatrixXd m(samples.size(), samples.front().coords.size());
  for (std::size_t i = 0; i < samples.size(); ++i) m.row(i) = samples[i].coords.transpose();
  return m;
}

struct KdeEstimate {
  Eigen::MatrixXd points;
  Eigen::VectorXd bandwidth;
  Eigen::VectorXd density;
  Eigen::VectorXd std_error;
};

inline Eigen::VectorXd scott_bandwidth(const Eigen::MatrixXd& samples) {
  const auto n = samples.rows();
  const auto m = samples.cols();
  Eigen::VectorXd h(m);
  double factor = std::pow(static_cast<double>(n), -1.0 / (m + 4.0));
  for (Eigen::Index j = 0; j < m; ++j) {
    double mean = samples.col(j).mean();
    double var = (samples.col(j).array() - mean).square().sum() / (n - 1);
    h[j] = std::max(std::sqrt(var), 1e-12) * factor;
  }
  return h;
}

// Gaussian-product kernel density estimate evaluated at the given points,
// with a per-point standard error from the empirical kernel variance.
inline KdeEstimate kde_rho(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& points,
                           Eigen::VectorXd bandwidth = Eigen::VectorXd()) {
  const auto n = samples.rows();
  const auto m = samples.cols();
  if (n < 1000) throw std::invalid_argument("kde_rho: need at least 10^3 samples");
  if (bandwidth.size() == 0) bandwidth = scott_bandwidth(samples);
  if (bandwidth.size() != m || (bandwidth.array() <= 0.0).any())
    throw std::invalid_argument("kde_rho: bandwidth must be positive per dimension");

  KdeEstimate est;
  est.points = points;
  est.bandwidth = bandwidth;
  est.density.resize(points.rows());
  est.std_error.resize(points.rows());
  if (points.rows() == 0) return est;

  const double norm =
      std::pow(2.0 * M_PI, -0.5 * static_cast<double>(m)) / bandwidth.prod();
  std::vector<double> dens(points.rows()), se(points.rows());
  parallel_for(points.rows(), [&](std::size_t p) {
    double acc = 0.0, acc2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double q = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        double z = (points(p, j) - samples(i, j)) / bandwidth[j];
        q += z * z;
      }
      double k = norm * std::exp(-0.5 * q);
      acc += k;
      acc2 += k * k;
    }
    double mean = acc / n;
    double var = std::max(0.0, acc2 / n - mean * mean);
    dens[p] = mean;
    se[p] = std::sqrt(var / n);
  });
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    est.density[p] = dens[p];
    est.std_error[p] = se[p];
  }
  return est;
}

// Exact mass of the product-Gaussian KDE inside an axis box (per-sample
// Gaussian CDF factors), used to report the mass defect of an estimate.
inline double kde_box_mass(const Eigen::MatrixXd& samples, const Eigen::VectorXd& bandwidth,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const auto n = samples.rows();
  const auto m = samples.cols();
  auto Phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (Eigen::Index j = 0; j < m; ++j)
      p *= Phi((hi[j] - samples(i, j)) / bandwidth[j]) - Phi((lo[j] - samples(i, j)) / bandwidth[j]);
    acc += p;
  }
  return acc / n;
}

struct PositivityReport {
  double min_density = 0.0;
  double min_density_se = 0.0;
  Eigen::VectorXd argmin;
  bool positive = false;      // min - 3 SE > 0
  bool inconclusive = false;  // the statistic is dominated by its error
  int probe_count = 0;
};

// Desk-scale positivity probe for the log-signature density: KDE of U_t over
// a lattice filling the HS-ball of radius M. The batch grid covers [0, t], so
// any t > 0 is admissible.
inline PositivityReport positivity_report(double hurst, double t, const BasisPtr& basis,
                                          double box_radius, int n_samples, std::uint64_t seed,
                                          int grid_cells = 128, int lattice_per_dim = 7) {
  FbmBatch batch(hurst, grid_cells, basis->dim(), n_samples, derive_seed(seed, 11), t);
  Eigen::MatrixXd samples = coords_matrix(sample_log_signature(batch, t, basis));

  const int m = basis->total_dim();
  std::vector<Eigen::VectorXd> lattice;
  std::vector<int> idx(m, 0);
  for (;;) {
    Eigen::VectorXd u(m);
    for (int j = 0; j < m; ++j)
      u[j] = box_radius * (2.0 * idx[j] / (lattice_per_dim - 1.0) - 1.0);
    if (hs_norm(LieElement(basis, u)) <= box_radius) lattice.push_back(u);
    int j = 0;
    while (j < m && ++idx[j] == lattice_per_dim) idx[j++] = 0;
    if (j == m) break;
  }

  Eigen::MatrixXd points(lattice.size(), m);
  for (std::size_t i = 0; i < lattice.size(); ++i) points.row(i) = lattice[i].transpose();
  auto est = kde_rho(samples, points);

  PositivityReport rep;
  rep.probe_count = static_cast<int>(lattice.size());
  Eigen::Index arg = 0;
  rep.min_density = est.density.minCoeff(&arg);
  rep.min_density_se = est.std_error[arg];
  rep.argmin = points.row(arg);
  rep.positive = rep.min_density - 3.0 * rep.min_density_se > 0.0;
  rep.inconclusive = !rep.positive && rep.min_density > 0.0;
  return rep;
}

struct RhoScalingRow {
  Eigen::VectorXd point;
  double lhs = 0.0;       // KDE of U_t at u
  double rhs = 0.0;       // t^{-H nu} KDE of U_1 at delta_{t^{-H}} u
  double ratio = 0.0;
  double band = 0.0;      // MC standard error of the ratio
};

// Self-similarity of the log-signature density: rho_t(u) against the dilated
// and volume-corrected rho_1, on independent batches.
inline std::vector<RhoScalingRow> scaling_check_rho(double hurst, double t, const BasisPtr& basis,
                                                    const Eigen::MatrixXd& points, int n_samples,
                                                    std::uint64_t seed, int grid_cells = 128) {
  if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("scaling_check_rho: need t in (0, 1]");
  // matched cell counts over [0, t] and [0, 1]: the dilation then maps one
  // sampled law exactly onto the other, and Scott bandwidths dilate along,
  // so the smoothing bias cancels from the ratio
  FbmBatch batch_t(hurst, grid_cells, basis->dim(), n_samples, derive_seed(seed, 21), t);
  FbmBatch batch_1(hurst, grid_cells, basis->dim(), n_samples, derive_seed(seed, 22));
  Eigen::MatrixXd samples_t = coords_matrix(sample_log_signature(batch_t, t, basis));
  Eigen::MatrixXd samples_1 = coords_matrix(sample_log_signature(batch_1, 1.0, basis));

  const double nu = static_cast<double>(basis->homogeneous_dimension());
  const double volume_factor = std::pow(t, -hurst * nu);
  Eigen::MatrixXd dilated_points = points;
  for (int k = 1; k <= basis->level(); ++k) {
    double s = std::pow(t, -hurst * k);
    for (int j = 0; j < basis->level_dim(k); ++j)
      dilated_points.col(basis->level_offset(k) + j) *= s;
  }

  auto lhs = kde_rho(samples_t, points);
  auto rhs = kde_rho(samples_1, dilated_points);
  std::vector<RhoScalingRow> rows(points.rows());
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    RhoScalingRow& r = rows[p];
    r.point = points.row(p);
    r.lhs = lhs.density[p];
    r.rhs = volume_factor * rhs.density[p];
    double se_rhs = volume_factor * rhs.std_error[p];
    if (r.rhs > 0.0 && r.lhs > 0.0) {
      r.ratio = r.lhs / r.rhs;
      double rel = std::sqrt(std::pow(lhs.std_error[p] / r.lhs, 2) + std::pow(se_rhs / r.rhs, 2));
      r.band = r.ratio * rel;
    }
  }
  return rows;
}

struct TaylorOrderOptions {
  int signature_cells = 64;  // resolution of the signature over [0, t]
  int flow_refine = 8;       // the flow grid is this many times finer
  FlowOptions flow{0.0, 1, 1e8, false, false};
  double noise_floor = 1e-8;
};

struct TaylorOrderResult {
  std::vector<double> t_values;
  std::vector<double> mean_errors;
  double slope = 0.0;
  bool noise_floor_hit = false;
  bool short_span = false;  // t-range below 1.5 decades
};

// Order of the Taylor approximation in small time: mean |X_t - X_l(t, x)|
// against t, with X_t flown on a refined grid and the log-signature read at
// fixed per-interval resolution. The fitted slope tracks H times the
// effective approximation order.
inline TaylorOrderResult taylor_error_order(const VectorFieldSystem& sys, const Eigen::VectorXd& x,
                                            double hurst, const BasisPtr& basis,
                                            const std::vector<double>& t_list, int n_samples,
                                            std::uint64_t seed, const TaylorOrderOptions& opt = {}) {
  if (t_list.size() < 2) throw std::invalid_argument("taylor_error_order: need >= 2 time points");
  double t_min = *std::min_element(t_list.begin(), t_list.end());
  double t_max = *std::max_element(t_list.begin(), t_list.end());
  double decades = std::log10(t_max / t_min);
  if (decades < 1.0)
    throw std::invalid_argument("taylor_error_order: t range must span at least one decade");

  TaylorOrderResult res;
  res.short_span = decades < 1.5;
  TaylorPolynomial F(sys, x, basis->level());
  const int fine_cells = opt.signature_cells * opt.flow_refine;

  for (std::size_t ti = 0; ti < t_list.size(); ++ti) {
    const double t = t_list[ti];
    FbmBatch batch(hurst, fine_cells, basis->dim(), n_samples,
                   derive_seed(seed, 100 + ti), t);
    std::vector<double> times(fine_cells + 1);
    for (int i = 0; i <= fine_cells; ++i) times[i] = batch.time_at(i);

    std::vector<double> errors(n_samples);
    parallel_for(n_samples, [&](std::size_t i) {
      Eigen::MatrixXd p = batch.path(static_cast<int>(i));
      Eigen::VectorXd endpoint =
          flow(sys, x, GridPath::polyline(times, p), opt.flow).endpoint;
      Eigen::MatrixXd inc(opt.signature_cells, basis->dim());
      for (int k = 0; k < opt.signature_cells; ++k)
        inc.row(k) = p.row((k + 1) * opt.flow_refine) - p.row(k * opt.flow_refine);
      LieElement u = from_tensor(
          basis, tensor_log(signature_of_increments(inc, basis->level())), 1e-6);
      errors[i] = (endpoint - x - F.eval(u)).norm();
    });
    auto st = moments(errors);
    res.t_values.push_back(t);
    res.mean_errors.push_back(st.mean);
    if (st.mean < opt.noise_floor) res.noise_floor_hit = true;
  }
  res.slope = fit_loglog_slope(res.t_values, res.mean_errors);
  return res;
}

struct DensityLowerOptions {
  int grid_cells = 128;
  int volume_probes = 300;
  int min_kept = 500;
  JoinOptions join;
};

struct DensityLowerReport {
  double r_cutoff = 0.0;          // detected submersion radius
  double kept_fraction = 0.0;     // samples with ||U_t|| < r/2
  double density_at_x = 0.0;      // estimated density of X_l(t, x) at y = x
  double density_se = 0.0;
  double ball_volume = 0.0;       // |B_d(x, t^H)| by Monte Carlo
  double ball_volume_se = 0.0;
  double product = 0.0;           // density * volume, the stability statistic
  bool insufficient_samples = false;
};

namespace detail {

// Largest HS radius at which the kernel stays within a factor 10 of its value
// at the origin, over random directions: a numerical stand-in for the
// submersion radius.
inline double detect_submersion_radius(const VectorFieldSystem& sys, const BasisPtr& basis,
                                       const Eigen::VectorXd& x, std::uint64_t seed) {
  LieElement origin(basis);
  double k0 = kernel_K(sys, origin, x);
  SplitMix64 rng(derive_seed(seed, 31));
  std::vector<LieElement> dirs;
  for (int i = 0; i < 16; ++i) {
    LieElement u = random_lie(basis, rng);
    u *= 1.0 / hs_norm(u);
    dirs.push_back(u);
  }
  double rho = 2.0;
  while (rho > 1e-3) {
    bool ok = true;
    for (const auto& d : dirs) {
      try {
        if (kernel_K(sys, rho * d, x) > 10.0 * k0) {
          ok = false;
          break;
        }
      } catch (const std::runtime_error&) {
        ok = false;
        break;
      }
    }
    if (ok) return rho;
    rho *= 0.8;
  }
  return rho;
}

}  // namespace detail

// Stability statistic behind the local density lower bound: the product of
// the (eta-localized) density of the Taylor process at y = x and the volume
// of the control ball of radius t^H should stay of order one as t varies.
inline DensityLowerReport taylor_density_lower(const VectorFieldSystem& sys,
                                               const Eigen::VectorXd& x, double hurst,
                                               const BasisPtr& basis, double t, int n_samples,
                                               std::uint64_t seed,
                                               const DensityLowerOptions& opt = {}) {
  DensityLowerReport rep;
  rep.r_cutoff = detail::detect_submersion_radius(sys, basis, x, seed);

  FbmBatch batch(hurst, opt.grid_cells, basis->dim(), n_samples, derive_seed(seed, 41), t);
  auto us = sample_log_signature(batch, t, basis);
  TaylorPolynomial F(sys, x, basis->level());

  std::vector<Eigen::VectorXd> kept;
  for (const auto& u : us)
    if (hs_norm(u) < 0.5 * rep.r_cutoff) kept.push_back(x + F.eval(u));
  rep.kept_fraction = static_cast<double>(kept.size()) / n_samples;
  if (static_cast<int>(kept.size()) < opt.min_kept) {
    rep.insufficient_samples = true;
    return rep;
  }

  Eigen::MatrixXd pts(kept.size(), sys.state_dim());
  for (std::size_t i = 0; i < kept.size(); ++i) pts.row(i) = kept[i].transpose();
  Eigen::MatrixXd eval_pt = x.transpose();
  auto est = kde_rho(pts, eval_pt);
  rep.density_at_x = est.density[0] * rep.kept_fraction;
  rep.density_se = est.std_error[0] * rep.kept_fraction;

  // control-ball volume by rejection sampling over a probing box
  const double radius = std::pow(t, hurst);
  const int N = sys.state_dim();
  Eigen::VectorXd half_width(N);
  for (int j = 0; j < N; ++j) {
    double lo = 0.0, hi = radius;
    auto inside = [&](double s) {
      Eigen::VectorXd y = x;
      y[j] += s;
      try {
        return distance_upper(sys, x, y, basis, hurst, opt.join).value <= 1.2 * radius;
      } catch (const std::exception&) {
        return false;
      }
    };
    while (inside(hi) && hi < 1e3) hi *= 2.0;
    for (int it = 0; it < 12; ++it) {
      double mid = 0.5 * (lo + hi);
      (inside(mid) ? lo : hi) = mid;
    }
    half_width[j] = hi;
  }

  SplitMix64 rng(derive_seed(seed, 51));
  int inside_count = 0;
  for (int i = 0; i < opt.volume_probes; ++i) {
    Eigen::VectorXd y = x;
    for (int j = 0; j < N; ++j) y[j] += half_width[j] * (2.0 * rng.next_uniform() - 1.0);
    try {
      if (distance_upper(sys, x, y, basis, hurst, opt.join).value <= radius) ++inside_count;
    } catch (const std::exception&) {
    }
  }
  double box_volume = 1.0;
  for (int j = 0; j < N; ++j) box_volume *= 2.0 * half_width[j];
  double p = static_cast<double>(inside_count) / opt.volume_probes;
  rep.ball_volume = p * box_volume;
  rep.ball_volume_se = box_volume * std::sqrt(p * (1.0 - p) / opt.volume_probes);
  rep.product = rep.density_at_x * rep.ball_volume;
  return rep;
}

// ---------------------------------------------------------------------------
// Disintegration over the fibers of a submersion F: R^m -> R^n with
// one-dimensional fibers, checked by quadrature: the ambient integral of phi
// equals the outer integral over y of the fiber integrals of
// phi / sqrt(det(JF JF^T)).

struct DisintegrationProblem {
  int ambient_dim = 0;
  int target_dim = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> map;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;  // n x m
  std::function<double(const Eigen::VectorXd&)> test_fn;            // compactly supported
  Eigen::VectorXd support_lo, support_hi;                           // box around supp(test_fn)
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> fiber_seed;  // point on F^{-1}(y)
  Eigen::VectorXd target_lo, target_hi;                             // y-box covering F(supp)
};

struct DisintegrationOptions {
  int ambient_nodes = 48;  // Gauss-Legendre nodes per ambient dimension
  int outer_nodes = 48;    // Gauss-Legendre nodes per target dimension
  double step = 0.004;     // fiber arclength step (Richardson-extrapolated)
  double slack = 1.5;      // how far beyond the support box a fiber is traced
  double rank_threshold = 1e-10;
};

struct DisintegrationResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double rel_error = 0.0;
};

namespace detail {

inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    // Newton iteration from the Chebyshev initial guess
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (x * p1 - p0) / (x * x - 1.0);
    nodes[i] = x;
    weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

// trapezoid integral of phi / ||F* vol|| along the fiber through seed, traced
// by tangent predictor + Newton corrector with the given arclength step
inline double trace_fiber_integral(const DisintegrationProblem& prob, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& seed, double step, double slack,
                                   double rank_threshold) {
  const int m = prob.ambient_dim;
  auto correct = [&](Eigen::VectorXd& p) {
    for (int it = 0; it < 3; ++it) {
      Eigen::VectorXd r = prob.map(p) - y;
      if (r.norm() < 1e-13) break;
      Eigen::MatrixXd J = prob.jacobian(p);
      Eigen::MatrixXd JJt = J * J.transpose();
      if (!(JJt.determinant() > rank_threshold))
        throw std::runtime_error("disintegration_check: rank deficiency on a fiber");
      p -= J.transpose() * JJt.ldlt().solve(r);
    }
  };
  auto tangent = [&](const Eigen::VectorXd& p, const Eigen::VectorXd& prev) {
    Eigen::MatrixXd J = prob.jacobian(p);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    Eigen::MatrixXd ker = lu.kernel();
    if (ker.cols() != 1) throw std::runtime_error("disintegration_check: fiber not a curve");
    Eigen::VectorXd tau = ker.col(0).normalized();
    if (prev.size() > 0 && tau.dot(prev) < 0.0) tau = -tau;
    return tau;
  };
  auto weight = [&](const Eigen::VectorXd& p) {
    Eigen::MatrixXd J = prob.jacobian(p);
    double det = (J * J.transpose()).determinant();
    if (!(det > rank_threshold))
      throw std::runtime_error("disintegration_check: rank deficiency on a fiber");
    return prob.test_fn(p) / std::sqrt(det);
  };
  auto outside = [&](const Eigen::VectorXd& p) {
    for (int j = 0; j < m; ++j) {
      double pad = slack * (prob.support_hi[j] - prob.support_lo[j]);
      if (p[j] < prob.support_lo[j] - pad || p[j] > prob.support_hi[j] + pad) return true;
    }
    return false;
  };

  Eigen::VectorXd start = seed;
  correct(start);
  double acc = 0.0;
  const long max_steps = 200000;
  for (int dir = 0; dir < 2; ++dir) {
    Eigen::VectorXd p = start;
    Eigen::VectorXd tau = tangent(p, Eigen::VectorXd());
    if (dir == 1) tau = -tau;
    double w_prev = weight(p);
    bool closed = false;
    for (long s = 0; s < max_steps; ++s) {
      Eigen::VectorXd q = p + step * tau;
      correct(q);
      double w = weight(q);
      acc += 0.5 * (w_prev + w) * (q - p).norm();
      tau = tangent(q, (q - p));
      // closed-fiber detection: back near the start after a meaningful arc
      if (s > 10 && (q - start).norm() < 0.75 * step) {
        closed = true;
        double w0 = weight(start);
        acc += 0.5 * (w + w0) * (q - start).norm();
        break;
      }
      p = q;
      w_prev = w;
      if (outside(p)) break;
    }
    if (closed) break;  // a closed loop is covered by one direction
  }
  return acc;
}

}  // namespace detail

inline DisintegrationResult disintegration_check(const DisintegrationProblem& prob,
                                                 const DisintegrationOptions& opt = {}) {
  const int m = prob.ambient_dim;
  const int n = prob.target_dim;
  if (m - n != 1)
    throw std::invalid_argument("disintegration_check: only codimension-1 fibers supported");

  std::vector<double> gl_nodes, gl_weights;
  detail::gauss_legendre(opt.ambient_nodes, gl_nodes, gl_weights);

  // left side: tensor Gauss-Legendre over the support box
  double lhs = 0.0;
  {
    std::vector<int> idx(m, 0);
    for (;;) {
      Eigen::VectorXd p(m);
      double w = 1.0;
      for (int j = 0; j < m; ++j) {
        double a = prob.support_lo[j], b = prob.support_hi[j];
        p[j] = 0.5 * (a + b) + 0.5 * (b - a) * gl_nodes[idx[j]];
        w *= 0.5 * (b - a) * gl_weights[idx[j]];
      }
      lhs += w * prob.test_fn(p);
      int j = 0;
      while (j < m && ++idx[j] == opt.ambient_nodes) idx[j++] = 0;
      if (j == m) break;
    }
  }

  std::vector<double> out_nodes, out_weights;
  detail::gauss_legendre(opt.outer_nodes, out_nodes, out_weights);

  // right side: outer Gauss-Legendre over y, fiber integrals inside, with one
  // Richardson extrapolation over the trace step
  std::vector<Eigen::VectorXd> ys;
  std::vector<double> yw;
  {
    std::vector<int> idx(n, 0);
    for (;;) {
      Eigen::VectorXd y(n);
      double w = 1.0;
      for (int j = 0; j < n; ++j) {
        double a = prob.target_lo[j], b = prob.target_hi[j];
        y[j] = 0.5 * (a + b) + 0.5 * (b - a) * out_nodes[idx[j]];
        w *= 0.5 * (b - a) * out_weights[idx[j]];
      }
      ys.push_back(y);
      yw.push_back(w);
      int j = 0;
      while (j < n && ++idx[j] == opt.outer_nodes) idx[j++] = 0;
      if (j == n) break;
    }
  }

  std::vector<double> fiber(ys.size());
  parallel_for(ys.size(), [&](std::size_t i) {
    Eigen::VectorXd seed = prob.fiber_seed(ys[i]);
    double coarse = detail::trace_fiber_integral(prob, ys[i], seed, opt.step, opt.slack,
                                                 opt.rank_threshold);
    double fine = detail::trace_fiber_integral(prob, ys[i], seed, 0.5 * opt.step, opt.slack,
                                               opt.rank_threshold);
    fiber[i] = (4.0 * fine - coarse) / 3.0;
  });
  double rhs = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) rhs += yw[i] * fiber[i];

  DisintegrationResult res;
  res.lhs = lhs;
  res.rhs = rhs;
  res.rel_error = std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
  return res;
}

}  // namespace hypopath
