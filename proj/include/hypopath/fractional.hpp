#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace hypopath {

enum class FracSide { Left, Right };

namespace detail {

inline double gamma_fn(double x) { return std::tgamma(x); }

// Product-integration weights are built from closed-form cell integrals of
// the kernel against linear interpolants, so every operator below is exact
// on piecewise-linear input data. Quadrature error enters only through the
// deviation of the true function from its chord on each cell.

// int_A^B tau^{alpha-1} (c0 + c1 tau) dtau for 0 <= A < B.
inline double kernel_cell_int(double A, double B, double alpha, double c0, double c1,
                              double Apow, double Bpow) {
  // Apow = A^alpha, Bpow = B^alpha precomputed by the caller
  double term0 = c0 * (Bpow - Apow) / alpha;
  double term1 = c1 * (B * Bpow - A * Apow) / (alpha + 1.0);
  return term0 + term1;
}

}  // namespace detail

// Left/right Riemann-Liouville fractional integral of order alpha > 0 of a
// uniformly sampled function on [0, T]; exact for piecewise-linear f.
inline Eigen::VectorXd frac_integral(const Eigen::VectorXd& f, double T, double alpha,
                                     FracSide side = FracSide::Left) {
  if (!(alpha > 0.0)) throw std::invalid_argument("frac_integral: alpha must be positive");
  const int n = static_cast<int>(f.size()) - 1;
  if (n < 1 || !(T > 0.0)) throw std::invalid_argument("frac_integral: need a grid on (0, T]");
  const double dt = T / n;
  const double inv_gamma = 1.0 / detail::gamma_fn(alpha);

  std::vector<double> pa(n + 1), pa1(n + 1);
  for (int k = 0; k <= n; ++k) {
    pa[k] = std::pow(k * dt, alpha);
    pa1[k] = pa[k] * (k * dt);
  }

  Eigen::VectorXd out = Eigen::VectorXd::Zero(n + 1);
  if (side == FracSide::Left) {
    for (int i = 1; i <= n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < i; ++j) {
        // tau = t_i - s on cell [t_j, t_{j+1}]: f(s) = f_j + m (B - tau)
        const int kb = i - j, ka = i - j - 1;
        const double B = kb * dt;
        const double m = (f[j + 1] - f[j]) / dt;
        const double c0 = f[j] + m * B;
        acc += detail::kernel_cell_int(ka * dt, B, alpha, c0, -m, pa[ka], pa[kb]);
      }
      out[i] = acc * inv_gamma;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = i; j < n; ++j) {
        // tau = s - t_i on cell [t_j, t_{j+1}]: f(s) = f_j + m (tau - A)
        const int ka = j - i, kb = j - i + 1;
        const double A = ka * dt;
        const double m = (f[j + 1] - f[j]) / dt;
        const double c0 = f[j] - m * A;
        acc += detail::kernel_cell_int(A, kb * dt, alpha, c0, m, pa[ka], pa[kb]);
      }
      out[i] = acc * inv_gamma;
    }
  }
  return out;
}

// Discrete Hoelder-quotient heuristic backing the regularity precondition of
// the Marchaud derivative.
inline double holder_quotient(const Eigen::VectorXd& f, double T, double exponent) {
  const int n = static_cast<int>(f.size()) - 1;
  const double dt = T / n;
  double worst = 0.0;
  for (int i = 0; i < n; ++i)
    worst = std::max(worst, std::abs(f[i + 1] - f[i]) / std::pow(dt, exponent));
  return worst;
}

// Left Marchaud fractional derivative of order alpha in (0,1):
//   (D^a f)(t) = (1/Gamma(1-a)) [ f(t)/t^a + a int_0^t (f(t)-f(s))/(t-s)^{1+a} ds ].
// The singular local cell is integrated exactly against the linear
// interpolant (its constant term cancels), the tail cells likewise.
inline Eigen::VectorXd frac_deriv(const Eigen::VectorXd& f, double T, double alpha,
                                  bool* regularity_warning = nullptr) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("frac_deriv: need alpha in (0,1)");
  const int n = static_cast<int>(f.size()) - 1;
  if (n < 1 || !(T > 0.0)) throw std::invalid_argument("frac_deriv: need a grid on (0, T]");
  const double dt = T / n;
  const double inv_gamma = 1.0 / detail::gamma_fn(1.0 - alpha);

  if (regularity_warning) {
    double hq = holder_quotient(f, T, std::min(1.0, alpha + 0.05));
    double scale = 1.0 + f.cwiseAbs().maxCoeff();
    *regularity_warning = hq > 20.0 * scale;
  }

  std::vector<double> pm(n + 1), p1m(n + 1);
  pm[0] = std::numeric_limits<double>::infinity();
  p1m[0] = 0.0;
  for (int k = 1; k <= n; ++k) {
    p1m[k] = std::pow(k * dt, 1.0 - alpha);
    pm[k] = p1m[k] / (k * dt);
  }

  Eigen::VectorXd out(n + 1);
  out[0] = f[0] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  for (int i = 1; i <= n; ++i) {
    double acc = 0.0;
    for (int j = 0; j + 1 < i; ++j) {
      // tau = t_i - s: numerator f(t_i) - f(s) = C + m tau, C = f_i - f_j - m B
      const int kb = i - j, ka = i - j - 1;
      const double m = (f[j + 1] - f[j]) / dt;
      const double C = f[i] - f[j] - m * (kb * dt);
      acc += C * (pm[ka] - pm[kb]) / alpha + m * (p1m[kb] - p1m[ka]) / (1.0 - alpha);
    }
    // local cell: the constant part vanishes on the linear interpolant
    const double m_loc = (f[i] - f[i - 1]) / dt;
    acc += m_loc * p1m[1] / (1.0 - alpha);
    out[i] = inv_gamma * (f[i] * pm[i] + alpha * acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Non-uniform product integration, used for the graded-prefix evaluation of
// the operator K and its inverse near the time origin, where the weights
// t^{1/2 - H} are singular.

// Graded node set on [0, T]: the uniform grid plus a geometric refinement of
// the first refine_cells uniform cells. Nodes are fixed fractions of T, so
// all operators built on them inherit exact scaling covariance.
struct HybridGrid {
  std::vector<double> nodes;       // increasing, nodes.front() = 0, back() = T
  std::vector<int> uniform_index;  // position of t_i = i T / n within nodes
};

inline HybridGrid hybrid_grid(double T, int n, int refine_cells, double ratio = 1.6,
                              double floor_frac = 1e-10) {
  std::vector<double> fracs;
  for (int i = 1; i <= n; ++i) fracs.push_back(static_cast<double>(i) / n);
  if (refine_cells > 0) {
    double x = static_cast<double>(refine_cells) / n / ratio;
    while (x > floor_frac) {
      fracs.push_back(x);
      x /= ratio;
    }
    std::sort(fracs.begin(), fracs.end());
    fracs.erase(std::unique(fracs.begin(), fracs.end(),
                            [](double a, double b) { return std::abs(a - b) < 1e-14; }),
                fracs.end());
  }
  HybridGrid g;
  g.nodes.push_back(0.0);
  for (double f : fracs) g.nodes.push_back(T * f);
  g.uniform_index.assign(n + 1, 0);
  int j = 0;
  for (int i = 1; i <= n; ++i) {
    double target = static_cast<double>(i) / n;
    while (j + 1 < static_cast<int>(fracs.size()) && fracs[j] < target - 1e-14) ++j;
    g.uniform_index[i] = j + 1;  // +1 for the leading zero node
  }
  return g;
}

// I^alpha over an arbitrary increasing node set, evaluated at node j.
inline double frac_integral_at(const std::vector<double>& s, const std::vector<double>& v,
                               double alpha, int j) {
  const double t = s[j];
  double acc = 0.0;
  double prev_pow = std::pow(t - s[0], alpha);
  for (int k = 0; k < j; ++k) {
    const double A = t - s[k + 1];
    const double B = t - s[k];
    const double Bpow = prev_pow;
    const double Apow = (k + 1 == j) ? 0.0 : std::pow(A, alpha);
    prev_pow = Apow;
    const double m = (v[k + 1] - v[k]) / (s[k + 1] - s[k]);
    // f(s) = v_k + m (s - s_k) = (v_k + m B) - m tau with tau = t - s
    acc += detail::kernel_cell_int(A, B, alpha, v[k] + m * B, -m, Apow, Bpow);
  }
  return acc / detail::gamma_fn(alpha);
}

// Marchaud derivative over an arbitrary increasing node set at node j.
inline double frac_deriv_at(const std::vector<double>& s, const std::vector<double>& v,
                            double alpha, int j) {
  const double t = s[j];
  if (j == 0) return v[0] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (int k = 0; k + 1 < j; ++k) {
    const double A = t - s[k + 1];
    const double B = t - s[k];
    const double m = (v[k + 1] - v[k]) / (s[k + 1] - s[k]);
    const double C = v[j] - v[k] - m * B;
    acc += C * (std::pow(A, -alpha) - std::pow(B, -alpha)) / alpha +
           m * (std::pow(B, 1.0 - alpha) - std::pow(A, 1.0 - alpha)) / (1.0 - alpha);
  }
  const double h_loc = s[j] - s[j - 1];
  const double m_loc = (v[j] - v[j - 1]) / h_loc;
  acc += m_loc * std::pow(h_loc, 1.0 - alpha) / (1.0 - alpha);
  return (v[j] / std::pow(t, alpha) + alpha * acc) / detail::gamma_fn(1.0 - alpha);
}

namespace detail {

inline double pl_interp(const Eigen::VectorXd& f, double T, double t) {
  const int n = static_cast<int>(f.size()) - 1;
  double x = t / T * n;
  int i = std::min(static_cast<int>(x), n - 1);
  double w = x - i;
  return (1.0 - w) * f[i] + w * f[i + 1];
}

inline Eigen::VectorXd centered_diff(const Eigen::VectorXd& h, double T) {
  const int n = static_cast<int>(h.size()) - 1;
  const double dt = T / n;
  Eigen::VectorXd d(n + 1);
  d[0] = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * dt);
  for (int i = 1; i < n; ++i) d[i] = (h[i + 1] - h[i - 1]) / (2.0 * dt);
  d[n] = (3.0 * h[n] - 4.0 * h[n - 1] + h[n - 2]) / (2.0 * dt);
  return d;
}

inline double trapezoid_sq(const std::vector<double>& s, const std::vector<double>& v) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < s.size(); ++k)
    acc += 0.5 * (v[k] * v[k] + v[k + 1] * v[k + 1]) * (s[k + 1] - s[k]);
  return acc;
}

}  // namespace detail

// The isomorphism K of the Cameron-Martin space, with the convention c_H = 1
// (the universal constant is never pinned down; every downstream use is a
// ratio, the H = 1/2 case, or a bound reported up to constants).
//
// H > 1/2:  K phi = I^1[ t^{H-1/2} I^{H-1/2}( s^{1/2-H} phi ) ]
// H = 1/2:  K phi = I^1 phi
// H < 1/2:  K phi = I^{2H}[ t^{1/2-H} I^{1/2-H}( s^{H-1/2} phi ) ]
inline Eigen::VectorXd k_apply(const Eigen::VectorXd& phi, double T, double H,
                               int refine_cells = 8) {
  const int n = static_cast<int>(phi.size()) - 1;
  if (!(H > 0.0 && H < 1.0)) throw std::invalid_argument("k_apply: H out of (0,1)");
  if (H == 0.5) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n + 1);
    const double dt = T / n;
    for (int i = 1; i <= n; ++i) out[i] = out[i - 1] + 0.5 * (phi[i - 1] + phi[i]) * dt;
    return out;
  }
  const double a = std::abs(H - 0.5);               // inner integral order
  const double wexp = H > 0.5 ? 0.5 - H : H - 0.5;  // inner weight exponent, negative
  const double outer = H > 0.5 ? 1.0 : 2.0 * H;

  HybridGrid grid = hybrid_grid(T, n, refine_cells);
  const auto& s = grid.nodes;
  const int M = static_cast<int>(s.size()) - 1;
  std::vector<double> w(M + 1), z(M + 1);
  for (int k = 1; k <= M; ++k) w[k] = std::pow(s[k], wexp) * detail::pl_interp(phi, T, s[k]);
  w[0] = w[1];  // flat head extension under the singular weight
  for (int k = 0; k <= M; ++k)
    z[k] = (k == 0 ? 0.0 : std::pow(s[k], -wexp) * frac_integral_at(s, w, a, k));

  // outer fractional integral on the hybrid nodes, read off at uniform nodes
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n + 1);
  for (int i = 1; i <= n; ++i) out[i] = frac_integral_at(s, z, outer, grid.uniform_index[i]);
  return out;
}

// Inverse of K for H >= 1/2 (single component):
//   H > 1/2: (K^{-1} h)(t) = t^{H-1/2} D^{H-1/2}( s^{1/2-H} h'(s) )(t)
//   H = 1/2: (K^{-1} h)(t) = h'(t)
// with h' by centered differences. The exact inverse for H < 1/2 would push a
// derivative of order 2H through rough data and is not provided.
inline Eigen::VectorXd k_inverse(const Eigen::VectorXd& h, double T, double H,
                                 int refine_cells = 0) {
  const int n = static_cast<int>(h.size()) - 1;
  if (n < 2) throw std::invalid_argument("k_inverse: need at least 3 samples");
  if (H == 0.5) return detail::centered_diff(h, T);
  if (!(H > 0.5 && H < 1.0))
    throw std::invalid_argument("k_inverse: exact inverse requires H in [1/2, 1)");
  const double a = H - 0.5;
  Eigen::VectorXd hd = detail::centered_diff(h, T);

  if (refine_cells <= 0) {
    // uniform fast path (used by the join pipeline, whose paths start flat):
    // the pow tables inside frac_deriv make this O(n^2) additions, not pows
    const double dt = T / n;
    Eigen::VectorXd w(n + 1);
    for (int i = 1; i <= n; ++i) w[i] = std::pow(i * dt, -a) * hd[i];
    w[0] = w[1];
    Eigen::VectorXd out = frac_deriv(w, T, a);
    out[0] = 0.0;
    for (int i = 1; i <= n; ++i) out[i] *= std::pow(i * dt, a);
    return out;
  }

  HybridGrid grid = hybrid_grid(T, n, refine_cells);
  const auto& s = grid.nodes;
  const int M = static_cast<int>(s.size()) - 1;
  std::vector<double> w(M + 1);
  for (int k = 1; k <= M; ++k) w[k] = std::pow(s[k], -a) * detail::pl_interp(hd, T, s[k]);
  w[0] = w[1];
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n + 1);
  for (int i = 1; i <= n; ++i) {
    double t = T * static_cast<double>(i) / n;
    out[i] = std::pow(t, a) * frac_deriv_at(s, w, a, grid.uniform_index[i]);
  }
  return out;
}

// Cameron-Martin path candidate sampled on a uniform grid over [0, horizon].
struct CMFunction {
  double horizon = 1.0;
  double hurst = 0.5;
  Eigen::MatrixXd values;  // (n+1) x d, first row must vanish

  int cells() const { return static_cast<int>(values.rows()) - 1; }
  int dim() const { return static_cast<int>(values.cols()); }

  static CMFunction make(double horizon, double hurst, Eigen::MatrixXd values) {
    if (!(horizon > 0.0)) throw std::invalid_argument("CMFunction: horizon must be positive");
    if (!(hurst > 0.25 && hurst < 1.0)) throw std::invalid_argument("CMFunction: H out of (1/4, 1)");
    if (values.rows() < 3) throw std::invalid_argument("CMFunction: need at least 3 samples");
    if (values.row(0).norm() != 0.0)
      throw std::invalid_argument("CMFunction: paths start at the origin");
    CMFunction f;
    f.horizon = horizon;
    f.hurst = hurst;
    f.values = std::move(values);
    return f;
  }
};

enum class CmNormMode { Auto, Exact, Surrogate };

struct CmNormResult {
  double value = 0.0;
  bool exact = false;      // exact Cameron-Martin norm vs W^{1,2} surrogate
  bool canonical = true;   // false when a surrogate was requested for H > 1/2
};

// ||h||_{Hbar}: exact via ||K^{-1} h||_{L^2} per component for H >= 1/2;
// W^{1,2} surrogate otherwise (an upper bound up to an H-dependent constant).
inline CmNormResult cm_norm(const CMFunction& h, CmNormMode mode = CmNormMode::Auto,
                            int refine_cells = 0) {
  CmNormResult res;
  const bool exact_possible = h.hurst >= 0.5;
  bool use_exact;
  switch (mode) {
    case CmNormMode::Auto:
      use_exact = exact_possible;
      break;
    case CmNormMode::Exact:
      if (!exact_possible)
        throw std::invalid_argument("cm_norm: exact mode requires H >= 1/2");
      use_exact = true;
      break;
    case CmNormMode::Surrogate:
      use_exact = false;
      break;
  }
  res.exact = use_exact;
  res.canonical = use_exact || h.hurst < 0.5;

  const int n = h.cells();
  double total = 0.0;
  if (use_exact) {
    const double dt = h.horizon / n;
    for (int c = 0; c < h.dim(); ++c) {
      Eigen::VectorXd phi = k_inverse(h.values.col(c), h.horizon, h.hurst, refine_cells);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += 0.5 * (phi[i] * phi[i] + phi[i + 1] * phi[i + 1]) * dt;
      total += acc;
    }
  } else {
    const double dt = h.horizon / n;
    for (int c = 0; c < h.dim(); ++c)
      for (int i = 0; i < n; ++i) {
        double slope = (h.values(i + 1, c) - h.values(i, c)) / dt;
        total += slope * slope * dt;
      }
  }
  res.value = std::sqrt(total);
  return res;
}

// Natural pairing <f, h> = int f dh by the midpoint Stieltjes sum, summed
// over components.
inline double pairing(const Eigen::MatrixXd& f, const CMFunction& h) {
  if (f.rows() != h.values.rows() || f.cols() != h.values.cols())
    throw std::invalid_argument("pairing: sample shape mismatch");
  double acc = 0.0;
  for (int c = 0; c < h.dim(); ++c)
    for (int i = 0; i < h.cells(); ++i)
      acc += 0.5 * (f(i, c) + f(i + 1, c)) * (h.values(i + 1, c) - h.values(i, c));
  return acc;
}

}  // namespace hypopath
