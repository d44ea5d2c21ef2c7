#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "hypopath/lyndon.hpp"
#include "hypopath/rng.hpp"
#include "hypopath/tensor.hpp"

namespace hypopath {

// Monotone polynomial ramp on [0,1]: identically 0 on [0,1/3], identically 1
// on [2/3,1], with the first `order` derivatives vanishing at the junctions.
// Used to reparametrize polyline segments so concatenated paths are smooth
// with derivative supported on the middle third of each piece.
class SmoothBump {
 public:
  explicit SmoothBump(int order = 4) : order_(order) {
    if (order < 1) throw std::invalid_argument("SmoothBump: order must be >= 1");
    // primitive of u^p (1-u)^p expanded binomially, normalized to reach 1
    coeffs_.assign(order_ + 1, 0.0);
    double binom = 1.0;
    for (int j = 0; j <= order_; ++j) {
      coeffs_[j] = ((j % 2 == 0) ? 1.0 : -1.0) * binom / (order_ + j + 1);
      binom *= static_cast<double>(order_ - j) / (j + 1);
    }
    norm_ = ramp_primitive(1.0);
  }

  int order() const { return order_; }

  double value(double s) const {
    if (s <= 1.0 / 3.0) return 0.0;
    if (s >= 2.0 / 3.0) return 1.0;
    return ramp_primitive(3.0 * s - 1.0) / norm_;
  }

  double derivative(double s) const {
    if (s <= 1.0 / 3.0 || s >= 2.0 / 3.0) return 0.0;
    double u = 3.0 * s - 1.0;
    return 3.0 * std::pow(u * (1.0 - u), order_) / norm_;
  }

  // sup |phi''| over [0,1], reported for curvature bookkeeping
  double second_derivative_sup() const {
    double worst = 0.0;
    for (int i = 0; i <= 2000; ++i) {
      double u = i / 2000.0;
      double der = order_ * std::pow(u * (1.0 - u), order_ - 1) * (1.0 - 2.0 * u);
      worst = std::max(worst, std::abs(9.0 * der / norm_));
    }
    return worst;
  }

  double derivative_l2_sq() const {
    // exact: 9 / norm^2 * int_0^1 (u(1-u))^{2p} du / 3
    double integral = 0.0;
    double binom = 1.0;
    for (int j = 0; j <= 2 * order_; ++j) {
      integral += ((j % 2 == 0) ? 1.0 : -1.0) * binom / (2 * order_ + j + 1);
      binom *= static_cast<double>(2 * order_ - j) / (j + 1);
    }
    return 3.0 * integral / (norm_ * norm_);
  }

 private:
  double ramp_primitive(double u) const {
    double acc = 0.0;
    double up = std::pow(u, order_ + 1);
    for (int j = 0; j <= order_; ++j) {
      acc += coeffs_[j] * up;
      up *= u;
    }
    return acc;
  }

  int order_;
  std::vector<double> coeffs_;
  double norm_;
};

enum class SegmentKind { Linear, Smooth };

// d-dimensional path on a time grid. Nodes are polyline vertices; a Smooth
// segment is traversed with the SmoothBump ramp instead of constant speed,
// which changes nothing signature-wise (signatures are invariant under
// reparametrization) but gives compactly supported derivatives.
struct GridPath {
  std::vector<double> times;
  Eigen::MatrixXd values;  // (#nodes) x d
  std::vector<SegmentKind> kinds;
  int profile_order = 4;

  int dim() const { return static_cast<int>(values.cols()); }
  int segment_count() const { return static_cast<int>(times.size()) - 1; }
  double duration() const { return times.back() - times.front(); }

  static GridPath polyline(std::vector<double> times, Eigen::MatrixXd values) {
    GridPath p;
    if (times.size() != static_cast<std::size_t>(values.rows()) || times.size() < 2)
      throw std::invalid_argument("GridPath: need matching times/values with >= 2 nodes");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw std::invalid_argument("GridPath: times not increasing");
    p.kinds.assign(times.size() - 1, SegmentKind::Linear);
    p.times = std::move(times);
    p.values = std::move(values);
    return p;
  }

  static GridPath constant(double t0, double t1, int d) {
    GridPath p;
    p.times = {t0, t1};
    p.values = Eigen::MatrixXd::Zero(2, d);
    p.kinds = {SegmentKind::Linear};
    return p;
  }

  Eigen::RowVectorXd increment(int seg) const { return values.row(seg + 1) - values.row(seg); }

  int segment_of(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    int seg = static_cast<int>(it - times.begin()) - 1;
    return std::clamp(seg, 0, segment_count() - 1);
  }

  Eigen::RowVectorXd position(double t) const {
    if (t <= times.front()) return values.row(0);
    if (t >= times.back()) return values.row(values.rows() - 1);
    int seg = segment_of(t);
    double s = (t - times[seg]) / (times[seg + 1] - times[seg]);
    double w = s;
    if (kinds[seg] == SegmentKind::Smooth) w = SmoothBump(profile_order).value(s);
    return values.row(seg) + w * increment(seg);
  }

  double one_variation() const {
    double acc = 0.0;
    for (int j = 0; j < segment_count(); ++j) acc += increment(j).norm();
    return acc;
  }

  GridPath scaled(double factor) const {
    GridPath p = *this;
    p.values *= factor;
    return p;
  }

  GridPath reversed() const {
    GridPath p = *this;
    const auto n = values.rows();
    for (Eigen::Index i = 0; i < n; ++i) p.values.row(i) = values.row(n - 1 - i);
    double t0 = times.front(), t1 = times.back();
    for (std::size_t i = 0; i < times.size(); ++i) p.times[i] = t0 + t1 - times[times.size() - 1 - i];
    std::reverse(p.kinds.begin(), p.kinds.end());
    return p;
  }

  // Uniform sampling (including smooth-ramp traversal), n_cells + 1 values.
  Eigen::MatrixXd sample_uniform(int n_cells) const {
    Eigen::MatrixXd out(n_cells + 1, dim());
    double t0 = times.front(), t1 = times.back();
    for (int i = 0; i <= n_cells; ++i)
      out.row(i) = position(t0 + (t1 - t0) * i / n_cells);
    return out;
  }
};

// Concatenation; piece m is mapped onto [offset_m, offset_m + lengths[m]]
// and translated so the path is continuous.
inline GridPath concat(const std::vector<GridPath>& pieces, const std::vector<double>& lengths) {
  if (pieces.empty() || pieces.size() != lengths.size())
    throw std::invalid_argument("concat: size mismatch");
  const int d = pieces.front().dim();
  int nodes = 1;
  for (const auto& p : pieces) nodes += p.segment_count();
  GridPath out;
  out.times.reserve(nodes);
  out.values.resize(nodes, d);
  out.kinds.reserve(nodes - 1);
  out.profile_order = pieces.front().profile_order;

  double t = 0.0;
  Eigen::RowVectorXd offset = Eigen::RowVectorXd::Zero(d);
  out.times.push_back(0.0);
  out.values.row(0) = offset;
  int row = 1;
  for (std::size_t m = 0; m < pieces.size(); ++m) {
    const GridPath& p = pieces[m];
    if (!(lengths[m] > 0.0)) throw std::invalid_argument("concat: piece length must be positive");
    double span = p.duration();
    Eigen::RowVectorXd start = p.values.row(0);
    for (int j = 0; j < p.segment_count(); ++j) {
      t += lengths[m] * (p.times[j + 1] - p.times[j]) / span;
      out.times.push_back(t);
      out.values.row(row) = offset + (p.values.row(j + 1) - start);
      out.kinds.push_back(p.kinds[j]);
      ++row;
    }
    offset += p.values.row(p.values.rows() - 1) - start;
  }
  return out;
}

namespace detail {

// acc <- acc (x) exp(v) for a pure level-one increment v, allocation-free in
// the hot loop apart from the caller-provided scratch.
inline void chen_mul_exp(TruncatedTensor& acc, const Eigen::RowVectorXd& v,
                         TruncatedTensor& expbuf, TruncatedTensor& scratch) {
  const int d = acc.dim();
  const int l = acc.level();
  // expbuf = exp(v): level k entries are products of v entries / k!
  expbuf.level_coeffs(0)[0] = 1.0;
  if (l >= 1)
    for (int i = 0; i < d; ++i) expbuf.level_coeffs(1)[i] = v[i];
  for (int k = 2; k <= l; ++k) {
    const auto& prev = expbuf.level_coeffs(k - 1);
    auto& cur = expbuf.level_coeffs(k);
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t ip = 0; ip < prev.size(); ++ip) {
      const double c = prev[ip] * inv_k;
      for (int i = 0; i < d; ++i) cur[ip * d + i] = c * v[i];
    }
  }
  // scratch = acc (x) expbuf, highest degree first would allow in-place but a
  // swap keeps the index arithmetic readable
  std::vector<std::size_t> dpow(l + 1);
  dpow[0] = 1;
  for (int k = 1; k <= l; ++k) dpow[k] = dpow[k - 1] * static_cast<std::size_t>(d);
  for (int n = 0; n <= l; ++n) {
    auto& lv = scratch.level_coeffs(n);
    std::fill(lv.begin(), lv.end(), 0.0);
    for (int k = 0; k <= n; ++k) {
      const auto& av = acc.level_coeffs(n - k);
      const auto& bv = expbuf.level_coeffs(k);
      for (std::size_t ia = 0; ia < av.size(); ++ia) {
        const double ca = av[ia];
        if (ca == 0.0) continue;
        const std::size_t base = ia * dpow[k];
        for (std::size_t ib = 0; ib < bv.size(); ++ib) lv[base + ib] += ca * bv[ib];
      }
    }
  }
  std::swap(acc, scratch);
}

}  // namespace detail

// Truncated signature of a grid path: Chen product of per-segment signatures,
// each linear (or smooth-reparametrized) segment contributing exp(increment).
inline TruncatedTensor signature(const GridPath& path, int level) {
  const int d = path.dim();
  TruncatedTensor acc = TruncatedTensor::unit(d, level);
  TruncatedTensor expbuf(d, level), scratch(d, level);
  for (int j = 0; j < path.segment_count(); ++j) {
    Eigen::RowVectorXd v = path.increment(j);
    if (v.norm() == 0.0) continue;
    detail::chen_mul_exp(acc, v, expbuf, scratch);
  }
  return acc;
}

// Signature of a raw increment sequence (rows of a matrix); used by the fBm
// sampler where materializing a GridPath per sample would dominate runtime.
inline TruncatedTensor signature_of_increments(const Eigen::MatrixXd& increments, int level) {
  const int d = static_cast<int>(increments.cols());
  TruncatedTensor acc = TruncatedTensor::unit(d, level);
  TruncatedTensor expbuf(d, level), scratch(d, level);
  Eigen::RowVectorXd v(d);
  for (Eigen::Index j = 0; j < increments.rows(); ++j) {
    v = increments.row(j);
    if (v.norm() == 0.0) continue;
    detail::chen_mul_exp(acc, v, expbuf, scratch);
  }
  return acc;
}

inline LieElement log_signature(const GridPath& path, const BasisPtr& basis,
                                double membership_tol = 1e-8) {
  if (path.dim() != basis->dim()) throw std::invalid_argument("log_signature: dimension mismatch");
  return from_tensor(basis, tensor_log(signature(path, basis->level())), membership_tol);
}

namespace detail {

// Raw polyline from the level-by-level construction: straight segment for the
// degree-one part, then for each level k a correction in exp(L_k) realized by
// dilated commutator loops. Exact by induction: at stage k the remaining
// discrepancy sits in exp(L_k), where degree-k exponentials commute.
inline std::vector<Eigen::RowVectorXd> group_element_increments(const LieElement& u) {
  const auto& basis = *u.basis;
  const int d = basis.dim();
  const int l = basis.level();
  std::vector<Eigen::RowVectorXd> incs;

  Eigen::RowVectorXd level1 = u.level_block(1).transpose();
  if (level1.norm() > 0.0) incs.push_back(level1);

  TruncatedTensor target = tensor_exp(to_tensor(u));

  // Coefficients below this threshold at level k are roundoff, not content.
  // The threshold is built from homogeneous powers of the coefficient sizes,
  // so it commutes with dilations: dropping is decided identically for u and
  // delta_s u, which keeps cc_len exactly 1-homogeneous. Without the cutoff,
  // noise lambda ~ 1e-16 would spawn loops of size |lambda|^{1/k} ~ 1e-4.
  auto level_cutoff = [&](int k) {
    double worst = 0.0;
    for (int j = 1; j <= k; ++j) {
      double a = 0.0;
      for (double c : target.level_coeffs(j)) a = std::max(a, std::abs(c));
      if (a > 0.0) worst = std::max(worst, std::pow(a, static_cast<double>(k) / j));
    }
    return 1e-12 * worst;
  };

  for (int k = 2; k <= l; ++k) {
    if (basis.level_dim(k) == 0) continue;
    // discrepancy in G^(k)
    TruncatedTensor sig_k = TruncatedTensor::unit(d, k);
    {
      TruncatedTensor expbuf(d, k), scratch(d, k);
      for (const auto& v : incs) chen_mul_exp(sig_k, v, expbuf, scratch);
    }
    TruncatedTensor w = tensor_mul(group_inverse(sig_k), target.truncated(k));
    TruncatedTensor c = tensor_log(w);
    Eigen::VectorXd block(static_cast<Eigen::Index>(c.level_coeffs(k).size()));
    for (std::size_t i = 0; i < c.level_coeffs(k).size(); ++i)
      block[static_cast<Eigen::Index>(i)] = c.level_coeffs(k)[i];
    Eigen::VectorXd lambda = basis.project_level(k, block, nullptr);

    const double cutoff = level_cutoff(k);
    const double root = 1.0 / static_cast<double>(k);
    for (int j = 0; j < basis.level_dim(k); ++j) {
      double lam = lambda[j];
      if (std::abs(lam) <= cutoff) continue;
      double scale = std::pow(std::abs(lam), root);
      const auto& loop = basis.element(basis.level_offset(k) + j).loop;
      if (lam > 0.0) {
        for (int step : loop) {
          Eigen::RowVectorXd inc = Eigen::RowVectorXd::Zero(d);
          inc[std::abs(step) - 1] = (step > 0 ? scale : -scale);
          incs.push_back(inc);
        }
      } else {
        for (auto it = loop.rbegin(); it != loop.rend(); ++it) {
          Eigen::RowVectorXd inc = Eigen::RowVectorXd::Zero(d);
          inc[std::abs(*it) - 1] = (*it > 0 ? -scale : scale);
          incs.push_back(inc);
        }
      }
    }
  }
  return incs;
}

inline LieElement log_signature_of_increments(const Eigen::MatrixXd& incs, const BasisPtr& basis,
                                              double tol) {
  return from_tensor(basis, tensor_log(signature_of_increments(incs, basis->level())), tol);
}

}  // namespace detail

struct ReconstructionOptions {
  int profile_order = 4;
  double target_residual = 1e-8;     // hard failure threshold
  double newton_trigger = 1e-9;      // run the correction pass above this
  int newton_max_iterations = 8;
};

// Builds a smooth path on [0,1], derivative supported on [1/3, 2/3], whose
// truncated log-signature is u. The polyline construction is exact up to
// roundoff; a minimum-norm Gauss-Newton pass over the segment increments
// mops up the rare cases where accumulated roundoff exceeds the trigger.
inline GridPath path_from_group_element(const LieElement& u,
                                        const ReconstructionOptions& opt = {}) {
  const auto& basis = u.basis;
  const int d = basis->dim();

  std::vector<Eigen::RowVectorXd> inc_list = detail::group_element_increments(u);
  if (inc_list.empty()) return GridPath::constant(0.0, 1.0, d);

  Eigen::MatrixXd incs(static_cast<Eigen::Index>(inc_list.size()), d);
  for (std::size_t j = 0; j < inc_list.size(); ++j) incs.row(static_cast<Eigen::Index>(j)) = inc_list[j];

  auto residual_of = [&](const Eigen::MatrixXd& m) -> Eigen::VectorXd {
    LieElement ls = detail::log_signature_of_increments(m, basis, 1e6);
    return ls.coords - u.coords;
  };

  Eigen::VectorXd res = residual_of(incs);
  if (res.norm() > opt.newton_trigger) {
    const int m_dim = basis->total_dim();
    const Eigen::Index n_vars = incs.size();
    for (int it = 0; it < opt.newton_max_iterations && res.norm() > opt.newton_trigger; ++it) {
      Eigen::MatrixXd jac(m_dim, n_vars);
      const double h = 1e-6;
      Eigen::Map<Eigen::VectorXd> flat(incs.data(), n_vars);
      for (Eigen::Index v = 0; v < n_vars; ++v) {
        double saved = flat[v];
        flat[v] = saved + h;
        Eigen::VectorXd plus = residual_of(incs);
        flat[v] = saved - h;
        Eigen::VectorXd minus = residual_of(incs);
        flat[v] = saved;
        jac.col(v) = (plus - minus) / (2.0 * h);
      }
      Eigen::MatrixXd jjt = jac * jac.transpose();
      Eigen::VectorXd step = jac.transpose() * jjt.ldlt().solve(res);
      flat -= step;
      res = residual_of(incs);
    }
    if (res.norm() > opt.target_residual)
      throw std::runtime_error("path_from_group_element: correction diverged (residual " +
                               std::to_string(res.norm()) + ")");
  }

  // time allocation: active middle third split proportionally to step length
  double total = 0.0;
  for (Eigen::Index j = 0; j < incs.rows(); ++j) total += incs.row(j).norm();
  GridPath path;
  path.profile_order = opt.profile_order;
  const Eigen::Index n_steps = incs.rows();
  path.times.reserve(n_steps + 3);
  path.values.resize(n_steps + 3, d);
  path.times.push_back(0.0);
  path.values.row(0).setZero();
  path.kinds.push_back(SegmentKind::Linear);
  path.times.push_back(1.0 / 3.0);
  path.values.row(1).setZero();
  double t = 1.0 / 3.0;
  Eigen::RowVectorXd pos = Eigen::RowVectorXd::Zero(d);
  int row = 2;
  for (Eigen::Index j = 0; j < n_steps; ++j) {
    t += incs.row(j).norm() / total / 3.0;
    pos += incs.row(j);
    path.times.push_back(j + 1 == n_steps ? 2.0 / 3.0 : t);
    path.values.row(row) = pos;
    path.kinds.push_back(SegmentKind::Smooth);
    ++row;
  }
  path.times.push_back(1.0);
  path.values.row(row) = pos;
  path.kinds.push_back(SegmentKind::Linear);
  return path;
}

// Length of the constructive path above: a 1-homogeneous upper bound for the
// Carnot-Caratheodory norm (1-homogeneity is exact because the construction
// commutes with dilations level by level).
inline double cc_len(const LieElement& u) {
  double acc = 0.0;
  for (const auto& inc : detail::group_element_increments(u)) acc += inc.norm();
  return acc;
}

struct BallBoxReport {
  int samples = 0;
  double max_ratio = 0.0;
  double mean_ratio = 0.0;
  double max_ratio_first_half = 0.0;
};

// Empirical ball-box probe: over random group elements with ||exp(u)-1|| <= 1,
// track cc_len(u) / ||exp(u)-1||^{1/l}.
inline BallBoxReport ball_box_report(const BasisPtr& basis, int samples, std::uint64_t seed) {
  BallBoxReport rep;
  SplitMix64 rng(derive_seed(seed, 0x6262));
  const int l = basis->level();
  double sum = 0.0;
  for (int i = 0; i < samples; ++i) {
    LieElement u = random_lie(basis, rng);
    if (u.coords.norm() == 0.0) continue;  // degenerate draw
    double target = 0.05 + 0.95 * rng.next_uniform();
    // Dilate so that ||exp(delta_s u) - 1|| = target; every coefficient of
    // exp(delta_s u) - 1 is homogeneous in s, so the norm is monotone and a
    // bisection pins s.
    double lo = 0.0, hi = 1.0;
    while (hs_dist_to_unit(tensor_exp(to_tensor(dilate(u, hi)))) < target) hi *= 2.0;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      if (hs_dist_to_unit(tensor_exp(to_tensor(dilate(u, mid)))) < target)
        lo = mid;
      else
        hi = mid;
    }
    LieElement v = dilate(u, 0.5 * (lo + hi));
    double ratio = cc_len(v) / std::pow(target, 1.0 / l);
    sum += ratio;
    rep.max_ratio = std::max(rep.max_ratio, ratio);
    ++rep.samples;
    if (i < samples / 2) rep.max_ratio_first_half = rep.max_ratio;
  }
  rep.mean_ratio = rep.samples > 0 ? sum / rep.samples : 0.0;
  return rep;
}

}  // namespace hypopath
