#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypopath/lyndon.hpp"
#include "hypopath/numerics.hpp"
#include "hypopath/parallel.hpp"
#include "hypopath/path.hpp"
#include "hypopath/rng.hpp"

namespace hypopath {

inline double fbm_covariance(double s, double t, double hurst) {
  return 0.5 * (std::pow(s, 2.0 * hurst) + std::pow(t, 2.0 * hurst) -
                std::pow(std::abs(t - s), 2.0 * hurst));
}

// Exact-covariance fractional Brownian batch: dense Cholesky factor of the
// grid covariance, one independent Gaussian stream per (seed, sample index).
// Paths are generated on demand, so the batch is cheap to hold and sampling
// is bit-reproducible under any parallel schedule.
class FbmBatch {
 public:
  FbmBatch(double hurst, int grid_cells, int dim, int n_samples, std::uint64_t seed,
           double horizon = 1.0)
      : hurst_(hurst), cells_(grid_cells), dim_(dim), count_(n_samples), seed_(seed),
        horizon_(horizon) {
    if (!(hurst > 0.0 && hurst < 1.0)) throw std::invalid_argument("FbmBatch: H out of (0,1)");
    if (grid_cells < 1 || grid_cells > (1 << 12))
      throw std::invalid_argument("FbmBatch: grid must have 1..4096 cells");
    if (dim < 1 || n_samples < 0) throw std::invalid_argument("FbmBatch: bad dimensions");

    Eigen::MatrixXd R(cells_, cells_);
    for (int i = 0; i < cells_; ++i)
      for (int j = 0; j <= i; ++j) {
        double v = fbm_covariance(time_at(i + 1), time_at(j + 1), hurst_);
        R(i, j) = v;
        R(j, i) = v;
      }
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    double jitter = 1e-12 * R.diagonal().mean();
    int tries = 0;
    while (llt.info() != Eigen::Success && tries < 3) {
      R.diagonal().array() += jitter;
      jitter *= 100.0;
      llt.compute(R);
      ++tries;
    }
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("FbmBatch: covariance factorization failed after jitter retries");
    factor_ = llt.matrixL();
  }

  double hurst() const { return hurst_; }
  int cells() const { return cells_; }
  int dim() const { return dim_; }
  int count() const { return count_; }
  std::uint64_t seed() const { return seed_; }
  double horizon() const { return horizon_; }
  double time_at(int i) const { return horizon_ * static_cast<double>(i) / cells_; }

  // sampled path including the zero row at t = 0: (cells + 1) x dim
  Eigen::MatrixXd path(int index) const {
    if (index < 0 || index >= count_) throw std::out_of_range("FbmBatch: sample index");
    SplitMix64 rng = stream_rng(seed_, static_cast<std::uint64_t>(index));
    Eigen::MatrixXd out(cells_ + 1, dim_);
    out.row(0).setZero();
    Eigen::VectorXd z(cells_);
    for (int c = 0; c < dim_; ++c) {
      for (int i = 0; i < cells_; ++i) z[i] = rng.next_gaussian();
      out.col(c).tail(cells_) = factor_.template triangularView<Eigen::Lower>() * z;
    }
    return out;
  }

  Eigen::MatrixXd increments(int index, int upto_cell) const {
    Eigen::MatrixXd p = path(index);
    Eigen::MatrixXd inc(upto_cell, dim_);
    for (int i = 0; i < upto_cell; ++i) inc.row(i) = p.row(i + 1) - p.row(i);
    return inc;
  }

  int cell_of(double t) const {
    double x = t / horizon_ * cells_;
    int k = static_cast<int>(std::llround(x));
    if (std::abs(x - k) > 1e-9 || k < 1 || k > cells_)
      throw std::invalid_argument("FbmBatch: t = " + std::to_string(t) + " is not a grid point");
    return k;
  }

 private:
  double hurst_;
  int cells_;
  int dim_;
  int count_;
  std::uint64_t seed_;
  double horizon_;
  Eigen::MatrixXd factor_;
};

// Truncated log-signatures of the piecewise-linear interpolations on [0, t].
inline std::vector<LieElement> sample_log_signature(const FbmBatch& batch, double t,
                                                    const BasisPtr& basis) {
  if (batch.dim() != basis->dim())
    throw std::invalid_argument("sample_log_signature: dimension mismatch");
  const int upto = batch.cell_of(t);
  const int level = basis->level();
  std::vector<LieElement> out(batch.count());
  parallel_for(batch.count(), [&](std::size_t i) {
    TruncatedTensor sig =
        signature_of_increments(batch.increments(static_cast<int>(i), upto), level);
    out[i] = from_tensor(basis, tensor_log(sig), 1e-6);
  });
  return out;
}

struct MomentCheck {
  std::string name;
  double value_a = 0.0;  // statistic on the delta_{t^H} U_1 side
  double value_b = 0.0;  // statistic on the U_t side
  double std_diff = 0.0;
};

struct ScalingUReport {
  std::vector<MomentCheck> moments;
  double max_std_diff = 0.0;
};

namespace detail {

inline MomentCheck compare_samples(const std::string& name, const std::vector<double>& a,
                                   const std::vector<double>& b) {
  MomentCheck c;
  c.name = name;
  MomentStats sa = moments(a), sb = moments(b);
  c.value_a = sa.mean;
  c.value_b = sb.mean;
  double denom = std::sqrt(sa.std_error * sa.std_error + sb.std_error * sb.std_error);
  c.std_diff = denom > 0.0 ? std::abs(sa.mean - sb.mean) / denom : 0.0;
  return c;
}

}  // namespace detail

// Distributional self-consistency of the log-signature scaling: U_t versus
// delta_{t^H} U_1 on independent batches, compared through per-coordinate
// means and variances plus one cross-moment per level. Both batches use the
// same cell count over their own horizons, so self-similarity carries the
// piecewise-linear interpolation along and the two sides agree exactly in
// law; the standardized differences measure Monte Carlo noise only.
inline ScalingUReport scaling_check_U(double hurst, double t, const BasisPtr& basis,
                                      int grid_cells, int n_samples, std::uint64_t seed) {
  if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("scaling_check_U: need t in (0, 1]");
  FbmBatch batch_one(hurst, grid_cells, basis->dim(), n_samples, derive_seed(seed, 1));
  FbmBatch batch_t(hurst, grid_cells, basis->dim(), n_samples, derive_seed(seed, 2), t);
  auto u_one = sample_log_signature(batch_one, 1.0, basis);
  auto u_t = sample_log_signature(batch_t, t, basis);
  const double scale = std::pow(t, hurst);
  for (auto& u : u_one) u = dilate(u, scale);

  ScalingUReport rep;
  const int m = basis->total_dim();
  std::vector<double> va(u_one.size()), vb(u_t.size());
  auto track = [&](const std::string& name) {
    rep.moments.push_back(detail::compare_samples(name, va, vb));
    rep.max_std_diff = std::max(rep.max_std_diff, rep.moments.back().std_diff);
  };

  for (int j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < u_one.size(); ++i) va[i] = u_one[i].coords[j];
    for (std::size_t i = 0; i < u_t.size(); ++i) vb[i] = u_t[i].coords[j];
    track("mean[" + std::to_string(j) + "]");

    double ma = moments(va).mean, mb = moments(vb).mean;
    for (std::size_t i = 0; i < u_one.size(); ++i) {
      double d = u_one[i].coords[j] - ma;
      va[i] = d * d;
    }
    for (std::size_t i = 0; i < u_t.size(); ++i) {
      double d = u_t[i].coords[j] - mb;
      vb[i] = d * d;
    }
    track("var[" + std::to_string(j) + "]");
  }

  for (int k = 1; k <= basis->level(); ++k) {
    if (basis->level_dim(k) == 0) continue;
    int j0 = basis->level_offset(k);
    int j1 = basis->level_dim(k) >= 2 ? j0 + 1 : 0;  // fall back to the first level-1 coord
    for (std::size_t i = 0; i < u_one.size(); ++i)
      va[i] = u_one[i].coords[j0] * u_one[i].coords[j1];
    for (std::size_t i = 0; i < u_t.size(); ++i) vb[i] = u_t[i].coords[j0] * u_t[i].coords[j1];
    track("cross[level " + std::to_string(k) + "]");
  }
  return rep;
}

}  // namespace hypopath
