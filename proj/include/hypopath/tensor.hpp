#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace hypopath {

// A word over the alphabet {1, .., d}; the empty word indexes the scalar slot.
using Word = std::vector<int>;

// Element of the truncated tensor algebra T^(l) over R^d, stored densely per
// level: levels_[k] holds the d^k coefficients of degree k, word index in
// base d with the first letter most significant. Concatenating words w1,w2
// then satisfies index(w1 w2) = index(w1) * d^|w2| + index(w2).
class TruncatedTensor {
 public:
  TruncatedTensor(int dim, int level) : dim_(dim), level_(level) {
    if (dim < 1 || level < 0) throw std::invalid_argument("TruncatedTensor: need d >= 1, l >= 0");
    levels_.resize(level_ + 1);
    std::size_t sz = 1;
    for (int k = 0; k <= level_; ++k) {
      levels_[k].assign(sz, 0.0);
      sz *= static_cast<std::size_t>(dim_);
    }
  }

  static TruncatedTensor unit(int dim, int level) {
    TruncatedTensor t(dim, level);
    t.levels_[0][0] = 1.0;
    return t;
  }

  // The basis letter e_i as a pure degree-one tensor.
  static TruncatedTensor basis_letter(int dim, int level, int letter) {
    TruncatedTensor t(dim, level);
    if (letter < 1 || letter > dim) throw std::invalid_argument("basis_letter: letter out of range");
    if (level >= 1) t.levels_[1][letter - 1] = 1.0;
    return t;
  }

  int dim() const { return dim_; }
  int level() const { return level_; }

  const std::vector<double>& level_coeffs(int k) const { return levels_[k]; }
  std::vector<double>& level_coeffs(int k) { return levels_[k]; }

  double scalar() const { return levels_[0][0]; }

  std::size_t word_index(const Word& w) const {
    std::size_t idx = 0;
    for (int letter : w) {
      if (letter < 1 || letter > dim_) throw std::invalid_argument("word letter out of range");
      idx = idx * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(letter - 1);
    }
    return idx;
  }

  double coeff(const Word& w) const {
    if (static_cast<int>(w.size()) > level_) return 0.0;
    return levels_[w.size()][word_index(w)];
  }

  void set_coeff(const Word& w, double v) {
    if (static_cast<int>(w.size()) > level_) throw std::invalid_argument("word longer than truncation level");
    levels_[w.size()][word_index(w)] = v;
  }

  // Projection to a lower truncation level (or re-embedding into a higher one).
  TruncatedTensor truncated(int new_level) const {
    TruncatedTensor out(dim_, new_level);
    int k_max = std::min(new_level, level_);
    for (int k = 0; k <= k_max; ++k) out.levels_[k] = levels_[k];
    return out;
  }

  TruncatedTensor& operator+=(const TruncatedTensor& o) {
    check_compatible(o);
    for (int k = 0; k <= level_; ++k)
      for (std::size_t i = 0; i < levels_[k].size(); ++i) levels_[k][i] += o.levels_[k][i];
    return *this;
  }

  TruncatedTensor& operator-=(const TruncatedTensor& o) {
    check_compatible(o);
    for (int k = 0; k <= level_; ++k)
      for (std::size_t i = 0; i < levels_[k].size(); ++i) levels_[k][i] -= o.levels_[k][i];
    return *this;
  }

  TruncatedTensor& operator*=(double s) {
    for (auto& lv : levels_)
      for (double& c : lv) c *= s;
    return *this;
  }

  friend TruncatedTensor operator+(TruncatedTensor a, const TruncatedTensor& b) { return a += b; }
  friend TruncatedTensor operator-(TruncatedTensor a, const TruncatedTensor& b) { return a -= b; }
  friend TruncatedTensor operator*(double s, TruncatedTensor a) { return a *= s; }

  void check_compatible(const TruncatedTensor& o) const {
    if (dim_ != o.dim_ || level_ != o.level_)
      throw std::invalid_argument("tensor dimension/level mismatch");
  }

 private:
  int dim_;
  int level_;
  std::vector<std::vector<double>> levels_;
};

// Truncated tensor product: degree-n part of a (x) b is the convolution
// sum_{k=0}^{n} a^{n-k} (x) b^k, everything above the truncation level dropped.
inline TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b) {
  a.check_compatible(b);
  const int d = a.dim();
  const int l = a.level();
  TruncatedTensor out(d, l);
  std::vector<std::size_t> dpow(l + 1);
  dpow[0] = 1;
  for (int k = 1; k <= l; ++k) dpow[k] = dpow[k - 1] * static_cast<std::size_t>(d);
  for (int n = 0; n <= l; ++n) {
    auto& lv = out.level_coeffs(n);
    for (int k = 0; k <= n; ++k) {
      const auto& av = a.level_coeffs(n - k);
      const auto& bv = b.level_coeffs(k);
      for (std::size_t ia = 0; ia < av.size(); ++ia) {
        const double ca = av[ia];
        if (ca == 0.0) continue;
        const std::size_t base = ia * dpow[k];
        for (std::size_t ib = 0; ib < bv.size(); ++ib) lv[base + ib] += ca * bv[ib];
      }
    }
  }
  return out;
}

// exp(u) = sum_k u^{(x)k} / k!, which terminates at k = l since u has no
// scalar part.
inline TruncatedTensor tensor_exp(const TruncatedTensor& u) {
  if (u.scalar() != 0.0) throw std::invalid_argument("tensor_exp: nonzero scalar part");
  const int l = u.level();
  TruncatedTensor acc = TruncatedTensor::unit(u.dim(), l);
  TruncatedTensor term = TruncatedTensor::unit(u.dim(), l);
  for (int k = 1; k <= l; ++k) {
    term = tensor_mul(term, u);
    term *= 1.0 / static_cast<double>(k);
    acc += term;
  }
  return acc;
}

// log(g) for g with scalar part 1, via the series sum (-1)^{k+1} (g-1)^{(x)k}/k,
// exact at k = l.
inline TruncatedTensor tensor_log(const TruncatedTensor& g) {
  if (g.scalar() != 1.0) throw std::invalid_argument("tensor_log: scalar part must be 1");
  const int l = g.level();
  TruncatedTensor v = g;
  v -= TruncatedTensor::unit(g.dim(), l);
  TruncatedTensor acc(g.dim(), l);
  TruncatedTensor term = TruncatedTensor::unit(g.dim(), l);
  double sign = 1.0;
  for (int k = 1; k <= l; ++k) {
    term = tensor_mul(term, v);
    TruncatedTensor contrib = term;
    contrib *= sign / static_cast<double>(k);
    acc += contrib;
    sign = -sign;
  }
  return acc;
}

// (1 + u)^{-1} = sum_k (-u)^{(x)k} for g = 1 + u with zero-scalar u.
inline TruncatedTensor group_inverse(const TruncatedTensor& g) {
  if (g.scalar() != 1.0) throw std::invalid_argument("group_inverse: scalar part must be 1");
  const int l = g.level();
  TruncatedTensor v = TruncatedTensor::unit(g.dim(), l);
  v -= g;  // -u
  TruncatedTensor acc = TruncatedTensor::unit(g.dim(), l);
  TruncatedTensor term = TruncatedTensor::unit(g.dim(), l);
  for (int k = 1; k <= l; ++k) {
    term = tensor_mul(term, v);
    acc += term;
  }
  return acc;
}

// Dilation: multiplies the degree-k component by lambda^k.
inline TruncatedTensor dilate(const TruncatedTensor& g, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("dilate: lambda must be positive");
  TruncatedTensor out = g;
  double p = 1.0;
  for (int k = 1; k <= g.level(); ++k) {
    p *= lambda;
    for (double& c : out.level_coeffs(k)) c *= p;
  }
  return out;
}

// Hilbert-Schmidt norm over all levels, scalar included.
inline double hs_norm(const TruncatedTensor& g) {
  double s = 0.0;
  for (int k = 0; k <= g.level(); ++k)
    for (double c : g.level_coeffs(k)) s += c * c;
  return std::sqrt(s);
}

// Distance to the group unit, the quantity ball-box estimates are phrased in.
inline double hs_dist_to_unit(const TruncatedTensor& g) {
  TruncatedTensor v = g;
  v -= TruncatedTensor::unit(g.dim(), g.level());
  return hs_norm(v);
}

}  // namespace hypopath
