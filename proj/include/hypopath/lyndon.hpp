#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypopath/rng.hpp"
#include "hypopath/tensor.hpp"

namespace hypopath {

inline int moebius(int n) {
  int result = 1;
  for (int p = 2; p * p <= n; ++p) {
    if (n % p == 0) {
      n /= p;
      if (n % p == 0) return 0;
      result = -result;
    }
  }
  if (n > 1) result = -result;
  return result;
}

// Witt formula: dim L_k = (1/k) sum_{j | k} mu(j) d^{k/j}.
inline long long witt_dimension(int d, int k) {
  long long acc = 0;
  for (int j = 1; j <= k; ++j) {
    if (k % j != 0) continue;
    long long p = 1;
    for (int i = 0; i < k / j; ++i) p *= d;
    acc += moebius(j) * p;
  }
  return acc / k;
}

// One Lyndon word together with its standard bracketing and the commutator
// loop realizing exp(bracket) as a piecewise unit-step path (see path.hpp).
struct LyndonElement {
  Word word;
  int left = -1;   // global indices of the standard factorization children,
  int right = -1;  // -1 for single letters
  std::vector<int> loop;  // signed letters: +i is a step e_i, -i a step -e_i
};

// Lyndon-word model of the free nilpotent Lie algebra g^(l) over R^d.
// The bracketed words expand to a basis of each graded piece L_k, so Lie
// elements get unique coordinates (unlike the overcomplete right-nested
// bracket family on all words).
class LyndonBasis {
 public:
  LyndonBasis(int dim, int level, long long max_total_dim = 20000)
      : dim_(dim), level_(level) {
    if (dim < 1 || level < 1) throw std::invalid_argument("LyndonBasis: need d >= 1, l >= 1");
    long long total = 0;
    for (int k = 1; k <= level; ++k) total += witt_dimension(dim, k);
    if (total > max_total_dim)
      throw std::runtime_error("LyndonBasis: dimension " + std::to_string(total) +
                               " exceeds cap " + std::to_string(max_total_dim));
    generate_words();
    build_expansions();
  }

  int dim() const { return dim_; }
  int level() const { return level_; }
  int total_dim() const { return static_cast<int>(elems_.size()); }
  int level_dim(int k) const { return level_count_[k]; }
  int level_offset(int k) const { return level_offset_[k]; }

  const LyndonElement& element(int idx) const { return elems_[idx]; }
  const std::vector<LyndonElement>& elements() const { return elems_; }

  // Dense expansion of basis element idx (a pure degree-|word| tensor).
  const Eigen::VectorXd& expansion(int idx) const { return expanded_[idx]; }

  long long homogeneous_dimension() const {
    long long nu = 0;
    for (int k = 1; k <= level_; ++k) nu += static_cast<long long>(k) * level_count_[k];
    return nu;
  }

  // Least-squares projection of the degree-k coefficient block onto span L_k.
  // Returns the coordinates; *residual gets the Euclidean defect.
  Eigen::VectorXd project_level(int k, const Eigen::VectorXd& block, double* residual) const {
    if (level_count_[k] == 0) {
      if (residual) *residual = block.norm();
      return Eigen::VectorXd();
    }
    const auto& qr = solvers_[k];
    Eigen::VectorXd c = qr.solve(block);
    if (residual) *residual = (expand_matrix_[k] * c - block).norm();
    return c;
  }

  const Eigen::MatrixXd& expansion_matrix(int k) const { return expand_matrix_[k]; }

 private:
  void generate_words() {
    // Duval's algorithm, all Lyndon words of length <= level_ in lex order.
    std::vector<Word> words;
    Word w{1};
    while (!w.empty()) {
      if (static_cast<int>(w.size()) <= level_) words.push_back(w);
      Word repeat = w;
      while (static_cast<int>(w.size()) < level_) w.push_back(repeat[(w.size()) % repeat.size()]);
      while (!w.empty() && w.back() == dim_) w.pop_back();
      if (!w.empty()) w.back() += 1;
    }
    std::stable_sort(words.begin(), words.end(), [](const Word& a, const Word& b) {
      if (a.size() != b.size()) return a.size() < b.size();
      return a < b;
    });

    level_offset_.assign(level_ + 1, 0);
    level_count_.assign(level_ + 1, 0);
    elems_.reserve(words.size());
    for (const auto& word : words) {
      LyndonElement e;
      e.word = word;
      elems_.push_back(std::move(e));
    }
    for (int i = 0; i < static_cast<int>(elems_.size()); ++i) {
      int k = static_cast<int>(elems_[i].word.size());
      if (level_count_[k] == 0) level_offset_[k] = i;
      ++level_count_[k];
    }
    for (auto& e : elems_) {
      if (e.word.size() == 1) {
        e.loop = {e.word[0]};
        continue;
      }
      standard_factorization(e);
    }
  }

  int find_word(const Word& w) const {
    int k = static_cast<int>(w.size());
    for (int i = level_offset_[k]; i < level_offset_[k] + level_count_[k]; ++i)
      if (elems_[i].word == w) return i;
    return -1;
  }

  void standard_factorization(LyndonElement& e) {
    // Right factor = lexicographically smallest proper suffix; both factors
    // are Lyndon and the pair gives the standard bracketing.
    const Word& w = e.word;
    std::size_t best = 1;
    for (std::size_t s = 2; s < w.size(); ++s) {
      if (std::lexicographical_compare(w.begin() + s, w.end(), w.begin() + best, w.end()))
        best = s;
    }
    Word u(w.begin(), w.begin() + best);
    Word v(w.begin() + best, w.end());
    e.left = find_word(u);
    e.right = find_word(v);
    if (e.left < 0 || e.right < 0) throw std::logic_error("standard factorization not Lyndon");
    // Commutator loop: a b a^-1 b^-1, reversal flipping step signs.
    const auto& la = elems_[e.left].loop;
    const auto& lb = elems_[e.right].loop;
    e.loop.reserve(2 * (la.size() + lb.size()));
    e.loop.insert(e.loop.end(), la.begin(), la.end());
    e.loop.insert(e.loop.end(), lb.begin(), lb.end());
    for (auto it = la.rbegin(); it != la.rend(); ++it) e.loop.push_back(-*it);
    for (auto it = lb.rbegin(); it != lb.rend(); ++it) e.loop.push_back(-*it);
  }

  void build_expansions() {
    expanded_.resize(elems_.size());
    std::vector<std::size_t> dpow(level_ + 1);
    dpow[0] = 1;
    for (int k = 1; k <= level_; ++k) dpow[k] = dpow[k - 1] * static_cast<std::size_t>(dim_);

    for (std::size_t i = 0; i < elems_.size(); ++i) {
      const auto& e = elems_[i];
      if (e.word.size() == 1) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
        v[e.word[0] - 1] = 1.0;
        expanded_[i] = v;
        continue;
      }
      const Eigen::VectorXd& a = expanded_[e.left];
      const Eigen::VectorXd& b = expanded_[e.right];
      const std::size_t ka = elems_[e.left].word.size();
      const std::size_t kb = elems_[e.right].word.size();
      Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dpow[ka + kb]));
      for (Eigen::Index ia = 0; ia < a.size(); ++ia) {
        if (a[ia] == 0.0) continue;
        for (Eigen::Index ib = 0; ib < b.size(); ++ib) {
          if (b[ib] == 0.0) continue;
          out[ia * static_cast<Eigen::Index>(dpow[kb]) + ib] += a[ia] * b[ib];
          out[ib * static_cast<Eigen::Index>(dpow[ka]) + ia] -= a[ia] * b[ib];
        }
      }
      expanded_[i] = std::move(out);
    }

    expand_matrix_.resize(level_ + 1);
    solvers_.resize(level_ + 1);
    for (int k = 1; k <= level_; ++k) {
      Eigen::MatrixXd B(static_cast<Eigen::Index>(dpow[k]), level_count_[k]);
      for (int j = 0; j < level_count_[k]; ++j) B.col(j) = expanded_[level_offset_[k] + j];
      expand_matrix_[k] = B;
      if (level_count_[k] > 0) solvers_[k].compute(B);
    }
  }

  int dim_;
  int level_;
  std::vector<LyndonElement> elems_;
  std::vector<int> level_offset_;
  std::vector<int> level_count_;
  std::vector<Eigen::VectorXd> expanded_;
  std::vector<Eigen::MatrixXd> expand_matrix_;
  std::vector<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>> solvers_;
};

using BasisPtr = std::shared_ptr<const LyndonBasis>;

inline BasisPtr make_basis(int dim, int level, long long max_total_dim = 20000) {
  return std::make_shared<const LyndonBasis>(dim, level, max_total_dim);
}

// Element of g^(l) in Lyndon coordinates.
struct LieElement {
  BasisPtr basis;
  Eigen::VectorXd coords;

  LieElement() = default;
  explicit LieElement(BasisPtr b) : basis(std::move(b)) {
    coords = Eigen::VectorXd::Zero(basis->total_dim());
  }
  LieElement(BasisPtr b, Eigen::VectorXd c) : basis(std::move(b)), coords(std::move(c)) {
    if (coords.size() != basis->total_dim())
      throw std::invalid_argument("LieElement: coordinate size mismatch");
  }

  Eigen::VectorBlock<Eigen::VectorXd> level_block(int k) {
    return coords.segment(basis->level_offset(k), basis->level_dim(k));
  }
  Eigen::VectorBlock<const Eigen::VectorXd> level_block(int k) const {
    return coords.segment(basis->level_offset(k), basis->level_dim(k));
  }

  void check_same_basis(const LieElement& o) const {
    if (basis.get() != o.basis.get()) {
      if (!basis || !o.basis || basis->dim() != o.basis->dim() || basis->level() != o.basis->level())
        throw std::invalid_argument("LieElement basis mismatch");
    }
  }

  LieElement& operator+=(const LieElement& o) {
    check_same_basis(o);
    coords += o.coords;
    return *this;
  }
  LieElement& operator-=(const LieElement& o) {
    check_same_basis(o);
    coords -= o.coords;
    return *this;
  }
  LieElement& operator*=(double s) {
    coords *= s;
    return *this;
  }
  friend LieElement operator+(LieElement a, const LieElement& b) { return a += b; }
  friend LieElement operator-(LieElement a, const LieElement& b) { return a -= b; }
  friend LieElement operator*(double s, LieElement a) { return a *= s; }
};

inline TruncatedTensor to_tensor(const LieElement& u) {
  const auto& basis = *u.basis;
  TruncatedTensor t(basis.dim(), basis.level());
  for (int k = 1; k <= basis.level(); ++k) {
    auto& lv = t.level_coeffs(k);
    Eigen::VectorXd block = basis.expansion_matrix(k) * u.level_block(k);
    for (Eigen::Index i = 0; i < block.size(); ++i) lv[static_cast<std::size_t>(i)] = block[i];
  }
  return t;
}

// Inverse coordinate change, valid only on the Lie subspace; the least-squares
// defect is checked level by level so roundoff from repeated tensor products
// does not trip the membership test.
inline LieElement from_tensor(const BasisPtr& basis, const TruncatedTensor& t,
                              double membership_tol = 1e-8) {
  if (t.dim() != basis->dim() || t.level() != basis->level())
    throw std::invalid_argument("from_tensor: tensor shape does not match basis");
  LieElement u(basis);
  double residual_sq = t.scalar() * t.scalar();
  for (int k = 1; k <= basis->level(); ++k) {
    const auto& lv = t.level_coeffs(k);
    Eigen::VectorXd block(static_cast<Eigen::Index>(lv.size()));
    for (std::size_t i = 0; i < lv.size(); ++i) block[static_cast<Eigen::Index>(i)] = lv[i];
    double res = 0.0;
    u.level_block(k) = basis->project_level(k, block, &res);
    residual_sq += res * res;
  }
  double residual = std::sqrt(residual_sq);
  if (residual > membership_tol)
    throw std::runtime_error("from_tensor: not a Lie element (residual " +
                             std::to_string(residual) + ")");
  return u;
}

inline double hs_norm(const LieElement& u) { return hs_norm(to_tensor(u)); }

inline LieElement lie_bracket(const LieElement& u, const LieElement& v) {
  u.check_same_basis(v);
  TruncatedTensor a = to_tensor(u);
  TruncatedTensor b = to_tensor(v);
  TruncatedTensor c = tensor_mul(a, b);
  c -= tensor_mul(b, a);
  return from_tensor(u.basis, c);
}

// Group product pulled back to the algebra: bch(u, v) = log(exp(u) (x) exp(v)).
inline LieElement bch(const LieElement& u, const LieElement& v) {
  u.check_same_basis(v);
  TruncatedTensor g = tensor_mul(tensor_exp(to_tensor(u)), tensor_exp(to_tensor(v)));
  return from_tensor(u.basis, tensor_log(g));
}

// Dilation in coordinates: level-k block scales by lambda^k.
inline LieElement dilate(const LieElement& u, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("dilate: lambda must be positive");
  LieElement out = u;
  double p = 1.0;
  for (int k = 1; k <= u.basis->level(); ++k) {
    p *= lambda;
    out.level_block(k) *= p;
  }
  return out;
}

inline LieElement random_lie(const BasisPtr& basis, SplitMix64& rng) {
  LieElement u(basis);
  for (Eigen::Index i = 0; i < u.coords.size(); ++i) u.coords[i] = rng.next_gaussian();
  return u;
}

}  // namespace hypopath
