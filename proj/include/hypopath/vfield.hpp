#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypopath/lyndon.hpp"
#include "hypopath/path.hpp"
#include "hypopath/poly.hpp"
#include "hypopath/tensor.hpp"

namespace hypopath {

// Driving-field system for dx = sum_a V_a(x) dh^a. Two backends: coordinate
// polynomials (derivatives and iterated compositions computed symbolically,
// then compiled for evaluation) or a black-box evaluator with nested central
// finite differences, step 1e-5 (1 + |x|).
class VectorFieldSystem {
 public:
  using EvalFn = std::function<Eigen::VectorXd(int, const Eigen::VectorXd&)>;

  VectorFieldSystem(std::string name, int state_dim, int drive_dim,
                    std::vector<std::vector<Polynomial>> fields)
      : name_(std::move(name)), n_(state_dim), d_(drive_dim), poly_(std::move(fields)) {
    if (static_cast<int>(poly_.size()) != d_)
      throw std::invalid_argument("VectorFieldSystem: need one field per driving direction");
    for (const auto& f : poly_)
      if (static_cast<int>(f.size()) != n_)
        throw std::invalid_argument("VectorFieldSystem: field component count mismatch");
    compiled_.resize(d_);
    compiled_jac_.resize(d_);
    for (int a = 0; a < d_; ++a) {
      compiled_[a].resize(n_);
      compiled_jac_[a].resize(n_);
      for (int c = 0; c < n_; ++c) {
        compiled_[a][c] = CompiledPoly::compile(poly_[a][c]);
        compiled_jac_[a][c].resize(n_);
        for (int j = 0; j < n_; ++j)
          compiled_jac_[a][c][j] = CompiledPoly::compile(poly_[a][c].partial(j));
      }
    }
  }

  VectorFieldSystem(std::string name, int state_dim, int drive_dim, EvalFn fn)
      : name_(std::move(name)), n_(state_dim), d_(drive_dim), eval_fn_(std::move(fn)) {}

  const std::string& name() const { return name_; }
  int state_dim() const { return n_; }
  int drive_dim() const { return d_; }
  bool analytic() const { return !poly_.empty(); }

  Eigen::VectorXd field(int alpha, const Eigen::VectorXd& x) const {
    check_alpha(alpha);
    if (analytic()) {
      Eigen::VectorXd out(n_);
      for (int c = 0; c < n_; ++c) out[c] = compiled_[alpha - 1][c].eval(x.data());
      return out;
    }
    return eval_fn_(alpha, x);
  }

  Eigen::MatrixXd field_jacobian(int alpha, const Eigen::VectorXd& x) const {
    check_alpha(alpha);
    Eigen::MatrixXd J(n_, n_);
    if (analytic()) {
      for (int c = 0; c < n_; ++c)
        for (int j = 0; j < n_; ++j) J(c, j) = compiled_jac_[alpha - 1][c][j].eval(x.data());
      return J;
    }
    const double h = fd_step(x);
    for (int j = 0; j < n_; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      J.col(j) = (eval_fn_(alpha, xp) - eval_fn_(alpha, xm)) / (2.0 * h);
    }
    return J;
  }

  // drive f(x) = sum_a V_a(x) v_a, written into out without allocating
  void eval_drive(const Eigen::VectorXd& x, const Eigen::RowVectorXd& v,
                  Eigen::VectorXd& out) const {
    if (analytic()) {
      for (int c = 0; c < n_; ++c) {
        double acc = 0.0;
        for (int a = 0; a < d_; ++a)
          if (v[a] != 0.0) acc += v[a] * compiled_[a][c].eval(x.data());
        out[c] = acc;
      }
      return;
    }
    out.setZero();
    for (int a = 0; a < d_; ++a)
      if (v[a] != 0.0) out += v[a] * eval_fn_(a + 1, x);
  }

  void eval_drive_jacobian(const Eigen::VectorXd& x, const Eigen::RowVectorXd& v,
                           Eigen::MatrixXd& out) const {
    if (analytic()) {
      for (int c = 0; c < n_; ++c)
        for (int j = 0; j < n_; ++j) {
          double acc = 0.0;
          for (int a = 0; a < d_; ++a)
            if (v[a] != 0.0) acc += v[a] * compiled_jac_[a][c][j].eval(x.data());
          out(c, j) = acc;
        }
      return;
    }
    out.setZero();
    for (int a = 0; a < d_; ++a)
      if (v[a] != 0.0) out += v[a] * field_jacobian(a + 1, x);
  }

  // Iterated composition V_(word) = V_{i1}( ... (V_{i_{r-1}} V_{i_r})), each
  // application differentiating the inner field along the outer one.
  Eigen::VectorXd composition(const Word& word, const Eigen::VectorXd& x) const {
    if (word.empty()) throw std::invalid_argument("composition: empty word");
    if (analytic()) return eval_polymap(composition_poly(word), x);
    return composition_fd(word, x);
  }

  // Right-nested bracket V_[word]: V_[i] = V_i, V_[i beta] = [V_i, V_[beta]].
  Eigen::VectorXd bracket(const Word& word, const Eigen::VectorXd& x) const {
    if (word.empty()) throw std::invalid_argument("bracket: empty word");
    if (analytic()) return eval_polymap(bracket_poly(word), x);
    return bracket_fd(word, x);
  }

  const std::vector<Polynomial>& composition_poly(const Word& word) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    return composition_poly_locked(word);
  }

  const std::vector<Polynomial>& bracket_poly(const Word& word) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    return bracket_poly_locked(word);
  }

 private:
  // map nodes are reference-stable, so recursing under the held lock is fine
  const std::vector<Polynomial>& composition_poly_locked(const Word& word) const {
    auto it = comp_cache_.find(word);
    if (it != comp_cache_.end()) return it->second;
    std::vector<Polynomial> result;
    if (word.size() == 1) {
      result = poly_[word[0] - 1];
    } else {
      Word rest(word.begin() + 1, word.end());
      const auto& inner = composition_poly_locked(rest);
      result = directional_derivative(inner, poly_[word[0] - 1]);
    }
    return comp_cache_.emplace(word, std::move(result)).first->second;
  }

  const std::vector<Polynomial>& bracket_poly_locked(const Word& word) const {
    auto it = bracket_cache_.find(word);
    if (it != bracket_cache_.end()) return it->second;
    std::vector<Polynomial> result;
    if (word.size() == 1) {
      result = poly_[word[0] - 1];
    } else {
      Word rest(word.begin() + 1, word.end());
      const auto& inner = bracket_poly_locked(rest);
      const auto& outer = poly_[word[0] - 1];
      auto lhs = directional_derivative(inner, outer);  // V_i V_[rest]
      auto rhs = directional_derivative(outer, inner);  // V_[rest] V_i
      for (int c = 0; c < n_; ++c) lhs[c] -= rhs[c];
      result = std::move(lhs);
    }
    return bracket_cache_.emplace(word, std::move(result)).first->second;
  }

  void check_alpha(int alpha) const {
    if (alpha < 1 || alpha > d_) throw std::invalid_argument("field index out of range");
  }

  static double fd_step(const Eigen::VectorXd& x) { return 1e-5 * (1.0 + x.norm()); }

  // (W along U): component c gets sum_j d_j(W_c) U_j
  std::vector<Polynomial> directional_derivative(const std::vector<Polynomial>& w,
                                                 const std::vector<Polynomial>& u) const {
    std::vector<Polynomial> out(n_, Polynomial(n_));
    for (int c = 0; c < n_; ++c)
      for (int j = 0; j < n_; ++j) {
        Polynomial p = w[c].partial(j);
        if (!p.is_zero() && !u[j].is_zero()) out[c] += p * u[j];
      }
    return out;
  }

  Eigen::VectorXd eval_polymap(const std::vector<Polynomial>& m, const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(n_);
    for (int c = 0; c < n_; ++c) out[c] = m[c].eval(x);
    return out;
  }

  Eigen::VectorXd composition_fd(const Word& word, const Eigen::VectorXd& x) const {
    if (word.size() == 1) return eval_fn_(word[0], x);
    Word rest(word.begin() + 1, word.end());
    Eigen::VectorXd dir = eval_fn_(word[0], x);
    double nrm = dir.norm();
    if (nrm == 0.0) return Eigen::VectorXd::Zero(n_);
    const double h = fd_step(x);
    Eigen::VectorXd e = dir / nrm;
    return (composition_fd(rest, x + h * e) - composition_fd(rest, x - h * e)) * (nrm / (2.0 * h));
  }

  Eigen::VectorXd bracket_fd(const Word& word, const Eigen::VectorXd& x) const {
    if (word.size() == 1) return eval_fn_(word[0], x);
    Word rest(word.begin() + 1, word.end());
    const double h = fd_step(x);
    auto dderiv = [&](auto&& f, const Eigen::VectorXd& dir) {
      double nrm = dir.norm();
      if (nrm == 0.0) return Eigen::VectorXd::Zero(n_).eval();
      Eigen::VectorXd e = dir / nrm;
      return ((f(x + h * e) - f(x - h * e)) * (nrm / (2.0 * h))).eval();
    };
    Eigen::VectorXd vi = eval_fn_(word[0], x);
    Eigen::VectorXd lhs = dderiv([&](const Eigen::VectorXd& y) { return bracket_fd(rest, y); }, vi);
    Eigen::VectorXd vrest = bracket_fd(rest, x);
    Eigen::VectorXd rhs =
        dderiv([&](const Eigen::VectorXd& y) { return eval_fn_(word[0], y); }, vrest);
    return lhs - rhs;
  }

  std::string name_;
  int n_;
  int d_;
  std::vector<std::vector<Polynomial>> poly_;
  std::vector<std::vector<CompiledPoly>> compiled_;
  std::vector<std::vector<std::vector<CompiledPoly>>> compiled_jac_;
  EvalFn eval_fn_;

  mutable std::mutex cache_mutex_;
  mutable std::map<Word, std::vector<Polynomial>> comp_cache_;
  mutable std::map<Word, std::vector<Polynomial>> bracket_cache_;
};

// Built-in example systems.
inline VectorFieldSystem make_system(const std::string& name, int dims = 0) {
  if (name == "elliptic-identity") {
    int n = dims > 0 ? dims : 2;
    std::vector<std::vector<Polynomial>> fields(n);
    for (int a = 0; a < n; ++a) {
      fields[a].assign(n, Polynomial(n));
      fields[a][a] = Polynomial::constant(n, 1.0);
    }
    return VectorFieldSystem("elliptic-identity", n, n, std::move(fields));
  }
  if (name == "heisenberg") {
    std::vector<std::vector<Polynomial>> fields(2);
    fields[0] = {Polynomial::constant(3, 1.0), Polynomial(3), Polynomial(3)};
    fields[1] = {Polynomial(3), Polynomial::constant(3, 1.0), Polynomial::variable(3, 0)};
    return VectorFieldSystem("heisenberg", 3, 2, std::move(fields));
  }
  if (name == "grushin-like") {
    std::vector<std::vector<Polynomial>> fields(2);
    fields[0] = {Polynomial::constant(2, 1.0), Polynomial(2)};
    fields[1] = {Polynomial(2), Polynomial::variable(2, 0)};
    return VectorFieldSystem("grushin-like", 2, 2, std::move(fields));
  }
  throw std::invalid_argument("make_system: unknown system '" + name + "'");
}

// User system from coordinate-polynomial expressions: exprs[a][c] is the
// c-th component of field a+1 in variables x1..xN.
inline VectorFieldSystem make_user_system(int state_dim, int drive_dim,
                                          const std::vector<std::vector<std::string>>& exprs) {
  if (static_cast<int>(exprs.size()) != drive_dim)
    throw std::invalid_argument("make_user_system: need one expression row per field");
  std::vector<std::vector<Polynomial>> fields(drive_dim);
  for (int a = 0; a < drive_dim; ++a) {
    if (static_cast<int>(exprs[a].size()) != state_dim)
      throw std::invalid_argument("make_user_system: component count mismatch");
    for (const auto& e : exprs[a]) fields[a].push_back(parse_polynomial(e, state_dim));
  }
  return VectorFieldSystem("user", state_dim, drive_dim, std::move(fields));
}

struct FlowOptions {
  double steps_per_unit = 64.0;  // RK4 substeps per unit of segment 1-variation
  int min_substeps = 2;
  double blowup_bound = 1e8;
  bool want_jacobian = false;
  bool want_trajectory = false;  // record states at segment boundaries
};

struct FlowResult {
  Eigen::VectorXd endpoint;
  Eigen::MatrixXd jacobian;                 // d Phi / d x0, when requested
  std::vector<Eigen::VectorXd> trajectory;  // segment-boundary states
};

// Solves dx = sum_a V_a(x) dh^a along a grid path with classical 4th-order
// steps per segment. Signatures and endpoints only see the polyline
// trajectory, so each segment is integrated in its own chart regardless of
// the smooth reparametrization.
inline FlowResult flow(const VectorFieldSystem& sys, const Eigen::VectorXd& x0,
                       const GridPath& path, const FlowOptions& opt = {}) {
  if (path.dim() != sys.drive_dim()) throw std::invalid_argument("flow: drive dimension mismatch");
  const int n = sys.state_dim();
  FlowResult res;
  Eigen::VectorXd x = x0;
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(n, n);
  if (opt.want_trajectory) res.trajectory.push_back(x);

  Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), xt(n);
  Eigen::MatrixXd A(n, n), j1(n, n), j2(n, n), j3(n, n), j4(n, n);

  for (int seg = 0; seg < path.segment_count(); ++seg) {
    Eigen::RowVectorXd v = path.increment(seg);
    double len = v.norm();
    if (len == 0.0) {
      if (opt.want_trajectory) res.trajectory.push_back(x);
      continue;
    }
    int substeps = std::max(opt.min_substeps, static_cast<int>(std::ceil(len * opt.steps_per_unit)));
    Eigen::RowVectorXd vs = v / substeps;
    for (int s = 0; s < substeps; ++s) {
      sys.eval_drive(x, vs, k1);
      xt = x + 0.5 * k1;
      sys.eval_drive(xt, vs, k2);
      xt = x + 0.5 * k2;
      sys.eval_drive(xt, vs, k3);
      xt = x + k3;
      sys.eval_drive(xt, vs, k4);
      if (opt.want_jacobian) {
        sys.eval_drive_jacobian(x, vs, A);
        j1 = A * J;
        sys.eval_drive_jacobian(x + 0.5 * k1, vs, A);
        j2 = A * (J + 0.5 * j1);
        sys.eval_drive_jacobian(x + 0.5 * k2, vs, A);
        j3 = A * (J + 0.5 * j2);
        sys.eval_drive_jacobian(x + k3, vs, A);
        j4 = A * (J + j3);
        J += (j1 + 2.0 * j2 + 2.0 * j3 + j4) / 6.0;
      }
      x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
      if (x.norm() > opt.blowup_bound) throw std::runtime_error("flow: state blow-up");
    }
    if (opt.want_trajectory) res.trajectory.push_back(x);
  }
  res.endpoint = std::move(x);
  if (opt.want_jacobian) res.jacobian = std::move(J);
  return res;
}

// All nonempty words of length <= level over {1..d}, by length then lex.
inline std::vector<Word> all_words(int d, int level) {
  std::vector<Word> words;
  std::vector<Word> frontier{Word{}};
  for (int len = 1; len <= level; ++len) {
    std::vector<Word> next;
    for (const auto& w : frontier)
      for (int a = 1; a <= d; ++a) {
        Word wa = w;
        wa.push_back(a);
        words.push_back(wa);
        next.push_back(wa);
      }
    frontier = std::move(next);
  }
  return words;
}

// The Taylor approximation map F_l(., x) for a fixed base point: pairs the
// iterated compositions V_(word)(x) with the coefficients of exp(u).
class TaylorPolynomial {
 public:
  TaylorPolynomial(const VectorFieldSystem& sys, const Eigen::VectorXd& x, int level)
      : dim_(sys.drive_dim()), level_(level), n_(sys.state_dim()) {
    words_ = all_words(dim_, level);
    coeffs_.resize(words_.size());
    for (std::size_t w = 0; w < words_.size(); ++w) coeffs_[w] = sys.composition(words_[w], x);
  }

  // evaluate from a precomputed group element g = exp(u)
  Eigen::VectorXd eval_group(const TruncatedTensor& g) const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_);
    std::size_t w = 0;
    for (int len = 1; len <= level_; ++len) {
      const auto& lv = g.level_coeffs(len);
      for (std::size_t i = 0; i < lv.size(); ++i, ++w)
        if (lv[i] != 0.0) acc += lv[i] * coeffs_[w];
    }
    return acc;
  }

  Eigen::VectorXd eval(const LieElement& u) const { return eval_group(tensor_exp(to_tensor(u))); }

 private:
  int dim_;
  int level_;
  int n_;
  std::vector<Word> words_;
  std::vector<Eigen::VectorXd> coeffs_;
};

inline Eigen::VectorXd taylor_F(const VectorFieldSystem& sys, const LieElement& u,
                                const Eigen::VectorXd& x) {
  TaylorPolynomial F(sys, x, u.basis->level());
  return F.eval(u);
}

// Directional derivative of the exponential: d/de exp(u + e b) at e = 0,
// exact in the truncated algebra.
inline TruncatedTensor tensor_exp_differential(const TruncatedTensor& u, const TruncatedTensor& b) {
  const int l = u.level();
  std::vector<TruncatedTensor> upow;
  upow.push_back(TruncatedTensor::unit(u.dim(), l));
  for (int k = 1; k < l; ++k) upow.push_back(tensor_mul(upow.back(), u));
  TruncatedTensor acc(u.dim(), l);
  double factorial = 1.0;
  for (int k = 1; k <= l; ++k) {
    factorial *= k;
    for (int j = 0; j <= k - 1; ++j) {
      TruncatedTensor term = tensor_mul(tensor_mul(upow[j], b), upow[k - 1 - j]);
      term *= 1.0 / factorial;
      acc += term;
    }
  }
  return acc;
}

// Jacobian of F_l(u, x) with respect to u, as a matrix acting on Lyndon
// coordinates of g^(l).
inline Eigen::MatrixXd jacobian_JF(const VectorFieldSystem& sys, const LieElement& u,
                                   const Eigen::VectorXd& x) {
  const auto& basis = *u.basis;
  TaylorPolynomial F(sys, x, basis.level());
  TruncatedTensor ut = to_tensor(u);
  Eigen::MatrixXd J(sys.state_dim(), basis.total_dim());
  for (int j = 0; j < basis.total_dim(); ++j) {
    LieElement ej(u.basis);
    ej.coords[j] = 1.0;
    J.col(j) = F.eval_group(tensor_exp_differential(ut, to_tensor(ej)));
  }
  return J;
}

// Gram matrix of the Lyndon expansion: the basis is not orthonormal in the
// Hilbert-Schmidt structure, so adjoints of JF pick up this factor.
inline Eigen::MatrixXd basis_gram(const LyndonBasis& basis) {
  const int m = basis.total_dim();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k <= basis.level(); ++k) {
    if (basis.level_dim(k) == 0) continue;
    const auto& B = basis.expansion_matrix(k);
    G.block(basis.level_offset(k), basis.level_offset(k), basis.level_dim(k), basis.level_dim(k)) =
        B.transpose() * B;
  }
  return G;
}

// JF JF^* as an N x N matrix, with the adjoint taken in the HS inner product.
inline Eigen::MatrixXd jf_gramian(const VectorFieldSystem& sys, const LieElement& u,
                                  const Eigen::VectorXd& x) {
  Eigen::MatrixXd J = jacobian_JF(sys, u, x);
  Eigen::MatrixXd G = basis_gram(*u.basis);
  return J * G.ldlt().solve(J.transpose());
}

struct HypoReport {
  bool hypoelliptic = false;
  int l0 = -1;
  double lambda_min = 0.0;                 // inf over probes at l0
  std::vector<double> lambda_min_per_l;    // inf over probes for l' = 1..l_max
  double jf_lambda_min = 0.0;              // inf over probes of JF(0,x) JF(0,x)^T
};

// Smallest bracket depth at which sum V_[w] V_[w]^T is uniformly positive
// over the probe set; also confirms the non-degeneracy of JF at u = 0.
inline HypoReport hypo_check(const VectorFieldSystem& sys, int l_max,
                             const std::vector<Eigen::VectorXd>& probes,
                             double threshold = 1e-8) {
  if (probes.empty()) throw std::invalid_argument("hypo_check: probe set must be nonempty");
  HypoReport rep;
  const int n = sys.state_dim();
  for (int l = 1; l <= l_max; ++l) {
    auto words = all_words(sys.drive_dim(), l);
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& x : probes) {
      Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
      for (const auto& w : words) {
        Eigen::VectorXd b = sys.bracket(w, x);
        M += b * b.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
      worst = std::min(worst, es.eigenvalues().minCoeff());
    }
    rep.lambda_min_per_l.push_back(worst);
    if (worst > threshold && !rep.hypoelliptic) {
      rep.hypoelliptic = true;
      rep.l0 = l;
      rep.lambda_min = worst;
    }
  }
  if (!rep.hypoelliptic)
    throw std::runtime_error("hypo_check: not hypoelliptic up to l_max = " + std::to_string(l_max));

  auto basis = make_basis(sys.drive_dim(), rep.l0);
  double jf_worst = std::numeric_limits<double>::infinity();
  for (const auto& x : probes) {
    LieElement zero(basis);
    Eigen::MatrixXd M = jf_gramian(sys, zero, x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    jf_worst = std::min(jf_worst, es.eigenvalues().minCoeff());
  }
  rep.jf_lambda_min = jf_worst;
  return rep;
}

// Disintegration kernel K(u, x) = det(JF JF^*)^{-1/2}; throws outside the
// submersion region.
inline double kernel_K(const VectorFieldSystem& sys, const LieElement& u, const Eigen::VectorXd& x,
                       double rank_threshold = 1e-12) {
  double det = jf_gramian(sys, u, x).determinant();
  if (!(det > rank_threshold))
    throw std::runtime_error("kernel_K: rank deficient (det = " + std::to_string(det) + ")");
  return 1.0 / std::sqrt(det);
}

}  // namespace hypopath
