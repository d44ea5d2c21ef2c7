#pragma once

#include <Eigen/Dense>
#include <cctype>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypopath {

// Sparse multivariate polynomial with double coefficients. Closed under the
// operations the vector-field calculus needs (sum, product, partials), and
// compiled to a flat term list for fast evaluation in integrator loops.
class Polynomial {
 public:
  explicit Polynomial(int nvars = 0) : nvars_(nvars) {}

  static Polynomial constant(int nvars, double c) {
    Polynomial p(nvars);
    if (c != 0.0) p.terms_[std::vector<int>(nvars, 0)] = c;
    return p;
  }

  static Polynomial variable(int nvars, int index) {
    if (index < 0 || index >= nvars) throw std::invalid_argument("Polynomial: variable index");
    Polynomial p(nvars);
    std::vector<int> e(nvars, 0);
    e[index] = 1;
    p.terms_[e] = 1.0;
    return p;
  }

  int nvars() const { return nvars_; }
  bool is_zero() const { return terms_.empty(); }

  Polynomial& operator+=(const Polynomial& o) {
    check(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& o) {
    check(o);
    for (const auto& [e, c] : o.terms_) add_term(e, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [e, c] : terms_) c *= s;
    return *this;
  }
  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check(b);
    Polynomial out(a.nvars_);
    for (const auto& [ea, ca] : a.terms_)
      for (const auto& [eb, cb] : b.terms_) {
        std::vector<int> e(a.nvars_);
        for (int i = 0; i < a.nvars_; ++i) e[i] = ea[i] + eb[i];
        out.add_term(e, ca * cb);
      }
    return out;
  }

  Polynomial partial(int var) const {
    Polynomial out(nvars_);
    for (const auto& [e, c] : terms_) {
      if (e[var] == 0) continue;
      std::vector<int> en = e;
      en[var] -= 1;
      out.add_term(en, c * e[var]);
    }
    return out;
  }

  double eval(const Eigen::VectorXd& x) const {
    double acc = 0.0;
    for (const auto& [e, c] : terms_) {
      double term = c;
      for (int i = 0; i < nvars_; ++i)
        for (int k = 0; k < e[i]; ++k) term *= x[i];
      acc += term;
    }
    return acc;
  }

  const std::map<std::vector<int>, double>& terms() const { return terms_; }

 private:
  void check(const Polynomial& o) const {
    if (nvars_ != o.nvars_) throw std::invalid_argument("Polynomial: variable count mismatch");
  }
  void add_term(const std::vector<int>& e, double c) {
    auto it = terms_.find(e);
    if (it == terms_.end()) {
      if (c != 0.0) terms_[e] = c;
    } else {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  int nvars_;
  std::map<std::vector<int>, double> terms_;
};

// Flat evaluation form: term list with (variable, exponent) pairs only for
// variables actually present.
struct CompiledPoly {
  struct Term {
    double coeff;
    std::vector<std::pair<int, int>> vars;  // (index, exponent)
  };
  std::vector<Term> terms;

  static CompiledPoly compile(const Polynomial& p) {
    CompiledPoly out;
    for (const auto& [e, c] : p.terms()) {
      Term t;
      t.coeff = c;
      for (int i = 0; i < static_cast<int>(e.size()); ++i)
        if (e[i] > 0) t.vars.emplace_back(i, e[i]);
      out.terms.push_back(std::move(t));
    }
    return out;
  }

  double eval(const double* x) const {
    double acc = 0.0;
    for (const auto& t : terms) {
      double v = t.coeff;
      for (const auto& [i, e] : t.vars)
        for (int k = 0; k < e; ++k) v *= x[i];
      acc += v;
    }
    return acc;
  }
};

// Parses coordinate-polynomial expressions like "1 - 0.5*x1^2*x3 + x2".
// Variables are x1 .. xN; the grammar supports + - * ^ and parentheses.
inline Polynomial parse_polynomial(const std::string& text, int nvars) {
  std::size_t pos = 0;
  auto skip = [&]() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto fail = [&](const std::string& msg) -> Polynomial {
    throw std::invalid_argument("parse_polynomial: " + msg + " at position " +
                                std::to_string(pos) + " in '" + text + "'");
  };

  std::function<Polynomial()> parse_expr, parse_term, parse_factor;

  parse_factor = [&]() -> Polynomial {
    skip();
    if (pos >= text.size()) return fail("unexpected end");
    char c = text[pos];
    if (c == '(') {
      ++pos;
      Polynomial inner = parse_expr();
      skip();
      if (pos >= text.size() || text[pos] != ')') return fail("missing ')'");
      ++pos;
      return inner;
    }
    if (c == '-') {
      ++pos;
      return -1.0 * parse_factor();
    }
    if (c == 'x') {
      ++pos;
      std::size_t start = pos;
      while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
      if (start == pos) return fail("variable index expected");
      int idx = std::stoi(text.substr(start, pos - start));
      if (idx < 1 || idx > nvars) return fail("variable out of range");
      Polynomial base = Polynomial::variable(nvars, idx - 1);
      skip();
      if (pos < text.size() && text[pos] == '^') {
        ++pos;
        skip();
        std::size_t s2 = pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        if (s2 == pos) return fail("exponent expected");
        int p = std::stoi(text.substr(s2, pos - s2));
        Polynomial acc = Polynomial::constant(nvars, 1.0);
        for (int k = 0; k < p; ++k) acc = acc * base;
        return acc;
      }
      return base;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t start = pos;
      while (pos < text.size() &&
             (std::isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.' ||
              text[pos] == 'e' || text[pos] == 'E' ||
              ((text[pos] == '+' || text[pos] == '-') && pos > start &&
               (text[pos - 1] == 'e' || text[pos - 1] == 'E'))))
        ++pos;
      return Polynomial::constant(nvars, std::stod(text.substr(start, pos - start)));
    }
    return fail("unexpected character");
  };

  parse_term = [&]() -> Polynomial {
    Polynomial acc = parse_factor();
    for (;;) {
      skip();
      if (pos < text.size() && text[pos] == '*') {
        ++pos;
        acc = acc * parse_factor();
      } else {
        return acc;
      }
    }
  };

  parse_expr = [&]() -> Polynomial {
    Polynomial acc = parse_term();
    for (;;) {
      skip();
      if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
        char op = text[pos];
        ++pos;
        Polynomial rhs = parse_term();
        if (op == '+')
          acc += rhs;
        else
          acc -= rhs;
      } else {
        return acc;
      }
    }
  };

  Polynomial result = parse_expr();
  skip();
  if (pos != text.size()) fail("trailing input");
  return result;
}

}  // namespace hypopath
