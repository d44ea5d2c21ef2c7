#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "hypopath/lyndon.hpp"
#include "hypopath/rng.hpp"
#include "hypopath/tensor.hpp"

using namespace hypopath;

namespace {

// Brute-force oracle: a word is Lyndon iff it is strictly smaller than every
// proper suffix. Enumerates all d^k words.
int count_lyndon_words(int d, int k) {
  std::vector<int> w(k, 1);
  int count = 0;
  for (;;) {
    bool lyndon = true;
    for (int s = 1; s < k && lyndon; ++s) {
      if (!std::lexicographical_compare(w.begin(), w.end(), w.begin() + s, w.end())) lyndon = false;
    }
    if (lyndon) ++count;
    int pos = k - 1;
    while (pos >= 0 && w[pos] == d) {
      w[pos] = 1;
      --pos;
    }
    if (pos < 0) break;
    ++w[pos];
  }
  return count;
}

LieElement scaled_random(const BasisPtr& basis, SplitMix64& rng, double target_hs) {
  LieElement u = random_lie(basis, rng);
  double n = hs_norm(u);
  if (n > 0) u *= target_hs / n;
  return u;
}

}  // namespace

TEST_CASE("basis dimensions") {
  SECTION("d=2 l=4 dims") {
    auto basis = make_basis(2, 4);
    CHECK(basis->level_dim(1) == 2);
    CHECK(basis->level_dim(2) == 1);
    CHECK(basis->level_dim(3) == 2);
    CHECK(basis->level_dim(4) == 3);
    CHECK(basis->total_dim() == 8);
  }

  SECTION("abelian case d=1") {
    auto basis = make_basis(1, 4);
    CHECK(basis->level_dim(1) == 1);
    CHECK(basis->level_dim(2) == 0);
    CHECK(basis->level_dim(3) == 0);
    CHECK(basis->level_dim(4) == 0);
  }

  SECTION("Witt formula matches brute-force enumeration, d <= 4, k <= 6") {
    for (int d = 1; d <= 4; ++d) {
      for (int k = 1; k <= 6; ++k) {
        INFO("d=" << d << " k=" << k);
        CHECK(witt_dimension(d, k) == count_lyndon_words(d, k));
      }
    }
  }

  SECTION("enumerated basis respects Witt counts") {
    for (int d = 2; d <= 4; ++d) {
      auto basis = make_basis(d, d == 4 ? 5 : 6);
      for (int k = 1; k <= basis->level(); ++k) {
        INFO("d=" << d << " k=" << k);
        CHECK(basis->level_dim(k) == witt_dimension(d, k));
      }
    }
  }

  SECTION("homogeneous dimension d=2 l=2") {
    auto basis = make_basis(2, 2);
    CHECK(basis->homogeneous_dimension() == 4);
  }

  SECTION("dimension cap") {
    CHECK_THROWS_AS(make_basis(4, 6, 100), std::runtime_error);
  }
}

TEST_CASE("lie bracket") {
  auto basis = make_basis(2, 3);
  LieElement e1(basis), e2(basis);
  e1.coords[0] = 1.0;
  e2.coords[1] = 1.0;

  SECTION("[e1, e1] = 0") {
    auto z = lie_bracket(e1, e1);
    CHECK(z.coords.norm() == 0.0);
  }

  SECTION("[e1, e2] is the level-2 Lyndon generator for word 12") {
    auto b = lie_bracket(e1, e2);
    REQUIRE(basis->level_dim(2) == 1);
    REQUIRE(basis->element(basis->level_offset(2)).word == Word{1, 2});
    CHECK(b.coords[basis->level_offset(2)] == Catch::Approx(1.0).margin(1e-14));
    for (int i = 0; i < basis->total_dim(); ++i) {
      if (i == basis->level_offset(2)) continue;
      CHECK(std::abs(b.coords[i]) < 1e-14);
    }
  }

  SECTION("basis mismatch throws") {
    auto other = make_basis(3, 3);
    LieElement v(other);
    CHECK_THROWS_AS(lie_bracket(e1, v), std::invalid_argument);
  }

  SECTION("Jacobi identity on random triples") {
    SplitMix64 rng(5);
    auto b5 = make_basis(2, 5);
    for (int rep = 0; rep < 10; ++rep) {
      auto u = scaled_random(b5, rng, 0.8);
      auto v = scaled_random(b5, rng, 0.8);
      auto w = scaled_random(b5, rng, 0.8);
      auto jac = lie_bracket(u, lie_bracket(v, w)) + lie_bracket(v, lie_bracket(w, u)) +
                 lie_bracket(w, lie_bracket(u, v));
      CHECK(hs_norm(jac) <= 1e-12);
    }
  }
}

TEST_CASE("tensor coordinate change") {
  SECTION("round trip on random elements") {
    SplitMix64 rng(9);
    auto basis = make_basis(3, 4);
    for (int rep = 0; rep < 20; ++rep) {
      auto u = scaled_random(basis, rng, 1.0);
      auto back = from_tensor(basis, to_tensor(u));
      CHECK((back.coords - u.coords).norm() <= 1e-10);
    }
  }

  SECTION("pure word tensor is not a Lie element") {
    auto basis = make_basis(2, 2);
    TruncatedTensor t(2, 2);
    t.set_coeff({1, 2}, 1.0);
    CHECK_THROWS_WITH(from_tensor(basis, t), Catch::Matchers::ContainsSubstring("not a Lie element"));
  }

  SECTION("zero maps to zero") {
    auto basis = make_basis(2, 3);
    LieElement zero(basis);
    CHECK(hs_norm(to_tensor(zero)) == 0.0);
    auto back = from_tensor(basis, TruncatedTensor(2, 3));
    CHECK(back.coords.norm() == 0.0);
  }
}

TEST_CASE("bch product") {
  SECTION("level-2 cross term against the tensor oracle") {
    auto basis = make_basis(2, 2);
    LieElement e1(basis), e2(basis);
    e1.coords[0] = 1.0;
    e2.coords[1] = 1.0;
    auto p = bch(e1, e2);

    // oracle: direct tensor exp/log composition
    auto t1 = tensor_exp(to_tensor(e1));
    auto t2 = tensor_exp(to_tensor(e2));
    auto expected = from_tensor(basis, tensor_log(tensor_mul(t1, t2)));
    CHECK((p.coords - expected.coords).norm() <= 1e-14);

    // log(exp(e1) exp(e2)) = e1 + e2 + [e1,e2]/2 at l = 2
    CHECK(p.coords[0] == Catch::Approx(1.0).margin(1e-14));
    CHECK(p.coords[1] == Catch::Approx(1.0).margin(1e-14));
    CHECK(p.coords[basis->level_offset(2)] == Catch::Approx(0.5).margin(1e-14));
  }

  SECTION("identity element") {
    SplitMix64 rng(13);
    auto basis = make_basis(2, 4);
    auto v = scaled_random(basis, rng, 0.7);
    LieElement zero(basis);
    CHECK((bch(zero, v).coords - v.coords).norm() <= 1e-12);
    CHECK((bch(v, zero).coords - v.coords).norm() <= 1e-12);
  }

  SECTION("inverse: bch(u, -u) = 0") {
    SplitMix64 rng(17);
    auto basis = make_basis(2, 4);
    for (int rep = 0; rep < 10; ++rep) {
      auto u = scaled_random(basis, rng, 0.9);
      auto z = bch(u, -1.0 * u);
      CHECK(hs_norm(z) <= 1e-11);
    }
  }

  SECTION("associativity of the group law") {
    SplitMix64 rng(19);
    auto basis = make_basis(2, 4);
    for (int rep = 0; rep < 10; ++rep) {
      auto u = scaled_random(basis, rng, 0.6);
      auto v = scaled_random(basis, rng, 0.6);
      auto w = scaled_random(basis, rng, 0.6);
      auto lhs = bch(bch(u, v), w);
      auto rhs = bch(u, bch(v, w));
      CHECK((lhs.coords - rhs.coords).norm() <= 1e-11);
    }
  }

  SECTION("dilation is a bch homomorphism") {
    SplitMix64 rng(23);
    auto basis = make_basis(2, 4);
    for (int rep = 0; rep < 10; ++rep) {
      auto u = scaled_random(basis, rng, 0.6);
      auto v = scaled_random(basis, rng, 0.6);
      double lambda = 0.3 + 1.5 * rng.next_uniform();
      auto lhs = bch(dilate(u, lambda), dilate(v, lambda));
      auto rhs = dilate(bch(u, v), lambda);
      CHECK((lhs.coords - rhs.coords).norm() <= 1e-11);
    }
  }
}

TEST_CASE("dilation determinant equals lambda^nu") {
  for (auto [d, l] : std::vector<std::pair<int, int>>{{2, 3}, {3, 3}, {2, 5}}) {
    auto basis = make_basis(d, l);
    const double lambda = 1.37;
    const int m = basis->total_dim();
    Eigen::MatrixXd D(m, m);
    for (int j = 0; j < m; ++j) {
      LieElement ej(basis);
      ej.coords[j] = 1.0;
      auto img = from_tensor(basis, dilate(to_tensor(ej), lambda));
      D.col(j) = img.coords;
    }
    double det = D.determinant();
    double expected = std::pow(lambda, static_cast<double>(basis->homogeneous_dimension()));
    INFO("d=" << d << " l=" << l);
    CHECK(std::abs(det - expected) <= 1e-10 * expected);
  }
}
