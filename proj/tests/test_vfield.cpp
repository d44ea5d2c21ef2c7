#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hypopath/rng.hpp"
#include "hypopath/vfield.hpp"

using namespace hypopath;

namespace {

GridPath segment_path(const Eigen::RowVectorXd& v) {
  Eigen::MatrixXd vals(2, v.size());
  vals.row(0).setZero();
  vals.row(1) = v;
  return GridPath::polyline({0.0, 1.0}, vals);
}

GridPath square_loop() {
  Eigen::MatrixXd vals(5, 2);
  vals << 0, 0, 1, 0, 1, 1, 0, 1, 0, 0;
  return GridPath::polyline({0.0, 0.25, 0.5, 0.75, 1.0}, vals);
}

VectorFieldSystem heisenberg_blackbox() {
  return VectorFieldSystem("heisenberg-bb", 3, 2, [](int alpha, const Eigen::VectorXd& x) {
    Eigen::VectorXd v(3);
    if (alpha == 1)
      v << 1.0, 0.0, 0.0;
    else
      v << 0.0, 1.0, x[0];
    return v;
  });
}

}  // namespace

TEST_CASE("polynomial expressions") {
  auto p = parse_polynomial("2*x1^2*x3 - 0.5 + x2", 3);
  Eigen::VectorXd x(3);
  x << 2.0, -1.0, 3.0;
  CHECK(p.eval(x) == Catch::Approx(2.0 * 4.0 * 3.0 - 0.5 - 1.0).margin(1e-14));

  auto q = parse_polynomial("(1 - x1) * (1 + x1)", 2);
  Eigen::VectorXd y(2);
  y << 0.3, 0.0;
  CHECK(q.eval(y) == Catch::Approx(1.0 - 0.09).margin(1e-14));

  CHECK_THROWS_AS(parse_polynomial("x4", 3), std::invalid_argument);
  CHECK_THROWS_AS(parse_polynomial("x1 +", 3), std::invalid_argument);
  CHECK_THROWS_AS(parse_polynomial("1 2", 3), std::invalid_argument);

  // compiled form agrees with the map-based evaluation
  auto c = CompiledPoly::compile(p);
  CHECK(c.eval(x.data()) == Catch::Approx(p.eval(x)).margin(1e-14));
}

TEST_CASE("compositions and brackets") {
  auto heis = make_system("heisenberg");
  Eigen::VectorXd x(3);
  x << 0.7, -0.2, 1.5;

  SECTION("heisenberg composition table") {
    Eigen::VectorXd v12 = heis.composition({1, 2}, x);
    CHECK(v12.isApprox(Eigen::Vector3d(0, 0, 1), 1e-14));
    CHECK(heis.composition({2, 1}, x).norm() == 0.0);
    CHECK(heis.composition({1, 1}, x).norm() == 0.0);
    CHECK(heis.composition({2, 2}, x).norm() == 0.0);
    CHECK(heis.composition({1, 1, 2}, x).norm() == 0.0);
  }

  SECTION("heisenberg bracket") {
    Eigen::VectorXd b = heis.bracket({1, 2}, x);
    CHECK(b.isApprox(Eigen::Vector3d(0, 0, 1), 1e-14));
    CHECK(heis.bracket({2, 1}, x).isApprox(Eigen::Vector3d(0, 0, -1), 1e-14));
  }

  SECTION("finite differences match the analytic backend") {
    auto bb = heisenberg_blackbox();
    SplitMix64 rng(117);
    for (int rep = 0; rep < 5; ++rep) {
      Eigen::VectorXd p(3);
      p << rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian();
      for (const Word& w : {Word{1, 2}, Word{2}, Word{1, 2, 2}}) {
        Eigen::VectorXd a = heis.composition(w, p);
        Eigen::VectorXd f = bb.composition(w, p);
        CHECK((a - f).norm() <= 1e-4 * (1.0 + a.norm()));
        Eigen::VectorXd ab = heis.bracket(w, p);
        Eigen::VectorXd fb = bb.bracket(w, p);
        CHECK((ab - fb).norm() <= 1e-4 * (1.0 + ab.norm()));
      }
    }
  }
}

TEST_CASE("flow integration") {
  SECTION("constant fields integrate exactly") {
    auto sys = make_user_system(2, 2, {{"1", "-2"}, {"0.5", "3"}});
    Eigen::VectorXd x0(2);
    x0 << 1.0, 1.0;
    Eigen::MatrixXd vals(3, 2);
    vals << 0, 0, 0.3, -0.1, 0.5, 0.4;
    auto path = GridPath::polyline({0.0, 0.4, 1.0}, vals);
    auto res = flow(sys, x0, path);
    Eigen::VectorXd expected(2);
    expected << 1.0 + 1.0 * 0.5 + 0.5 * 0.4, 1.0 - 2.0 * 0.5 + 3.0 * 0.4;
    CHECK((res.endpoint - expected).norm() <= 1e-12);
  }

  SECTION("heisenberg area functional") {
    auto heis = make_system("heisenberg");
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);
    auto res = flow(heis, x0, square_loop());
    CHECK(res.endpoint.isApprox(Eigen::Vector3d(0, 0, 1), 1e-10));
    auto rev = flow(heis, x0, square_loop().reversed());
    CHECK(rev.endpoint.isApprox(Eigen::Vector3d(0, 0, -1), 1e-10));
  }

  SECTION("fourth-order convergence under step halving") {
    auto sys = make_user_system(1, 1, {{"1 + x1^2"}});
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(1);
    Eigen::RowVectorXd v(1);
    v << 0.8;
    auto path = segment_path(v);
    double exact = std::tan(0.8);
    auto err = [&](int substeps) {
      FlowOptions opt;
      opt.steps_per_unit = 0.0;
      opt.min_substeps = substeps;
      return std::abs(flow(sys, x0, path, opt).endpoint[0] - exact);
    };
    double ratio = err(64) / err(128);
    CHECK(ratio >= 12.0);
    CHECK(ratio <= 20.0);
  }

  SECTION("flow composition over a split path") {
    auto heis = make_system("heisenberg");
    SplitMix64 rng(7);
    Eigen::MatrixXd vals(5, 2);
    vals.row(0).setZero();
    for (int i = 1; i < 5; ++i)
      for (int c = 0; c < 2; ++c) vals(i, c) = vals(i - 1, c) + 0.4 * rng.next_gaussian();
    auto path = GridPath::polyline({0.0, 0.25, 0.5, 0.75, 1.0}, vals);
    Eigen::VectorXd x0(3);
    x0 << 0.2, -0.1, 0.05;

    auto full = flow(heis, x0, path);
    Eigen::MatrixXd first = vals.topRows(3), second = vals.bottomRows(3);
    auto mid = flow(heis, x0, GridPath::polyline({0.0, 0.5, 1.0}, first));
    auto composed = flow(heis, mid.endpoint, GridPath::polyline({0.0, 0.5, 1.0}, second));
    CHECK((full.endpoint - composed.endpoint).norm() <= 1e-10);
  }

  SECTION("variational jacobian") {
    auto heis = make_system("heisenberg");
    SplitMix64 rng(11);
    Eigen::MatrixXd vals(4, 2);
    vals.row(0).setZero();
    for (int i = 1; i < 4; ++i)
      for (int c = 0; c < 2; ++c) vals(i, c) = vals(i - 1, c) + 0.5 * rng.next_gaussian();
    auto path = GridPath::polyline({0.0, 0.3, 0.7, 1.0}, vals);
    Eigen::VectorXd x0(3);
    x0 << 0.1, 0.2, 0.3;
    FlowOptions opt;
    opt.want_jacobian = true;
    auto res = flow(heis, x0, path, opt);

    // d(endpoint_3)/d(x0_1) = total increment of the second drive component
    Eigen::MatrixXd expected = Eigen::MatrixXd::Identity(3, 3);
    expected(2, 0) = vals(3, 1) - vals(0, 1);
    CHECK((res.jacobian - expected).norm() <= 1e-10);
    CHECK(std::abs(res.jacobian.determinant()) > 0.5);

    // finite-difference cross-check
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd xp = x0, xm = x0;
      xp[j] += h;
      xm[j] -= h;
      Eigen::VectorXd col = (flow(heis, xp, path).endpoint - flow(heis, xm, path).endpoint) / (2 * h);
      CHECK((res.jacobian.col(j) - col).norm() <= 1e-6);
    }
  }

  SECTION("blow-up guard") {
    auto sys = make_user_system(1, 1, {{"x1^2"}});
    Eigen::VectorXd x0(1);
    x0 << 1.0;
    Eigen::RowVectorXd v(1);
    v << 10.0;
    CHECK_THROWS_AS(flow(sys, x0, segment_path(v)), std::runtime_error);
  }
}

TEST_CASE("taylor approximation map") {
  SECTION("first order is the linear pairing") {
    auto heis = make_system("heisenberg");
    auto basis = make_basis(2, 1);
    LieElement u(basis);
    u.coords << 0.3, -0.4;
    Eigen::VectorXd x(3);
    x << 0.5, 0.1, -0.2;
    Eigen::VectorXd expected = 0.3 * heis.field(1, x) - 0.4 * heis.field(2, x);
    CHECK((taylor_F(heis, u, x) - expected).norm() <= 1e-13);
  }

  SECTION("commuting constant fields are reproduced exactly at any level") {
    auto sys = make_user_system(2, 2, {{"1", "2"}, {"-1", "0.5"}});
    Eigen::VectorXd x0(2);
    x0 << 0.3, 0.7;
    for (int l : {1, 2, 3}) {
      auto basis = make_basis(2, l);
      SplitMix64 rng(13);
      LieElement u = random_lie(basis, rng);
      u *= 0.5 / hs_norm(u);
      auto path = path_from_group_element(u);
      Eigen::VectorXd via_flow = flow(sys, x0, path).endpoint;
      Eigen::VectorXd via_taylor = x0 + taylor_F(sys, u, x0);
      CHECK((via_flow - via_taylor).norm() <= 1e-10);
    }
  }

  SECTION("taylor_F(0, x) vanishes") {
    auto heis = make_system("heisenberg");
    auto basis = make_basis(2, 2);
    LieElement zero(basis);
    Eigen::VectorXd x(3);
    x << 1.0, 2.0, 3.0;
    CHECK(taylor_F(heis, zero, x).norm() == 0.0);
  }

  SECTION("Euler estimate: remainder order l+1 in the path length") {
    // genuinely non-nilpotent system
    auto sys = make_user_system(2, 2, {{"1", "0"}, {"0", "1 + x1^2"}});
    Eigen::VectorXd x0(2);
    x0 << 0.2, -0.3;
    const int l = 2;
    auto basis = make_basis(2, l);
    SplitMix64 rng(17);
    Eigen::MatrixXd base(4, 2);
    base.row(0).setZero();
    for (int i = 1; i < 4; ++i)
      for (int c = 0; c < 2; ++c) base(i, c) = base(i - 1, c) + rng.next_gaussian();

    std::vector<double> log_len, log_err;
    FlowOptions opt;
    opt.steps_per_unit = 512.0;
    for (int k = 2; k <= 7; ++k) {
      double scale = std::pow(2.0, -k);
      auto path = GridPath::polyline({0.0, 0.3, 0.6, 1.0}, (scale * base).eval());
      Eigen::VectorXd endpoint = flow(sys, x0, path, opt).endpoint;
      LieElement u = log_signature(path, basis);
      double err = (endpoint - x0 - taylor_F(sys, u, x0)).norm();
      log_len.push_back(std::log(path.one_variation()));
      log_err.push_back(std::log(err));
    }
    // least-squares slope
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < log_len.size(); ++i) {
      mx += log_len[i];
      my += log_err[i];
    }
    mx /= log_len.size();
    my /= log_err.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < log_len.size(); ++i) {
      num += (log_len[i] - mx) * (log_err[i] - my);
      den += (log_len[i] - mx) * (log_len[i] - mx);
    }
    double slope = num / den;
    CHECK(slope >= l + 0.7);
  }
}

TEST_CASE("jacobian of the taylor map") {
  auto heis = make_system("heisenberg");
  auto basis = make_basis(2, 2);
  Eigen::VectorXd x(3);
  x << 0.4, -0.7, 0.2;

  SECTION("at u = 0 the bracket directions map to bracket fields") {
    LieElement zero(basis);
    Eigen::MatrixXd J = jacobian_JF(heis, zero, x);
    CHECK((J.col(0) - heis.field(1, x)).norm() <= 1e-12);
    CHECK((J.col(1) - heis.field(2, x)).norm() <= 1e-12);
    CHECK((J.col(basis->level_offset(2)) - heis.bracket({1, 2}, x)).norm() <= 1e-6);
  }

  SECTION("matches finite differences of taylor_F") {
    SplitMix64 rng(19);
    LieElement u = random_lie(basis, rng);
    u *= 0.3 / hs_norm(u);
    Eigen::MatrixXd J = jacobian_JF(heis, u, x);
    const double h = 1e-5;
    for (int j = 0; j < basis->total_dim(); ++j) {
      LieElement up = u, um = u;
      up.coords[j] += h;
      um.coords[j] -= h;
      Eigen::VectorXd col = (taylor_F(heis, up, x) - taylor_F(heis, um, x)) / (2 * h);
      CHECK((J.col(j) - col).norm() <= 1e-4);
    }
  }

  SECTION("linearity of the differential in the perturbation") {
    LieElement u(basis);
    TruncatedTensor ut = to_tensor(u);
    LieElement b1(basis), b2(basis);
    b1.coords[0] = 1.0;
    b2.coords[2] = 1.0;
    auto d1 = tensor_exp_differential(ut, to_tensor(b1));
    auto d2 = tensor_exp_differential(ut, to_tensor(b2));
    auto dsum = tensor_exp_differential(ut, to_tensor(b1) + to_tensor(b2));
    CHECK(hs_norm(dsum - d1 - d2) <= 1e-13);
  }
}

TEST_CASE("hypoellipticity check") {
  std::vector<Eigen::VectorXd> probes;
  SplitMix64 rng(23);
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd p(3);
    p << rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian();
    probes.push_back(p);
  }

  SECTION("elliptic identity fields have depth 1") {
    auto sys = make_system("elliptic-identity", 3);
    auto rep = hypo_check(sys, 3, probes);
    CHECK(rep.l0 == 1);
    CHECK(rep.lambda_min == Catch::Approx(1.0).margin(1e-12));
    CHECK(rep.jf_lambda_min > 0.9);
  }

  SECTION("heisenberg needs the first bracket") {
    auto sys = make_system("heisenberg");
    auto rep = hypo_check(sys, 3, probes);
    CHECK(rep.l0 == 2);
    CHECK(rep.lambda_min_per_l[0] <= 1e-8);
    // min eigenvalue of [[1, x1], [x1, x1^2+2]] over the probe box
    CHECK(rep.lambda_min > 0.1);
    CHECK(rep.jf_lambda_min > 0.1);
  }

  SECTION("degenerate repeated field is rejected") {
    auto sys = make_user_system(2, 2, {{"1", "0"}, {"1", "0"}});
    std::vector<Eigen::VectorXd> p2{Eigen::VectorXd::Zero(2)};
    CHECK_THROWS_WITH(hypo_check(sys, 4, p2),
                      Catch::Matchers::ContainsSubstring("not hypoelliptic"));
  }

  SECTION("probe set must be nonempty") {
    auto sys = make_system("heisenberg");
    CHECK_THROWS_AS(hypo_check(sys, 2, {}), std::invalid_argument);
  }
}

TEST_CASE("disintegration kernel") {
  SECTION("identity fields at the origin") {
    auto sys = make_system("elliptic-identity", 2);
    auto basis = make_basis(2, 1);
    LieElement zero(basis);
    CHECK(kernel_K(sys, zero, Eigen::VectorXd::Zero(2)) == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("heisenberg at u = 0 against the direct gramian oracle") {
    auto sys = make_system("heisenberg");
    auto basis = make_basis(2, 2);
    LieElement zero(basis);
    Eigen::VectorXd x(3);
    x << 0.3, 0.1, -0.6;
    // oracle: sum V_mu V_mu^T over an HS-orthonormal basis of g^(2):
    // {e1, e2, (e12 - e21)/sqrt(2)}
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(3, 3);
    M += sys.field(1, x) * sys.field(1, x).transpose();
    M += sys.field(2, x) * sys.field(2, x).transpose();
    Eigen::VectorXd vb = sys.bracket({1, 2}, x) / std::sqrt(2.0);
    M += vb * vb.transpose();
    double expected = 1.0 / std::sqrt(M.determinant());
    CHECK(kernel_K(sys, zero, x) == Catch::Approx(expected).epsilon(1e-10));
  }

  SECTION("invariant under orthogonal output rotations") {
    Eigen::Matrix2d Q;
    double th = 0.639;
    Q << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    // rotated grushin-like system: fields W_a(y) = Q V_a(Q^T y)
    auto rotated = VectorFieldSystem("rotated", 2, 2, [Q](int alpha, const Eigen::VectorXd& y) {
      Eigen::VectorXd x = Q.transpose() * y;
      Eigen::VectorXd v(2);
      if (alpha == 1)
        v << 1.0, 0.0;
      else
        v << 0.0, x[0];
      return (Q * v).eval();
    });
    auto plain = make_system("grushin-like");
    auto basis = make_basis(2, 2);
    SplitMix64 rng(29);
    for (int rep = 0; rep < 3; ++rep) {
      LieElement u = random_lie(basis, rng);
      u *= 0.2 / hs_norm(u);
      Eigen::VectorXd x(2);
      x << 0.8 + rng.next_uniform(), rng.next_gaussian();
      double k1 = kernel_K(plain, u, x);
      double k2 = kernel_K(rotated, u, (Q * x).eval());
      CHECK(k1 == Catch::Approx(k2).epsilon(1e-4));
    }
  }

  SECTION("rank deficiency is reported") {
    auto sys = make_system("grushin-like");
    auto basis = make_basis(2, 1);  // level 1: fields alone do not span at x1 = 0
    LieElement zero(basis);
    CHECK_THROWS_WITH(kernel_K(sys, zero, Eigen::VectorXd::Zero(2)),
                      Catch::Matchers::ContainsSubstring("rank deficient"));
  }
}
