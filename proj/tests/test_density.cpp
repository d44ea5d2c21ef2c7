#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hypopath/density.hpp"
#include "hypopath/rng.hpp"

using namespace hypopath;

namespace {

Eigen::MatrixXd gaussian_samples(int n, int m, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Eigen::MatrixXd s(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) s(i, j) = rng.next_gaussian();
  return s;
}

}  // namespace

TEST_CASE("kernel density estimation") {
  SECTION("standard normal density at the origin") {
    const int m = 3, n = 50000;
    auto samples = gaussian_samples(n, m, 101);
    Eigen::MatrixXd pt = Eigen::MatrixXd::Zero(1, m);
    auto est = kde_rho(samples, pt);
    double exact = std::pow(2.0 * M_PI, -1.5);
    CHECK(std::abs(est.density[0] - exact) <= 0.10 * exact);
    CHECK(est.std_error[0] > 0.0);
  }

  SECTION("uniform box is flat in the interior") {
    const int n = 40000;
    SplitMix64 rng(11);
    Eigen::MatrixXd samples(n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2; ++j) samples(i, j) = 2.0 * rng.next_uniform() - 1.0;
    Eigen::MatrixXd pts(5, 2);
    pts << 0, 0, 0.4, 0.2, -0.5, 0.1, 0.3, -0.4, -0.2, -0.2;
    auto est = kde_rho(samples, pts);
    for (int p = 0; p < 5; ++p) CHECK(std::abs(est.density[p] - 0.25) <= 0.15 * 0.25);
  }

  SECTION("empty evaluation set") {
    auto samples = gaussian_samples(2000, 2, 7);
    auto est = kde_rho(samples, Eigen::MatrixXd(0, 2));
    CHECK(est.density.size() == 0);
  }

  SECTION("validation") {
    auto samples = gaussian_samples(2000, 2, 7);
    Eigen::MatrixXd pt = Eigen::MatrixXd::Zero(1, 2);
    Eigen::VectorXd bad(2);
    bad << 0.1, -0.2;
    CHECK_THROWS_AS(kde_rho(samples, pt, bad), std::invalid_argument);
    CHECK_THROWS_AS(kde_rho(gaussian_samples(500, 2, 8), pt), std::invalid_argument);
  }

  SECTION("mass defect over a 4-sigma box") {
    auto samples = gaussian_samples(5000, 2, 13);
    Eigen::VectorXd h = scott_bandwidth(samples);
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(2, -4.0);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(2, 4.0);
    double mass = kde_box_mass(samples, h, lo, hi);
    CHECK(std::abs(mass - 1.0) <= 0.05);
  }
}

TEST_CASE("positivity of the signature density") {
  auto basis = make_basis(2, 2);

  SECTION("unit box at t = 1") {
    auto rep = positivity_report(0.5, 1.0, basis, 1.0, 20000, 313);
    CHECK(rep.probe_count > 10);
    CHECK(rep.min_density > 0.0);
    CHECK(rep.positive);
  }

  SECTION("a box deep in the tails is not certified") {
    auto rep = positivity_report(0.5, 1.0, basis, 30.0, 2000, 313, 64, 5);
    CHECK_FALSE(rep.positive);
  }
}

TEST_CASE("density scaling in time") {
  auto basis = make_basis(2, 2);
  const double H = 0.7, t = 0.25;

  SECTION("ratio near one at the origin and at probes") {
    Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(3, basis->total_dim());
    pts(1, 0) = 0.2;
    pts(2, 1) = -0.15;
    pts(2, 2) = 0.05;
    auto rows = scaling_check_rho(H, t, basis, pts, 30000, 99, 128);
    REQUIRE(rows.size() == 3);
    CHECK(std::abs(rows[0].ratio - 1.0) <= 0.15 + 3.0 * rows[0].band);
    for (const auto& r : rows) {
      INFO("lhs=" << r.lhs << " rhs=" << r.rhs);
      CHECK(r.lhs > 0.0);
      CHECK(std::abs(r.ratio - 1.0) <= 3.0 * r.band + 0.15);
    }
  }

  SECTION("degenerate t = 1") {
    Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(1, basis->total_dim());
    auto rows = scaling_check_rho(0.6, 1.0, basis, pts, 5000, 3, 64);
    CHECK(std::abs(rows[0].ratio - 1.0) <= 3.0 * rows[0].band + 0.1);
  }

  SECTION("band shrinks with the sample count") {
    Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(1, basis->total_dim());
    auto small = scaling_check_rho(H, t, basis, pts, 4000, 5, 64);
    auto large = scaling_check_rho(H, t, basis, pts, 16000, 5, 64);
    double shrink = small[0].band / large[0].band;
    CHECK(shrink >= 1.3);
    CHECK(shrink <= 3.0);
  }
}

TEST_CASE("taylor approximation order") {
  auto basis = make_basis(2, 2);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);
  std::vector<double> t_list{0.05, 0.1, 0.2, 0.35, 0.5};

  SECTION("heisenberg at l = 2, H = 0.5") {
    auto heis = make_system("heisenberg");
    auto res = taylor_error_order(heis, x0, 0.5, basis, t_list, 2000, 515);
    CHECK_FALSE(res.noise_floor_hit);
    CHECK(res.short_span);  // one decade only
    CHECK(res.slope >= 0.85);
    CHECK(res.slope <= 1.25);
  }

  SECTION("monotone in the truncation level") {
    auto heis = make_system("heisenberg");
    auto res2 = taylor_error_order(heis, x0, 0.5, basis, t_list, 1000, 16);
    auto b3 = make_basis(2, 3);
    auto res3 = taylor_error_order(heis, x0, 0.5, b3, t_list, 1000, 16);
    CHECK(res3.slope >= res2.slope - 0.1);
  }

  SECTION("commuting fields are exact") {
    auto sys = make_user_system(2, 2, {{"1", "0.5"}, {"-0.3", "1"}});
    auto b1 = make_basis(2, 1);
    Eigen::VectorXd origin = Eigen::VectorXd::Zero(2);
    auto res = taylor_error_order(sys, origin, 0.5, b1, t_list, 200, 17);
    CHECK(res.noise_floor_hit);
    for (double e : res.mean_errors) CHECK(e <= 1e-10);
  }

  SECTION("degenerate time ranges are rejected") {
    auto heis = make_system("heisenberg");
    CHECK_THROWS_AS(taylor_error_order(heis, x0, 0.5, basis, {0.1, 0.5}, 100, 1),
                    std::invalid_argument);
  }
}

TEST_CASE("density lower bound proxy") {
  SECTION("elliptic identity matches the exact gaussian") {
    auto sys = make_system("elliptic-identity", 2);
    auto b1 = make_basis(2, 1);
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
    const double H = 0.5;
    DensityLowerOptions opt;
    opt.volume_probes = 150;
    std::vector<double> products;
    for (double t : {0.1, 0.2}) {
      auto rep = taylor_density_lower(sys, x0, H, b1, t, 20000, 4242, opt);
      REQUIRE_FALSE(rep.insufficient_samples);
      double exact = std::pow(2.0 * M_PI * std::pow(t, 2.0 * H), -1.0);
      INFO("t=" << t << " density=" << rep.density_at_x << " exact=" << exact);
      CHECK(std::abs(rep.density_at_x - exact) <= 0.25 * exact);
      CHECK(rep.ball_volume > 0.0);
      products.push_back(rep.product);
    }
    CHECK(std::max(products[0], products[1]) / std::min(products[0], products[1]) <= 3.0);
  }
}

TEST_CASE("disintegration formula") {
  SECTION("coordinate projection") {
    DisintegrationProblem prob;
    prob.ambient_dim = 2;
    prob.target_dim = 1;
    prob.map = [](const Eigen::VectorXd& x) {
      Eigen::VectorXd y(1);
      y << x[0];
      return y;
    };
    prob.jacobian = [](const Eigen::VectorXd&) {
      Eigen::MatrixXd J(1, 2);
      J << 1.0, 0.0;
      return J;
    };
    prob.test_fn = [](const Eigen::VectorXd& x) { return std::exp(-8.0 * x.squaredNorm()); };
    prob.support_lo = Eigen::VectorXd::Constant(2, -2.0);
    prob.support_hi = Eigen::VectorXd::Constant(2, 2.0);
    prob.fiber_seed = [](const Eigen::VectorXd& y) {
      Eigen::VectorXd p(2);
      p << y[0], 0.0;
      return p;
    };
    prob.target_lo = Eigen::VectorXd::Constant(1, -2.0);
    prob.target_hi = Eigen::VectorXd::Constant(1, 2.0);

    auto res = disintegration_check(prob);
    // closed form: integral of exp(-8 |x|^2) over the plane = pi / 8
    CHECK(res.lhs == Catch::Approx(M_PI / 8.0).epsilon(1e-9));
    CHECK(res.rel_error <= 1e-6);
  }

  SECTION("radius-squared map on an annulus against the polar oracle") {
    auto radial = [](double r) {
      double z = (r - 1.0) / 0.4;
      if (std::abs(z) >= 1.0) return 0.0;
      return std::exp(-1.0 / (1.0 - z * z));
    };
    DisintegrationProblem prob;
    prob.ambient_dim = 2;
    prob.target_dim = 1;
    prob.map = [](const Eigen::VectorXd& x) {
      Eigen::VectorXd y(1);
      y << x.squaredNorm();
      return y;
    };
    prob.jacobian = [](const Eigen::VectorXd& x) {
      Eigen::MatrixXd J(1, 2);
      J << 2.0 * x[0], 2.0 * x[1];
      return J;
    };
    prob.test_fn = [radial](const Eigen::VectorXd& x) { return radial(x.norm()); };
    prob.support_lo = Eigen::VectorXd::Constant(2, -1.5);
    prob.support_hi = Eigen::VectorXd::Constant(2, 1.5);
    prob.fiber_seed = [](const Eigen::VectorXd& y) {
      Eigen::VectorXd p(2);
      p << std::sqrt(std::max(y[0], 1e-12)), 0.0;
      return p;
    };
    prob.target_lo = Eigen::VectorXd::Constant(1, 0.36);  // r in (0.6, 1.4) supports phi
    prob.target_hi = Eigen::VectorXd::Constant(1, 1.96);

    // closed fibers keep an O(h^2) seam defect and the bump function converges
    // slowly under Gauss-Legendre, so this case runs at higher resolution
    DisintegrationOptions opt;
    opt.step = 0.0015;
    opt.ambient_nodes = 160;
    opt.outer_nodes = 160;
    auto res = disintegration_check(prob, opt);
    CHECK(res.rel_error <= 1e-4);

    // polar oracle: 2 pi int r phi(r) dr by fine midpoint quadrature
    double oracle = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      double r = 0.6 + 0.8 * (i + 0.5) / n;
      oracle += 2.0 * M_PI * r * radial(r) * (0.8 / n);
    }
    CHECK(res.rhs == Catch::Approx(oracle).epsilon(1e-4));
  }

  SECTION("linear map with non-orthonormal rows") {
    Eigen::MatrixXd A(2, 3);
    A << 1.0, 0.3, 0.0, -0.2, 1.0, 0.4;
    DisintegrationProblem prob;
    prob.ambient_dim = 3;
    prob.target_dim = 2;
    prob.map = [A](const Eigen::VectorXd& x) { return (A * x).eval(); };
    prob.jacobian = [A](const Eigen::VectorXd&) { return A; };
    prob.test_fn = [](const Eigen::VectorXd& x) { return std::exp(-6.0 * x.squaredNorm()); };
    prob.support_lo = Eigen::VectorXd::Constant(3, -2.2);
    prob.support_hi = Eigen::VectorXd::Constant(3, 2.2);
    Eigen::MatrixXd pinv = A.transpose() * (A * A.transpose()).inverse();
    prob.fiber_seed = [pinv](const Eigen::VectorXd& y) { return (pinv * y).eval(); };
    prob.target_lo = Eigen::VectorXd::Constant(2, -4.0);
    prob.target_hi = Eigen::VectorXd::Constant(2, 4.0);

    DisintegrationOptions opt;
    opt.outer_nodes = 32;
    opt.step = 0.012;
    auto res = disintegration_check(prob, opt);
    // lhs is itself the direct 3D quadrature oracle for the rhs construction
    CHECK(res.rel_error <= 1e-4);
  }

  SECTION("only codimension-one fibers are supported") {
    DisintegrationProblem prob;
    prob.ambient_dim = 4;
    prob.target_dim = 1;
    CHECK_THROWS_AS(disintegration_check(prob), std::invalid_argument);
  }
}
