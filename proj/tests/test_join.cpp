#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hypopath/join.hpp"
#include "hypopath/rng.hpp"

using namespace hypopath;

namespace {

Eigen::VectorXd vec3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

}  // namespace

TEST_CASE("psi correction map") {
  auto heis = make_system("heisenberg");
  auto basis = make_basis(2, 2);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);

  SECTION("zero shift returns the input with zero iterations") {
    SplitMix64 rng(3);
    LieElement u = random_lie(basis, rng);
    u *= 0.1 / hs_norm(u);
    auto res = psi(heis, u, x0, Eigen::VectorXd::Zero(3));
    CHECK(res.iterations == 0);
    CHECK((res.v.coords - u.coords).norm() == 0.0);
  }

  SECTION("elliptic identity at level 1 embeds the shift directly") {
    auto sys = make_system("elliptic-identity", 2);
    auto b1 = make_basis(2, 1);
    LieElement zero(b1);
    Eigen::VectorXd eta(2);
    eta << 0.007, -0.002;
    auto res = psi(sys, zero, Eigen::VectorXd::Zero(2), eta);
    CHECK(res.v.coords.isApprox(eta, 1e-12));
  }

  SECTION("heisenberg vertical shift, residual and independent re-evaluation") {
    Eigen::VectorXd eta = vec3(0.0, 0.0, 0.01);
    LieElement zero(basis);
    auto res = psi(heis, zero, x0, eta);
    CHECK(res.residual <= 1e-10);

    // oracle: F_2(v, 0) assembled by hand from the exponential coefficients
    auto g = tensor_exp(to_tensor(res.v));
    Eigen::VectorXd F = vec3(g.coeff({1}), g.coeff({2}), g.coeff({1, 2}));
    CHECK((F - eta).norm() <= 1e-10);
  }

  SECTION("shift ratio stays bounded over two decades") {
    LieElement zero(basis);
    double worst = 0.0, best = 1e30;
    for (double mag : {1e-4, 3e-4, 1e-3, 3e-3, 1e-2}) {
      auto res = psi(heis, zero, x0, vec3(0.3 * mag, -0.2 * mag, 0.9 * mag));
      CHECK(res.residual <= 1e-10);
      worst = std::max(worst, res.shift_ratio);
      best = std::min(best, res.shift_ratio);
    }
    CHECK(worst < 50.0);
    CHECK(worst / best < 20.0);
  }

  SECTION("rank deficiency is detected") {
    auto sys = make_system("grushin-like");
    auto b1 = make_basis(2, 1);
    LieElement zero(b1);
    Eigen::VectorXd eta(2);
    eta << 0.0, 0.01;
    CHECK_THROWS_WITH(psi(sys, zero, Eigen::VectorXd::Zero(2), eta),
                      Catch::Matchers::ContainsSubstring("rank deficient"));
  }
}

TEST_CASE("join_points") {
  auto heis = make_system("heisenberg");
  auto basis = make_basis(2, 2);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);

  SECTION("coincident endpoints") {
    auto res = join_points(heis, x0, x0, basis, 0.7);
    CHECK(res.converged);
    CHECK(res.iterations == 0);
    CHECK(res.d_upper == 0.0);
    CHECK(res.control.one_variation() == 0.0);
  }

  SECTION("heisenberg horizontal target") {
    auto res = join_points(heis, x0, vec3(0.05, 0.0, 0.0), basis, 0.7);
    CHECK(res.converged);
    CHECK(res.iterations <= 3);
    CHECK(res.residuals.back() <= 1e-6);
    CHECK(res.endpoint_error <= 1e-6);
    CHECK(res.max_logsig_residual <= 1e-8);
    CHECK(res.norm_exact);
  }

  SECTION("heisenberg vertical target") {
    auto res = join_points(heis, x0, vec3(0.0, 0.0, 0.01), basis, 0.7);
    CHECK(res.converged);
    CHECK(res.endpoint_error <= 1e-6);
    CHECK(res.max_logsig_residual <= 1e-8);
    CHECK(res.d_upper > 0.0);
    if (res.iterations >= 2) CHECK(res.max_contraction_ratio <= 0.95);
    // the first interval is the dominant one and scales like sqrt(height)
    CHECK(res.interval_lengths.front() == Catch::Approx(4.0 * std::sqrt(0.01)).epsilon(0.05));
  }

  SECTION("elliptic identity linearity at H = 1/2") {
    auto sys = make_system("elliptic-identity", 2);
    auto b1 = make_basis(2, 1);
    Eigen::VectorXd origin = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd dir(2);
    dir << 0.6, -0.8;
    auto d1 = join_points(sys, origin, (0.01 * dir).eval(), b1, 0.5);
    auto d2 = join_points(sys, origin, (0.02 * dir).eval(), b1, 0.5);
    CHECK(d1.converged);
    CHECK(d2.converged);
    CHECK(d2.d_upper / d1.d_upper == Catch::Approx(2.0).epsilon(1e-3));
  }

  SECTION("geometric decay of the interval lengths") {
    // perturbed elliptic system so that several iterations are needed
    auto sys = make_user_system(2, 2, {{"1", "0.2*x2"}, {"0.1*x1", "1"}});
    auto b1 = make_basis(2, 1);
    Eigen::VectorXd origin = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd target(2);
    target << 0.08, -0.05;
    auto res = join_points(sys, origin, target, b1, 0.7);
    CHECK(res.converged);
    CHECK(res.iterations >= 2);
    for (std::size_t m = 1; m < res.interval_lengths.size(); ++m)
      CHECK(res.interval_lengths[m] < res.interval_lengths[m - 1]);
    CHECK(res.max_contraction_ratio <= 0.95);
  }

  SECTION("contraction monitor fires after repeated stalls") {
    // overshooting 1D system; a tightened ratio limit makes the monitor's
    // trip condition deterministic
    auto sys = make_user_system(1, 1, {{"1 + x1^2"}});
    auto b1 = make_basis(1, 1);
    Eigen::VectorXd origin = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd far(1);
    far << 0.8;
    JoinOptions opt;
    opt.contraction_limit = 0.005;
    opt.contraction_patience = 2;
    CHECK_THROWS_WITH(join_points(sys, origin, far, b1, 0.5, opt),
                      Catch::Matchers::ContainsSubstring("no contraction"));
  }

  SECTION("state blow-up far outside the locality radius propagates") {
    auto sys = make_user_system(1, 1, {{"1 + x1^2"}});
    auto b1 = make_basis(1, 1);
    Eigen::VectorXd origin = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd far(1);
    far << 3.0;
    CHECK_THROWS_AS(join_points(sys, origin, far, b1, 0.5), std::runtime_error);
  }
}

TEST_CASE("distance upper bound") {
  auto heis = make_system("heisenberg");
  auto basis = make_basis(2, 2);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);

  SECTION("rescaling consistency for H > 1/2") {
    auto est = distance_upper(heis, x0, vec3(0.0, 0.0, 0.02), basis, 0.7);
    const auto& join = est.join;
    // direct norm of the control squeezed onto [0, 1]
    GridPath unit = with_unit_time(join.control);
    Eigen::MatrixXd samples = unit.sample_uniform(1 << 11);
    for (int c = 0; c < samples.cols(); ++c) samples.col(c).array() -= samples(0, c);
    double direct = cm_norm(CMFunction::make(1.0, 0.7, std::move(samples))).value;
    CHECK(std::abs(est.value - direct) <= 1e-3 * direct);
  }

  SECTION("exactness flag follows the Hurst index") {
    auto est = distance_upper(heis, x0, vec3(0.01, 0.0, 0.0), basis, 0.45);
    CHECK_FALSE(est.exact);
    auto est2 = distance_upper(heis, x0, vec3(0.01, 0.0, 0.0), basis, 0.6);
    CHECK(est2.exact);
  }
}

TEST_CASE("elliptic join") {
  SECTION("identity fields give the straight line") {
    auto sys = make_system("elliptic-identity", 2);
    Eigen::VectorXd x(2), y(2);
    x << 0.2, -0.1;
    y << 0.5, 0.3;
    auto h = elliptic_join(sys, x, y, 0.5, 256);
    for (int i = 0; i <= 256; i += 32) {
      double t = static_cast<double>(i) / 256;
      CHECK((h.values.row(i).transpose() - t * (y - x)).norm() <= 1e-12);
    }
  }

  SECTION("redundant drive splits by the pseudoinverse") {
    auto sys = make_user_system(1, 2, {{"1"}, {"1"}});
    Eigen::VectorXd x(1), y(1);
    x << 0.0;
    y << 0.8;
    auto h = elliptic_join(sys, x, y, 0.5, 128);
    for (int i = 0; i <= 128; i += 16) {
      double t = static_cast<double>(i) / 128;
      CHECK(h.values(i, 0) == Catch::Approx(0.4 * t).margin(1e-12));
      CHECK(h.values(i, 1) == Catch::Approx(0.4 * t).margin(1e-12));
    }
  }

  SECTION("endpoint residual on a perturbed elliptic system") {
    auto sys = make_user_system(2, 2, {{"1 + 0.1*x2^2", "0.05*x1"}, {"0.1*x2", "1 - 0.05*x1"}});
    SplitMix64 rng(31);
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd x(2), y(2);
      x << 0.3 * rng.next_gaussian(), 0.3 * rng.next_gaussian();
      y = x + 0.3 * Eigen::VectorXd{{rng.next_gaussian(), rng.next_gaussian()}};
      auto h = elliptic_join(sys, x, y, 0.5, 1 << 11);
      FlowOptions opt;
      opt.steps_per_unit = 512.0;
      auto endpoint = flow(sys, x, cm_to_path(h), opt).endpoint;
      CHECK((endpoint - y).norm() <= 1e-8);
    }
  }

  SECTION("degeneracy on the segment is rejected") {
    auto sys = make_system("grushin-like");
    Eigen::VectorXd x(2), y(2);
    x << -0.5, 0.0;
    y << 0.5, 0.2;  // segment crosses x1 = 0 where V2 vanishes
    CHECK_THROWS_WITH(elliptic_join(sys, x, y, 0.5),
                      Catch::Matchers::ContainsSubstring("not elliptic"));
  }
}

TEST_CASE("distance scan") {
  SECTION("elliptic identity slope is one") {
    auto sys = make_system("elliptic-identity", 2);
    auto b1 = make_basis(2, 1);
    Eigen::VectorXd origin = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd dir(2);
    dir << 1.0, 0.4;
    auto scan = distance_scan(sys, origin, dir, {0.002, 0.01, 0.05}, b1, 0.5);
    CHECK(scan.converged_count == 3);
    CHECK(scan.slope == Catch::Approx(1.0).margin(0.02));
  }

  SECTION("heisenberg vertical slope is one half") {
    auto heis = make_system("heisenberg");
    auto basis = make_basis(2, 2);
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);
    auto scan = distance_scan(heis, x0, vec3(0, 0, 1), {0.001, 0.005, 0.02}, basis, 0.5);
    CHECK(scan.converged_count == 3);
    CHECK(scan.slope == Catch::Approx(0.5).margin(0.05));
  }
}
