#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "solex/flow.hpp"

using namespace solex;

namespace {

const Fibre kCircle{FibreKind::Circle};

ConformalField strip_exact(const CylGrid& g, double t) {
  ConformalField f{g, std::vector<double>(g.size()), t};
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j) {
      double s = std::sin(g.y(j));
      f.at(i, j) = 2.0 * t / (s * s);
    }
  return f;
}

FlowProblem strip_problem(const CylGrid& g) {
  FlowProblem p;
  p.grid = g;
  p.alpha = 1.0;
  p.left = {BcKind::HyperbolicWall, 1.0};
  p.right = {BcKind::HyperbolicWall, 1.0};
  p.bottom = {BcKind::HyperbolicWall, 1.0};
  p.top = {BcKind::HyperbolicWall, 1.0};
  return p;
}

ConformalField gaussian_exact(const CylGrid& g, double t) {
  ConformalField f{g, std::vector<double>(g.size()), t};
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j) f.at(i, j) = std::exp(2.0 * g.x(i));
  return f;
}

FlowProblem gaussian_problem(const CylGrid& g) {
  FlowProblem p;
  p.grid = g;
  p.alpha = 2.0;
  p.left = {BcKind::SmoothOrigin, 1.0};
  p.right = {BcKind::ConeAsymptotic, 1.0};
  return p;
}

double max_rel_err(const ConformalField& a, const ConformalField& b) {
  double m = 0.0;
  for (size_t k = 0; k < a.u.size(); ++k)
    m = std::max(m, std::fabs(a.u[k] - b.u[k]) / std::fabs(b.u[k]));
  return m;
}

}  // namespace

TEST_CASE("step_implicit: dt = 0 is the identity") {
  auto g = CylGrid::strip(-1.0, 1.0, 8, 0.5, kPi - 0.5, 16);
  auto u = strip_exact(g, 0.3);
  auto p = strip_problem(g);
  auto v = step_implicit(u, 0.0, p);
  CHECK(v.t == u.t);
  for (size_t k = 0; k < u.u.size(); ++k) CHECK(v.u[k] == u.u[k]);
}

TEST_CASE("step_implicit: hyperbolic strip is advanced to O(h^2)") {
  auto g = CylGrid::strip(-1.0, 1.0, 16, 0.5, kPi - 0.5, 64);
  auto p = strip_problem(g);
  double t = 0.3, dt = 0.05;
  auto u = strip_exact(g, t);
  int iters = 0;
  auto v = step_implicit(u, dt, p, &iters);
  CHECK(iters >= 1);
  auto exact = strip_exact(g, t + dt);
  // Backward Euler is exact in time for u linear in t; only the O(h^2)
  // discrete-laplacian defect remains, entering through dt * tau.
  double h = g.hy();
  CHECK(max_rel_err(v, exact) < 2.0 * h * h);
}

TEST_CASE("step_implicit: Gaussian cone data is stationary") {
  auto g = CylGrid::cylinder(-6.0, 2.0, 64, 1);
  auto p = gaussian_problem(g);
  auto u = gaussian_exact(g, 0.5);
  auto v = step_implicit(u, 0.05, p);
  CHECK(max_rel_err(v, gaussian_exact(g, 0.55)) < 1e-10);
}

TEST_CASE("step_implicit: positivity and mass-flux identity") {
  auto g = CylGrid::strip(-1.0, 1.0, 16, 0.5, kPi - 0.5, 32);
  auto p = strip_problem(g);
  auto u = strip_exact(g, 0.2);
  auto v = step_implicit(u, 0.04, p);
  for (double x : v.u) CHECK(x > 0.0);
  CHECK(step_mass_flux_defect(u, v, 0.04) < 1e-3);
}

TEST_CASE("run_flow: hyperbolic strip against the exact solution") {
  auto g = CylGrid::strip(-1.0, 1.0, 32, 0.5, kPi - 0.5, 48);
  auto p = strip_problem(g);
  p.control.dt0 = 0.01;
  p.control.dt_max = 0.05;
  std::vector<double> outs{0.5, 1.0};
  auto traj = run_flow(p, strip_exact(g, 0.1), 1.0, outs);
  REQUIRE(traj.snapshots.size() == 3);
  double err = max_rel_err(traj.snapshots.back(), strip_exact(g, 1.0));
  CHECK(err < 5e-3);
  // u/t is constant for this solution up to the discrete profile drift.
  auto mono = check_u_over_t_monotone(traj, 0.0, 1e-8);
  CHECK(mono.max_violation < 5e-3);
}

TEST_CASE("run_flow: Gaussian stays put and is self-similar") {
  auto g = CylGrid::cylinder(-6.0, 2.0, 96, 1);
  auto p = gaussian_problem(g);
  p.control.dt0 = 0.01;
  p.control.dt_max = 0.05;
  // pick t2/t1 = exp(2 k hx) so the similarity shift is grid-aligned
  double t1 = 0.5;
  double t2 = t1 * std::exp(2.0 * 6.0 * g.hx());
  std::vector<double> outs{t1, t2};
  auto traj = run_flow(p, gaussian_exact(g, 0.1), t2, outs);
  double err = max_rel_err(traj.snapshots.back(), gaussian_exact(g, t2));
  CHECK(err < 1e-9);
  double dev = check_self_similarity(traj, p, 0.0, t1, t2);
  CHECK(dev < 1e-10);
  // u/age strictly decreasing for the static profile
  auto mono = check_u_over_t_monotone(traj);
  CHECK(mono.monotone);
}

TEST_CASE("init_from_expander: rotationally symmetric cusp-cone datum") {
  auto e = make_expander(FamilyTag::Bii, 1.0, 0.0, FibreMeasure::constant_density(kCircle, 1.0));
  auto g = CylGrid::cylinder(-8.0, 2.0, 64, 1);
  double t0 = 0.1;
  auto f = init_from_expander(e, g, t0, kTwoPi);
  // u0 = e^x + eta t0 with eta = 1e-3 * median(e^{x_i})
  std::vector<double> dens;
  for (int i = 0; i < g.nx; ++i) dens.push_back(std::exp(g.x(i)));
  auto mid = dens.begin() + dens.size() / 2;
  std::nth_element(dens.begin(), mid, dens.end());
  double eta = 1e-3 * *mid;
  for (int i = 0; i < g.nx; ++i)
    CHECK(f.at(i, 0) == doctest::Approx(std::exp(g.x(i)) + eta * t0).epsilon(1e-12));
}

TEST_CASE("init_from_expander: atomic fibre measure carries the slab mass") {
  auto e = make_expander(FamilyTag::Bii, 1.0, 0.0,
                         FibreMeasure::atom_measure(kCircle, 2.0, 1.5));
  auto g = CylGrid::cylinder(-2.0, 2.0, 32, 128);
  double t0 = 0.05, h = 0.3;
  auto f = init_from_expander(e, g, t0, h);
  // Each x-slice integrates to e^{alpha x} * nu(S^1) plus the small floor.
  for (int i : {3, 16, 28}) {
    double slice = 0.0;
    for (int j = 0; j < g.ny; ++j) slice += f.at(i, j) * g.hy();
    double expected = std::exp(g.x(i)) * 1.5;
    CHECK(slice > expected);
    CHECK(std::fabs(slice - expected) / expected < 0.05);
  }
  // Compare against the exact box mass over a thin slab (deposit oracle).
  Box slab = Box::full_fibre(g.x(16) - 0.5 * g.hx(), g.x(16) + 0.5 * g.hx(), kCircle);
  double exact = box_mass(e, slab);
  double grid_mass = 0.0;
  for (int j = 0; j < g.ny; ++j) grid_mass += f.at(16, j) * g.hy() * g.hx();
  CHECK(grid_mass == doctest::Approx(exact).epsilon(5e-3));
}

TEST_CASE("init_from_expander: twisted shear places the ridge on the spiral") {
  auto e = make_expander(FamilyTag::Biii, 1.0, 1.0,
                         FibreMeasure::atom_measure(kCircle, kPi, 1.0));
  auto g = CylGrid::cylinder(-2.0, 2.0, 48, 96);
  auto f = init_from_expander(e, g, 0.05, 0.3);
  for (int i : {5, 20, 40}) {
    // the densest node of each slice sits near theta = pi + beta x
    int best = 0;
    for (int j = 1; j < g.ny; ++j)
      if (f.at(i, j) > f.at(i, best)) best = j;
    double expect = norm_angle(kPi + 1.0 * g.x(i));
    CHECK(circle_dist(g.y(best), expect) < 2.5 * g.hy());
  }
}

TEST_CASE("comparison: ordered measures give ordered flows") {
  auto g = CylGrid::cylinder(-10.0, 3.0, 64, 1);
  auto nu2 = FibreMeasure::constant_density(kCircle, 1.0);
  auto nu1 = FibreMeasure::constant_density(kCircle, 0.5);
  auto e2 = make_expander(FamilyTag::Bii, 1.0, 0.0, nu2);
  auto e1 = make_expander(FamilyTag::Bii, 1.0, 0.0, nu1);

  FlowProblem p;
  p.grid = g;
  p.alpha = 1.0;
  p.left = {BcKind::CuspAnchored, 0.0};
  p.right = {BcKind::ConeAsymptotic, 1.0};
  p.control.fixed_dt = 0.01;
  p.age_offset = 0.0;  // clock = age for this test
  double t0 = 0.1;

  FlowProblem p1 = p;
  p1.right.scale = 0.5;

  std::vector<double> outs{0.3, 0.6};
  auto u2 = init_from_expander(e2, g, t0, kTwoPi);
  auto u1 = init_from_expander(e1, g, t0, kTwoPi);
  // measure-initialized: intrinsic age starts at zero
  p.age_offset = p1.age_offset = t0;
  auto traj2 = run_flow(p, std::move(u2), 0.6, outs);
  auto traj1 = run_flow(p1, std::move(u1), 0.6, outs);

  auto rep = check_comparison(traj1, traj2);
  CHECK(rep.ordered);
  // Swapped order must fail decisively.
  auto swapped = check_comparison(traj2, traj1);
  CHECK_FALSE(swapped.ordered);
  CHECK(swapped.max_violation > 1e-3);
}

TEST_CASE("richardson extrapolation recovers power-law limits") {
  std::vector<double> ages{0.025, 0.05, 0.1};
  std::vector<double> vals;
  for (double a : ages) vals.push_back(3.0 + 2.0 * std::pow(a, 1.3));
  CHECK(richardson_extrapolate(ages, vals) == doctest::Approx(3.0).epsilon(1e-10));
  // two points: linear fallback
  std::vector<double> a2{0.05, 0.1}, v2{3.1, 3.2};
  CHECK(richardson_extrapolate(a2, v2) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("self-similarity rejects bad requests") {
  auto g = CylGrid::cylinder(-2.0, 2.0, 16, 1);
  auto p = gaussian_problem(g);
  auto traj = run_flow(p, gaussian_exact(g, 0.5), 0.6, std::vector<double>{0.55, 0.6});
  CHECK_THROWS_AS(check_self_similarity(traj, p, 0.0, 0.55, 0.551), std::invalid_argument);
  CHECK_THROWS_AS(check_self_similarity(traj, p, 0.0, 0.01, 10.0), std::invalid_argument);
}
