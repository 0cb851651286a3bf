#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "solex/expander.hpp"
#include "solex/geometry.hpp"

namespace solex {

/// Boundary condition for one grid edge. The flow is posed on a noncompact
/// surface; truncation edges carry the known end asymptotics.
enum class BcKind {
  ConeAsymptotic,   // Dirichlet u = scale * e^{alpha x} (conical end)
  CuspAsymptotic,   // local cusp family 2t/(x-x0)^2, anchored by linear
                    // extrapolation of 1/sqrt(u) from the interior
  CuspAnchored,     // Dirichlet u = 2t/(x - log(t)/alpha - scale)^2, the
                    // self-similar anchor (order-preserving across runs)
  SmoothOrigin,     // Neumann d_x log u = 2 (filled origin of the plane chart)
  HyperbolicWall,   // Dirichlet u = 2 t / sin^2(y) (strip walls)
  LogLinear,        // d_xx log u = 0 extrapolation (outflow for ridged ends)
};

struct BoundaryCondition {
  BcKind kind = BcKind::ConeAsymptotic;
  double scale = 1.0;  // ConeAsymptotic amplitude / CuspAnchored offset
};

struct StepControl {
  double dt0 = 1e-4;
  double dt_max = 0.02;
  double fixed_dt = 0.0;    // > 0: constant steps, no adaptation
  double newton_tol = 1e-10;
  int max_newton = 20;
  double krylov_tol = 1e-12;
  int max_halvings = 10;
};

/// The spatial problem: grid, vector-field parameters, and one boundary
/// condition per edge (bottom/top apply to non-periodic fibres only).
struct FlowProblem {
  CylGrid grid;
  double alpha = 1.0;
  BoundaryCondition left, right;
  BoundaryCondition bottom{BcKind::HyperbolicWall}, top{BcKind::HyperbolicWall};
  StepControl control;
  /// Flow clock minus intrinsic age: measure-initialized runs start at age 0
  /// with clock t0, so age = t - t0_offset.
  double age_offset = 0.0;

  double age(double t) const { return t - age_offset; }
};

struct StepStats {
  double t = 0.0;  // clock time after the step
  double dt = 0.0;
  int newton_iters = 0;
  double residual = 0.0;
  double total_mass = 0.0;
  double min_u = 0.0;
};

struct FlowTrajectory {
  std::vector<ConformalField> snapshots;  // initial state plus requested outputs
  std::vector<StepStats> steps;
};

/// Initial data from a measure expander: mollified density of mu on the grid
/// plus the positivity floor eta * t0, eta = 1e-3 * median positive density.
/// Twisted tags mollify the fibre measure and shear it exactly per x-slice.
ConformalField init_from_expander(const ProductExpander& e, const CylGrid& grid, double t0,
                                  double mollify_h);

/// One backward-Euler step u -> v solving v - u - dt Delta log v = 0 by damped
/// Newton with matrix-free BiCGSTAB inner solves. Boundary nodes follow the
/// configured conditions at the new time. Throws on Newton failure.
ConformalField step_implicit(const ConformalField& u, double dt, const FlowProblem& problem,
                             int* newton_iters = nullptr, double* final_residual = nullptr);

/// Integrate from the field's stamp up to t1 with adaptive steps, recording
/// snapshots at the requested output times (clock times).
FlowTrajectory run_flow(const FlowProblem& problem, ConformalField u0, double t1,
                        std::span<const double> output_times);

/// Trapezoidal mass of the whole grid window.
double grid_total_mass(const ConformalField& f);

/// Max relative deviation of u(x,th,t2) from (T2/T1) u(x - D, th - beta D, t1),
/// D = log(T2/T1)/alpha, T_i the intrinsic ages of the two snapshots; compared
/// on the interior core (10% x-margins). Grid-aligned shifts are applied
/// index-exactly, others by bilinear interpolation.
double check_self_similarity(const FlowTrajectory& traj, const FlowProblem& problem, double beta,
                             double t1, double t2, double margin = 0.1);

/// Fit v(age) = v0 + C age^p through the last three samples (geometric ages)
/// and return v0. Falls back to linear extrapolation for ill-posed fits.
double richardson_extrapolate(std::span<const double> ages, std::span<const double> values);

struct AttainmentRow {
  Box box;
  double closed_form = 0.0;
  double extrapolated = 0.0;
  double rel_gap = 0.0;
  std::vector<double> masses;  // one per rerun, finest last
};

struct AttainmentReport {
  std::vector<AttainmentRow> rows;
  std::vector<double> ages;
  double worst_rel_gap = 0.0;
};

/// Rerun the flow from a decreasing sequence of start times t0, evaluate box
/// masses at intrinsic age age_factor * t0, and Richardson-extrapolate to
/// age 0 against the expander's exact box masses.
AttainmentReport check_attainment(const FlowProblem& problem, const ProductExpander& e,
                                  double mollify_h, std::span<const Box> boxes,
                                  std::span<const double> t0_sequence, double age_factor = 1.0);

struct ComparisonReport {
  bool ordered = true;
  double max_violation = 0.0;  // max over nodes/times of u1 - u2
};

/// Check u1 <= u2 + tol at every shared snapshot time.
ComparisonReport check_comparison(const FlowTrajectory& t1, const FlowTrajectory& t2,
                                  double tol = 1e-8);

struct MonotoneReport {
  bool monotone = true;
  double max_violation = 0.0;  // max increase of u/age between snapshots
};

/// Check that u/age is pointwise nonincreasing across snapshots.
MonotoneReport check_u_over_t_monotone(const FlowTrajectory& traj, double age_offset = 0.0,
                                       double tol = 1e-8);

struct BallSample {
  double r = 0.0, R = 0.0, age = 0.0;
  double lhs = 0.0;  // mu(B_r)
  double rhs = 0.0;  // mu_{g(t)}(B_R) + 8 pi t / (1 - (r/R)^2)
};

struct AreaLawReport {
  double fitted_slope = 0.0;  // expected -4 pi
  double slope_rel_err = 0.0;
  double total_mass_t0 = 0.0;
  bool ball_inequality_ok = true;
  std::vector<BallSample> samples;
};

/// Plane run from a truncated finite measure: fit the slope of total area
/// against intrinsic age (cusp-tail and origin-tail corrected) and check the
/// lower volume bound mu(B_r) <= mu_{g(t)}(B_R) + 8 pi t/(1 - (r/R)^2).
AreaLawReport check_area_law_and_ball_inequality(
    const FlowTrajectory& traj, const FlowProblem& problem,
    const std::function<double(double)>& ball_mass, std::span<const double> radii,
    std::span<const double> radius_ratios);

/// Relative defect of the discrete mass-flux identity for one accepted step:
/// the interior mass change must equal dt times the boundary flux of
/// grad log u through the truncation edges.
double step_mass_flux_defect(const ConformalField& before, const ConformalField& after, double dt);

}  // namespace solex
