#pragma once

#include <array>
#include <string>
#include <vector>

#include "solex/expander.hpp"

namespace solex {

/// Requested left-end behaviour of a radial soliton profile.
enum class LeftEnd {
  Cusp,          // u x^2 -> 2 as x -> -inf (hyperbolic cusp, curvature -1/2)
  SmoothOrigin,  // u e^{-2x} -> const > 0 (vertex filled in the plane chart)
};

/// Reduced soliton equation for rotationally symmetric profiles u = u(x) with
/// X = (1/alpha) d_x: (log u)'' = u - u'/alpha, as the first-order system
/// w' = p, p' = e^w (1 - p/alpha), w = log u.
struct OdeRhs {
  double alpha = 1.0;
  std::array<double, 2> operator()(const std::array<double, 2>& y) const {
    return {y[1], std::exp(y[0]) * (1.0 - y[1] / alpha)};
  }
};

OdeRhs ode_rhs(double alpha);

struct ShootOptions {
  double x_left = -40.0;    // matching end of the backward integration
  double x_out_right = 20.0; // profile extension via the forward (stable) leg
  double h_out = 0.01;      // uniform output spacing
  double ode_tol = 1e-8;    // integrator relative tolerance
  int max_bisect = 1500;
};

struct SolitonProfile {
  double alpha = 1.0;
  LeftEnd left_end = LeftEnd::Cusp;
  std::vector<double> x;  // uniform samples
  std::vector<double> u;
  std::vector<double> f;    // soliton potential, f' = u/alpha, f(0) = 0
  double c_minus = 0.0;     // cusp coefficient fit of u x^2 / 2 (Cusp only)
  double c_plus = 1.0;      // cone coefficient fit of u e^{-alpha x}
  bool smooth_origin = false;
  double cone_anchor_x = 0.0;  // where the shooting anchored the cone ansatz

  double value_at(double xq) const;  // linear interpolation
};

/// Shooting solve: anchor u = e^{alpha x} at a moderate cone coordinate,
/// bisect the derivative offset until the backward leg matches the requested
/// left asymptote, then extend forward. Normalized to c_plus = 1 so the
/// profile corresponds to the measure e^{alpha x} dx (x) dtheta.
/// Throws std::runtime_error when no bracket exists.
SolitonProfile shoot(double alpha, LeftEnd left_end, ShootOptions opts = {});

struct CatalogEntry {
  int item = 0;
  FamilyTag family = FamilyTag::Bii;
  LeftEnd left_end = LeftEnd::Cusp;
  std::vector<double> sample_alphas;
  std::string description;
};

/// The three gradient families, with sampled alpha values whose radial
/// profiles come from shoot().
std::vector<CatalogEntry> catalog();

/// Profile CSV: comment header `# alpha=.. c_minus=.. c_plus=..` then x,u,f.
std::string profile_to_csv(const SolitonProfile& p);
SolitonProfile profile_from_csv(const std::string& text);

}  // namespace solex
