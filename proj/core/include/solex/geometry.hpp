#pragma once

#include <string>
#include <vector>

#include "solex/expander.hpp"
#include "solex/fibre_measure.hpp"

namespace solex {

/// Uniform finite-difference grid on a truncated cylinder [x_min,x_max] x N.
/// The fibre direction is either the periodic circle (theta nodes j*2pi/ny)
/// or an interval window with nodes on both ends. ny == 1 is the
/// axisymmetric mode: one fibre node, all theta-derivatives vanish.
struct CylGrid {
  int nx = 0;
  int ny = 0;
  double x_min = 0.0, x_max = 0.0;
  double y_min = 0.0, y_max = kTwoPi;
  bool periodic_y = true;

  static CylGrid cylinder(double x_min, double x_max, int nx, int ntheta);
  static CylGrid strip(double x_min, double x_max, int nx, double y_min, double y_max, int ny);

  double hx() const { return (x_max - x_min) / (nx - 1); }
  double hy() const {
    if (ny == 1) return y_max - y_min;
    return periodic_y ? (y_max - y_min) / ny : (y_max - y_min) / (ny - 1);
  }
  double x(int i) const { return x_min + i * hx(); }
  double y(int j) const { return y_min + j * hy(); }
  size_t index(int i, int j) const { return static_cast<size_t>(i) * ny + j; }
  size_t size() const { return static_cast<size_t>(nx) * ny; }
  void validate() const;
  bool same_layout(const CylGrid& other) const;
};

/// Conformal factor u > 0 of g = u (dx^2 + dtheta^2) sampled on a grid,
/// stamped with the flow time.
struct ConformalField {
  CylGrid grid;
  std::vector<double> u;
  double t = 0.0;

  double at(int i, int j) const { return u[grid.index(i, j)]; }
  double& at(int i, int j) { return u[grid.index(i, j)]; }
  void check_positive() const;
};

/// 5-point second-order Delta log u; periodic wrap in theta, one-sided
/// second-order stencils at non-periodic edges. Throws on nonpositive u.
std::vector<double> laplacian_log(const ConformalField& f);

/// Gauss curvature K = -(Delta log u) / (2u).
std::vector<double> gauss_curvature(const ConformalField& f);

/// Pointwise expanding-soliton residual 2 K u - X(u) + u for
/// X = (1/alpha) d_x + (beta/alpha) d_theta. With zero_field set the vector
/// field is dropped (trivial-soliton diagnostic r = 2 K u + u).
std::vector<double> soliton_residual(const ConformalField& f, double alpha, double beta,
                                     bool zero_field = false);

/// Trapezoidal integral of u over the box (second order, partial cells by
/// linear interpolation, exactly additive over disjoint boxes). The box must
/// lie inside the grid.
double metric_box_mass(const ConformalField& f, const Box& box);

/// Snapshot CSV: header `x,theta,u`, row-major x-then-theta, 17 significant
/// digits.
std::string field_to_csv(const ConformalField& f);
ConformalField field_from_csv(const std::string& text, double t = 0.0);

}  // namespace solex
