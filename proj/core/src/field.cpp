#include "solex/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace solex {

CylGrid CylGrid::cylinder(double x_min, double x_max, int nx, int ntheta) {
  CylGrid g{nx, ntheta, x_min, x_max, 0.0, kTwoPi, true};
  g.validate();
  return g;
}

CylGrid CylGrid::strip(double x_min, double x_max, int nx, double y_min, double y_max, int ny) {
  CylGrid g{nx, ny, x_min, x_max, y_min, y_max, false};
  g.validate();
  return g;
}

void CylGrid::validate() const {
  if (nx < 8) throw std::invalid_argument("grid needs nx >= 8");
  // ny == 1 is the axisymmetric mode for rotationally symmetric runs.
  if (ny != 1 && ny < 8) throw std::invalid_argument("grid needs ntheta >= 8 (or 1)");
  if (!(x_max > x_min)) throw std::invalid_argument("empty x-range");
  if (!(y_max > y_min)) throw std::invalid_argument("empty fibre range");
  if (!periodic_y && ny == 1) throw std::invalid_argument("interval fibre needs ny >= 8");
  if (!(hx() > 0.0) || !(hy() > 0.0)) throw std::invalid_argument("nonpositive spacing");
}

bool CylGrid::same_layout(const CylGrid& o) const {
  return nx == o.nx && ny == o.ny && x_min == o.x_min && x_max == o.x_max && y_min == o.y_min &&
         y_max == o.y_max && periodic_y == o.periodic_y;
}

void ConformalField::check_positive() const {
  for (double v : u) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::runtime_error("conformal factor must be positive");
  }
}

namespace {

// Second-order one-sided second derivative: (2 f0 - 5 f1 + 4 f2 - f3) / h^2.
inline double one_sided_dd(double f0, double f1, double f2, double f3, double h2) {
  return (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / h2;
}

// Second-order one-sided first derivative: (-3 f0 + 4 f1 - f2) / (2h).
inline double one_sided_d(double f0, double f1, double f2, double h) {
  return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
}

}  // namespace

std::vector<double> laplacian_log(const ConformalField& f) {
  f.check_positive();
  const CylGrid& g = f.grid;
  const int nx = g.nx, ny = g.ny;
  const double hx2 = g.hx() * g.hx();
  const double hy2 = g.hy() * g.hy();

  std::vector<double> w(g.size());
  for (size_t k = 0; k < g.size(); ++k) w[k] = std::log(f.u[k]);

  std::vector<double> out(g.size(), 0.0);
  auto W = [&](int i, int j) { return w[g.index(i, j)]; };

  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      double dxx;
      if (i == 0) {
        dxx = one_sided_dd(W(0, j), W(1, j), W(2, j), W(3, j), hx2);
      } else if (i == nx - 1) {
        dxx = one_sided_dd(W(nx - 1, j), W(nx - 2, j), W(nx - 3, j), W(nx - 4, j), hx2);
      } else {
        dxx = (W(i + 1, j) - 2.0 * W(i, j) + W(i - 1, j)) / hx2;
      }
      double dyy = 0.0;
      if (ny > 1) {
        if (g.periodic_y) {
          int jp = (j + 1) % ny, jm = (j + ny - 1) % ny;
          dyy = (W(i, jp) - 2.0 * W(i, j) + W(i, jm)) / hy2;
        } else if (j == 0) {
          dyy = one_sided_dd(W(i, 0), W(i, 1), W(i, 2), W(i, 3), hy2);
        } else if (j == ny - 1) {
          dyy = one_sided_dd(W(i, ny - 1), W(i, ny - 2), W(i, ny - 3), W(i, ny - 4), hy2);
        } else {
          dyy = (W(i, j + 1) - 2.0 * W(i, j) + W(i, j - 1)) / hy2;
        }
      }
      out[g.index(i, j)] = dxx + dyy;
    }
  }
  return out;
}

std::vector<double> gauss_curvature(const ConformalField& f) {
  auto lap = laplacian_log(f);
  for (size_t k = 0; k < lap.size(); ++k) lap[k] = -lap[k] / (2.0 * f.u[k]);
  return lap;
}

std::vector<double> soliton_residual(const ConformalField& f, double alpha, double beta,
                                     bool zero_field) {
  f.check_positive();
  const CylGrid& g = f.grid;
  const int nx = g.nx, ny = g.ny;
  auto lap = laplacian_log(f);  // 2 K u = -Delta log u

  std::vector<double> r(g.size());
  auto U = [&](int i, int j) { return f.u[g.index(i, j)]; };

  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      double xu = 0.0;
      if (!zero_field) {
        double ux;
        if (i == 0) {
          ux = one_sided_d(U(0, j), U(1, j), U(2, j), g.hx());
        } else if (i == nx - 1) {
          ux = -one_sided_d(U(nx - 1, j), U(nx - 2, j), U(nx - 3, j), g.hx());
        } else {
          ux = (U(i + 1, j) - U(i - 1, j)) / (2.0 * g.hx());
        }
        double ut = 0.0;
        if (beta != 0.0 && ny > 1) {
          if (g.periodic_y) {
            int jp = (j + 1) % ny, jm = (j + ny - 1) % ny;
            ut = (U(i, jp) - U(i, jm)) / (2.0 * g.hy());
          } else if (j == 0) {
            ut = one_sided_d(U(i, 0), U(i, 1), U(i, 2), g.hy());
          } else if (j == ny - 1) {
            ut = -one_sided_d(U(i, ny - 1), U(i, ny - 2), U(i, ny - 3), g.hy());
          } else {
            ut = (U(i, j + 1) - U(i, j - 1)) / (2.0 * g.hy());
          }
        }
        xu = ux / alpha + beta / alpha * ut;
      }
      size_t k = g.index(i, j);
      r[k] = -lap[k] - xu + f.u[k];
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// metric_box_mass
// ---------------------------------------------------------------------------

namespace {

// Weights of the piecewise-linear interpolant's exact integral over [a, b],
// for nodes x_k = x0 + k h, k in [0, n). Accumulates into w.
void accumulate_line_weights(std::vector<double>& w, double x0, double h, int n, double a,
                             double b) {
  if (b <= a) return;
  auto node_coord = [&](double p) { return (p - x0) / h; };
  double sa = node_coord(a), sb = node_coord(b);
  const double eps = 1e-12;
  if (sa < -eps || sb > n - 1 + eps)
    throw std::invalid_argument("box outside grid");
  sa = std::clamp(sa, 0.0, double(n - 1));
  sb = std::clamp(sb, 0.0, double(n - 1));
  int ka = static_cast<int>(std::floor(sa));
  int kb = static_cast<int>(std::ceil(sb)) - 1;
  for (int k = std::max(0, ka); k <= std::min(n - 2, kb); ++k) {
    // Portion of [a,b] inside cell [k, k+1] in node units.
    double lo = std::max(sa, double(k)), hi = std::min(sb, double(k + 1));
    if (hi <= lo) continue;
    double u0 = lo - k, u1 = hi - k;  // in [0,1]
    // integral of linear interpolant f(k)+(f(k+1)-f(k)) s over s in [u0,u1], times h
    double len = u1 - u0;
    double mid = 0.5 * (u0 + u1);
    w[static_cast<size_t>(k)] += h * len * (1.0 - mid);
    w[static_cast<size_t>(k) + 1] += h * len * mid;
  }
}

// Fibre-direction weights for a union of intervals.
std::vector<double> fibre_weights(const CylGrid& g, const std::vector<FibreInterval>& set) {
  std::vector<double> w(static_cast<size_t>(g.ny), 0.0);
  if (g.ny == 1) {
    double len = 0.0;
    for (const auto& iv : set) len += iv.b - iv.a;
    w[0] = std::min(len, g.y_max - g.y_min);
    return w;
  }
  if (!g.periodic_y) {
    for (const auto& iv : set) accumulate_line_weights(w, g.y_min, g.hy(), g.ny, iv.a, iv.b);
    return w;
  }
  // Periodic: integrate with a virtual wrap node, folding its weight to j=0.
  std::vector<double> wp(static_cast<size_t>(g.ny) + 1, 0.0);
  for (const auto& iv : set) {
    double len = iv.b - iv.a;
    if (len <= 0.0) continue;
    len = std::min(len, kTwoPi);
    double a = norm_angle(iv.a);
    double b = a + len;
    if (b <= kTwoPi + 1e-15) {
      accumulate_line_weights(wp, 0.0, g.hy(), g.ny + 1, a, std::min(b, kTwoPi));
    } else {
      accumulate_line_weights(wp, 0.0, g.hy(), g.ny + 1, a, kTwoPi);
      accumulate_line_weights(wp, 0.0, g.hy(), g.ny + 1, 0.0, b - kTwoPi);
    }
  }
  for (int j = 0; j < g.ny; ++j) w[static_cast<size_t>(j)] = wp[static_cast<size_t>(j)];
  w[0] += wp[static_cast<size_t>(g.ny)];
  return w;
}

}  // namespace

double metric_box_mass(const ConformalField& f, const Box& box) {
  const CylGrid& g = f.grid;
  if (std::isnan(box.x_lo) || box.x_hi < box.x_lo)
    throw std::invalid_argument("invalid box x-interval");
  double a = box.x_lo, b = box.x_hi;
  if (a == -std::numeric_limits<double>::infinity()) a = g.x_min;  // truncated plane chart
  if (b <= a) return 0.0;

  std::vector<double> wx(static_cast<size_t>(g.nx), 0.0);
  accumulate_line_weights(wx, g.x_min, g.hx(), g.nx, a, b);
  std::vector<double> wy = fibre_weights(g, box.fibre_set);

  double mass = 0.0;
  for (int i = 0; i < g.nx; ++i) {
    if (wx[static_cast<size_t>(i)] == 0.0) continue;
    double row = 0.0;
    for (int j = 0; j < g.ny; ++j) {
      double wj = wy[static_cast<size_t>(j)];
      if (wj != 0.0) row += wj * f.at(i, j);
    }
    mass += wx[static_cast<size_t>(i)] * row;
  }
  return mass;
}

// ---------------------------------------------------------------------------
// CSV io
// ---------------------------------------------------------------------------

std::string field_to_csv(const ConformalField& f) {
  std::string out = "x,theta,u\n";
  const CylGrid& g = f.grid;
  for (int i = 0; i < g.nx; ++i) {
    for (int j = 0; j < g.ny; ++j) {
      out += format_double17(g.x(i));
      out += ',';
      out += format_double17(g.y(j));
      out += ',';
      out += format_double17(f.at(i, j));
      out += '\n';
    }
  }
  return out;
}

ConformalField field_from_csv(const std::string& text, double t) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,theta,u", 0) != 0)
    throw std::invalid_argument("bad field csv header");
  std::vector<double> xs, ys, us;
  std::set<double> xset, yset;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double x, y, u;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &x, &y, &u) != 3)
      throw std::invalid_argument("bad field csv row: " + line);
    xs.push_back(x);
    ys.push_back(y);
    us.push_back(u);
    xset.insert(x);
    yset.insert(y);
  }
  const int nx = static_cast<int>(xset.size());
  const int ny = static_cast<int>(yset.size());
  if (nx < 2 || ny < 1 || us.size() != static_cast<size_t>(nx) * ny)
    throw std::invalid_argument("field csv is not a full grid");
  double x_min = *xset.begin(), x_max = *xset.rbegin();
  double y_min = *yset.begin(), y_max = *yset.rbegin();
  // A periodic grid writes theta = j * 2pi/ny, so max + spacing returns to 2pi.
  double hy_est = ny > 1 ? (y_max - y_min) / (ny - 1) : kTwoPi;
  bool periodic = ny == 1 || std::fabs(y_max + hy_est - y_min - kTwoPi) < 1e-9;

  CylGrid g;
  if (periodic) {
    g = CylGrid{nx, ny, x_min, x_max, 0.0, kTwoPi, true};
  } else {
    g = CylGrid{nx, ny, x_min, x_max, y_min, y_max, false};
  }
  ConformalField f{g, std::vector<double>(g.size(), 0.0), t};
  for (size_t k = 0; k < us.size(); ++k) {
    // rows were written x-major
    f.u[k] = us[k];
  }
  return f;
}

}  // namespace solex
