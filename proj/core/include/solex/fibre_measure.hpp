#pragma once

#include <optional>
#include <string>
#include <vector>

namespace solex {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;
inline constexpr double kPi = 3.1415926535897932384626433832795;

/// One-dimensional fibre N of the cylinder R x N.
enum class FibreKind { Circle, Line, HalfLine, PiInterval };

/// Isometry group of the fibre, determined by its kind.
enum class FibreGroup {
  O2,       // Circle: rotations and reflections
  LineZ2,   // Line: translations and reflections
  Trivial,  // HalfLine: identity only
  Z2,       // (0,pi): identity and the flip y -> pi - y
};

struct Fibre {
  FibreKind kind = FibreKind::Circle;

  FibreGroup group() const;
  bool periodic() const { return kind == FibreKind::Circle; }
  /// Left/right ends of the coordinate range. Circle uses [0, 2pi).
  double left() const;
  double right() const;
  bool contains(double p) const;
  const char* name() const;
};

/// Normalize an angle into [0, 2pi).
double norm_angle(double theta);
/// Distance between two angles along the circle (<= pi).
double circle_dist(double a, double b);

/// Isometry of a fibre: p -> shift + (reflect ? -p : p), wrapped on the circle.
/// The flip of (0,pi) is {shift = pi, reflect = true}.
struct FibreIsometry {
  double shift = 0.0;
  bool reflect = false;

  double apply(double p, const Fibre& fibre) const;
  FibreIsometry inverse(const Fibre& fibre) const;
  FibreIsometry compose(const FibreIsometry& inner, const Fibre& fibre) const;
  bool is_identity(const Fibre& fibre) const;
  bool allowed_on(const Fibre& fibre) const;

  static FibreIsometry identity() { return {}; }
  static FibreIsometry rotation(double angle) { return {norm_angle(angle), false}; }
  static FibreIsometry translation(double c) { return {c, false}; }
  static FibreIsometry circle_reflection(double c) { return {norm_angle(c), true}; }
  static FibreIsometry line_reflection(double c) { return {c, true}; }
  static FibreIsometry pi_flip() { return {kPi, true}; }
};

struct Atom {
  double position = 0.0;
  double mass = 0.0;
};

/// A density step: `value` holds from `breakpoint` up to the next breakpoint
/// (wrapping around on the circle, extending to the fibre end otherwise).
/// On interval fibres the density is 0 left of the first breakpoint; on the
/// line the first breakpoint may be -inf.
struct DensityStep {
  double breakpoint = 0.0;
  double value = 0.0;
};

/// Half-open interval [a, b) of fibre coordinates. On the circle `a` need not
/// be normalized and b - a <= 2pi; b - a == 2pi denotes the full circle.
struct FibreInterval {
  double a = 0.0;
  double b = 0.0;
};

/// Radon measure on a fibre in finitely-presented form: finitely many atoms
/// plus a piecewise-constant density.
class FibreMeasure {
 public:
  FibreMeasure(Fibre fibre, std::vector<Atom> atoms, std::vector<DensityStep> steps);

  static FibreMeasure atom_measure(Fibre fibre, double position, double mass);
  static FibreMeasure constant_density(Fibre fibre, double value);

  const Fibre& fibre() const { return fibre_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<DensityStep>& steps() const { return steps_; }

  /// Density value at a point (atoms not included).
  double density_at(double p) const;
  /// Total mass of the fibre; may be +inf on Line/HalfLine.
  double total() const;
  bool has_atoms() const { return !atoms_.empty(); }
  /// True iff the density is a single constant over the whole fibre and there
  /// are no atoms.
  bool is_constant_density() const;
  /// The constant value when is_constant_density() holds.
  double constant_value() const;

 private:
  Fibre fibre_;
  std::vector<Atom> atoms_;        // sorted by position
  std::vector<DensityStep> steps_; // canonical: sorted, merged, no redundant zeros
};

/// Measure of a finite union of half-open intervals. Atoms use the [a, b)
/// convention. Throws std::invalid_argument on overlapping or reversed
/// intervals.
double nu_mass(const FibreMeasure& nu, const std::vector<FibreInterval>& intervals);

/// Pushforward by a fibre isometry: atoms transported, density precomposed
/// with the inverse. Throws if phi is not in the fibre's isometry group.
FibreMeasure nu_pushforward(const FibreMeasure& nu, const FibreIsometry& phi);

/// Scale every atom mass and density value by lambda > 0.
FibreMeasure nu_scale(const FibreMeasure& nu, double lambda);

struct MatchWitness {
  double lambda = 1.0;
  FibreIsometry phi;
};

/// Search for (lambda, phi) with phi_*(nu1) = lambda * nu2, comparing features
/// to relative tolerance `tol`. Candidates come from aligning features of nu1
/// with features of nu2 over both orientations (reflections skipped when
/// orientation_preserving_only is set).
std::optional<MatchWitness> nu_match(const FibreMeasure& nu1, const FibreMeasure& nu2,
                                     bool orientation_preserving_only = false,
                                     double tol = 1e-9);

/// True iff nu is invariant under the full isometry group of its fibre, i.e.
/// no atoms and constant density across the fibre.
bool nu_invariant_under_full_group(const FibreMeasure& nu);

/// Density-only mass of [a, b): atoms ignored. On the circle this is the arc
/// from a of length b - a (which may exceed one breakpoint span but not 2pi).
double nu_density_mass(const FibreMeasure& nu, double a, double b);

/// Uniform sampling grid on a fibre window. Circle grids are node-periodic
/// over [0, 2pi); interval grids place nodes on [lo, hi] inclusive.
struct FibreGrid {
  double lo = 0.0;
  double hi = kTwoPi;
  int n = 0;
  bool periodic = true;

  double spacing() const;
  double node(int i) const;
  static FibreGrid circle(int n) { return {0.0, kTwoPi, n, true}; }
  static FibreGrid interval(double lo, double hi, int n) { return {lo, hi, n, false}; }
};

struct SampledDensity {
  FibreGrid grid;
  std::vector<double> values;

  double total_mass() const;
};

/// Mollify the measure onto a fibre grid: exact cell deposit followed by
/// discrete convolution with a normalized smooth bump of radius h. Total mass
/// on the grid is preserved to round-off. Throws if h < grid spacing.
SampledDensity nu_mollify(const FibreMeasure& nu, double h, const FibreGrid& grid);

/// Serialize to the `atom <position> <mass>` / `step <breakpoint> <value>`
/// text block, shortest round-trip decimals.
std::string measure_to_text(const FibreMeasure& nu);
/// Parse the text block (lines as above; blank lines and '#' comments allowed).
FibreMeasure measure_from_text(Fibre fibre, const std::string& text);

/// Shortest round-trip decimal formatting of a double.
std::string format_double(double x);
/// 17-significant-digit formatting used by field snapshot files.
std::string format_double17(double x);

}  // namespace solex
