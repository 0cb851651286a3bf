#include "solex/fibre_measure.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace solex {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

FibreGroup Fibre::group() const {
  switch (kind) {
    case FibreKind::Circle: return FibreGroup::O2;
    case FibreKind::Line: return FibreGroup::LineZ2;
    case FibreKind::HalfLine: return FibreGroup::Trivial;
    case FibreKind::PiInterval: return FibreGroup::Z2;
  }
  return FibreGroup::Trivial;
}

double Fibre::left() const {
  switch (kind) {
    case FibreKind::Circle: return 0.0;
    case FibreKind::Line: return -kInf;
    case FibreKind::HalfLine: return 0.0;
    case FibreKind::PiInterval: return 0.0;
  }
  return 0.0;
}

double Fibre::right() const {
  switch (kind) {
    case FibreKind::Circle: return kTwoPi;
    case FibreKind::Line: return kInf;
    case FibreKind::HalfLine: return kInf;
    case FibreKind::PiInterval: return kPi;
  }
  return 0.0;
}

bool Fibre::contains(double p) const {
  if (!std::isfinite(p)) return false;
  switch (kind) {
    case FibreKind::Circle: return true;  // normalized on use
    case FibreKind::Line: return true;
    case FibreKind::HalfLine: return p > 0.0;
    case FibreKind::PiInterval: return p > 0.0 && p < kPi;
  }
  return false;
}

const char* Fibre::name() const {
  switch (kind) {
    case FibreKind::Circle: return "circle";
    case FibreKind::Line: return "line";
    case FibreKind::HalfLine: return "halfline";
    case FibreKind::PiInterval: return "piinterval";
  }
  return "?";
}

double norm_angle(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  if (t >= kTwoPi) t = 0.0;
  return t;
}

double circle_dist(double a, double b) {
  double d = std::fabs(norm_angle(a) - norm_angle(b));
  return std::min(d, kTwoPi - d);
}

double FibreIsometry::apply(double p, const Fibre& fibre) const {
  double q = shift + (reflect ? -p : p);
  if (fibre.periodic()) q = norm_angle(q);
  return q;
}

FibreIsometry FibreIsometry::inverse(const Fibre& fibre) const {
  if (reflect) return *this;  // reflections are involutions
  FibreIsometry inv{-shift, false};
  if (fibre.periodic()) inv.shift = norm_angle(inv.shift);
  return inv;
}

FibreIsometry FibreIsometry::compose(const FibreIsometry& inner, const Fibre& fibre) const {
  // (this o inner)(p) = shift + s*(inner.shift + s_i*p)
  FibreIsometry out;
  out.shift = shift + (reflect ? -inner.shift : inner.shift);
  out.reflect = (reflect != inner.reflect);
  if (fibre.periodic()) out.shift = norm_angle(out.shift);
  return out;
}

bool FibreIsometry::is_identity(const Fibre& fibre) const {
  if (reflect) return false;
  if (fibre.periodic()) return norm_angle(shift) == 0.0 || circle_dist(shift, 0.0) == 0.0;
  return shift == 0.0;
}

bool FibreIsometry::allowed_on(const Fibre& fibre) const {
  switch (fibre.group()) {
    case FibreGroup::O2:
    case FibreGroup::LineZ2:
      return true;
    case FibreGroup::Trivial:
      return !reflect && shift == 0.0;
    case FibreGroup::Z2:
      return (!reflect && shift == 0.0) || (reflect && shift == kPi);
  }
  return false;
}

// ---------------------------------------------------------------------------
// FibreMeasure construction and canonical form
// ---------------------------------------------------------------------------

namespace {

// Explicit density piece [s, e) with constant value v.
struct Piece {
  double s, e, v;
};

// Materialize the step list of an interval fibre as pieces tiling
// [fibre.left, fibre.right], including implicit zeros.
std::vector<Piece> interval_pieces(const Fibre& fibre, const std::vector<DensityStep>& steps) {
  std::vector<Piece> out;
  const double L = fibre.left();
  const double R = fibre.right();
  if (steps.empty()) {
    out.push_back({L, R, 0.0});
    return out;
  }
  if (steps.front().breakpoint > L) out.push_back({L, steps.front().breakpoint, 0.0});
  for (size_t i = 0; i < steps.size(); ++i) {
    double e = (i + 1 < steps.size()) ? steps[i + 1].breakpoint : R;
    out.push_back({steps[i].breakpoint, e, steps[i].value});
  }
  return out;
}

// Circle pieces tiling [b0, b0 + 2pi).
std::vector<Piece> circle_pieces(const std::vector<DensityStep>& steps) {
  std::vector<Piece> out;
  const size_t k = steps.size();
  for (size_t i = 0; i < k; ++i) {
    double s = steps[i].breakpoint;
    double e = (i + 1 < k) ? steps[i + 1].breakpoint : steps[0].breakpoint + kTwoPi;
    out.push_back({s, e, steps[i].value});
  }
  return out;
}

std::vector<DensityStep> canonicalize_steps(const Fibre& fibre, std::vector<DensityStep> steps) {
  if (steps.empty()) return steps;
  std::sort(steps.begin(), steps.end(),
            [](const DensityStep& a, const DensityStep& b) { return a.breakpoint < b.breakpoint; });
  // Drop zero-length pieces (later breakpoint wins).
  std::vector<DensityStep> dedup;
  for (const auto& s : steps) {
    if (!dedup.empty() && dedup.back().breakpoint == s.breakpoint) {
      dedup.back().value = s.value;
    } else {
      dedup.push_back(s);
    }
  }
  steps = std::move(dedup);

  if (fibre.periodic()) {
    // Merge cyclically adjacent equal values.
    bool changed = true;
    while (changed && steps.size() > 1) {
      changed = false;
      for (size_t i = 0; i < steps.size(); ++i) {
        size_t prev = (i + steps.size() - 1) % steps.size();
        if (steps[i].value == steps[prev].value) {
          steps.erase(steps.begin() + static_cast<long>(i));
          changed = true;
          break;
        }
      }
    }
    if (steps.size() == 1) {
      if (steps[0].value == 0.0) return {};
      steps[0].breakpoint = 0.0;  // constant density: breakpoint is immaterial
    }
    return steps;
  }

  // Interval fibres: merge adjacent equal values, strip redundant zeros.
  std::vector<DensityStep> merged;
  for (const auto& s : steps) {
    if (!merged.empty() && merged.back().value == s.value) continue;
    merged.push_back(s);
  }
  // A leading zero-value step duplicates the implicit background.
  while (!merged.empty() && merged.front().value == 0.0) {
    merged.erase(merged.begin());
  }
  return merged;
}

}  // namespace

FibreMeasure::FibreMeasure(Fibre fibre, std::vector<Atom> atoms, std::vector<DensityStep> steps)
    : fibre_(fibre) {
  for (auto& a : atoms) {
    if (!(a.mass > 0.0)) throw std::invalid_argument("atom mass must be positive");
    if (fibre.periodic()) a.position = norm_angle(a.position);
    if (!fibre.contains(a.position)) throw std::invalid_argument("atom position outside fibre");
  }
  std::sort(atoms.begin(), atoms.end(),
            [](const Atom& a, const Atom& b) { return a.position < b.position; });
  for (size_t i = 1; i < atoms.size(); ++i) {
    if (atoms[i].position == atoms[i - 1].position)
      throw std::invalid_argument("atom positions must be distinct");
  }

  for (auto& s : steps) {
    if (!(s.value >= 0.0)) throw std::invalid_argument("density values must be nonnegative");
    if (fibre.periodic()) {
      s.breakpoint = norm_angle(s.breakpoint);
    } else if (s.breakpoint == -kInf) {
      if (fibre.kind != FibreKind::Line)
        throw std::invalid_argument("-inf breakpoint only allowed on the line");
    } else if (!std::isfinite(s.breakpoint) || s.breakpoint < fibre.left() ||
               s.breakpoint >= fibre.right()) {
      throw std::invalid_argument("breakpoint outside fibre");
    }
  }
  {
    auto sorted = steps;
    std::sort(sorted.begin(), sorted.end(), [](const DensityStep& a, const DensityStep& b) {
      return a.breakpoint < b.breakpoint;
    });
    for (size_t i = 1; i < sorted.size(); ++i) {
      if (sorted[i].breakpoint == sorted[i - 1].breakpoint)
        throw std::invalid_argument("breakpoints must be strictly sorted");
    }
  }

  atoms_ = std::move(atoms);
  steps_ = canonicalize_steps(fibre_, std::move(steps));

  if (atoms_.empty()) {
    bool positive = false;
    for (const auto& s : steps_) positive = positive || s.value > 0.0;
    if (!positive) throw std::invalid_argument("measure is trivial");
  }
}

FibreMeasure FibreMeasure::atom_measure(Fibre fibre, double position, double mass) {
  return FibreMeasure(fibre, {{position, mass}}, {});
}

FibreMeasure FibreMeasure::constant_density(Fibre fibre, double value) {
  double start = fibre.kind == FibreKind::Line ? -kInf : fibre.left();
  return FibreMeasure(fibre, {}, {{start, value}});
}

double FibreMeasure::density_at(double p) const {
  if (steps_.empty()) return 0.0;
  if (fibre_.periodic()) {
    double q = norm_angle(p);
    // Last breakpoint <= q, wrapping to the final piece below the first.
    auto it = std::upper_bound(steps_.begin(), steps_.end(), q,
                               [](double x, const DensityStep& s) { return x < s.breakpoint; });
    if (it == steps_.begin()) return steps_.back().value;
    return std::prev(it)->value;
  }
  auto it = std::upper_bound(steps_.begin(), steps_.end(), p,
                             [](double x, const DensityStep& s) { return x < s.breakpoint; });
  if (it == steps_.begin()) return 0.0;
  return std::prev(it)->value;
}

double FibreMeasure::total() const {
  double t = 0.0;
  for (const auto& a : atoms_) t += a.mass;
  if (fibre_.periodic()) {
    for (const auto& pc : circle_pieces(steps_)) t += pc.v * (pc.e - pc.s);
  } else {
    for (const auto& pc : interval_pieces(fibre_, steps_)) {
      if (pc.v > 0.0) {
        double len = pc.e - pc.s;
        t += std::isfinite(len) ? pc.v * len : kInf;
      }
    }
  }
  return t;
}

bool FibreMeasure::is_constant_density() const {
  if (!atoms_.empty()) return false;
  if (steps_.size() != 1) return false;
  if (fibre_.periodic()) return true;  // canonical single piece covers the circle
  // Interval fibres: the single piece must start at the fibre's left end.
  double start = steps_[0].breakpoint;
  if (fibre_.kind == FibreKind::Line) return start == -kInf;
  return start == fibre_.left();
}

double FibreMeasure::constant_value() const { return steps_.empty() ? 0.0 : steps_[0].value; }

// ---------------------------------------------------------------------------
// nu_mass
// ---------------------------------------------------------------------------

namespace {

// Validate and normalize intervals; throws on reversed/overlapping input.
std::vector<FibreInterval> checked_intervals(const Fibre& fibre,
                                             std::vector<FibreInterval> intervals) {
  for (auto& iv : intervals) {
    if (std::isnan(iv.a) || std::isnan(iv.b)) throw std::invalid_argument("nan interval endpoint");
    if (iv.b < iv.a) throw std::invalid_argument("reversed interval");
    if (fibre.periodic()) {
      if (iv.b - iv.a > kTwoPi) throw std::invalid_argument("circle interval longer than 2pi");
    }
  }
  // Overlap check: sort by start; on the circle compare unwrapped images.
  if (fibre.periodic()) {
    struct Arc {
      double s, len;
    };
    std::vector<Arc> arcs;
    for (const auto& iv : intervals)
      if (iv.b > iv.a) arcs.push_back({norm_angle(iv.a), iv.b - iv.a});
    std::sort(arcs.begin(), arcs.end(), [](const Arc& x, const Arc& y) { return x.s < y.s; });
    for (size_t i = 1; i < arcs.size(); ++i) {
      if (arcs[i - 1].s + arcs[i - 1].len > arcs[i].s)
        throw std::invalid_argument("overlapping intervals");
    }
    if (arcs.size() > 1 && arcs.back().s + arcs.back().len > arcs.front().s + kTwoPi)
      throw std::invalid_argument("overlapping intervals");
  } else {
    auto sorted = intervals;
    std::sort(sorted.begin(), sorted.end(),
              [](const FibreInterval& x, const FibreInterval& y) { return x.a < y.a; });
    for (size_t i = 1; i < sorted.size(); ++i) {
      if (sorted[i - 1].b > sorted[i].a) throw std::invalid_argument("overlapping intervals");
    }
  }
  return intervals;
}

double density_mass_interval(const Fibre& fibre, const std::vector<DensityStep>& steps, double a,
                             double b) {
  double m = 0.0;
  for (const auto& pc : interval_pieces(fibre, steps)) {
    if (pc.v <= 0.0) continue;
    double lo = std::max(a, pc.s), hi = std::min(b, pc.e);
    if (hi > lo) {
      double len = hi - lo;
      m += std::isfinite(len) ? pc.v * len : kInf;
    }
  }
  return m;
}

// Arc [a, a+len) on the circle, len in [0, 2pi].
double density_mass_arc(const std::vector<DensityStep>& steps, double a, double len) {
  if (steps.empty() || len <= 0.0) return 0.0;
  double x = norm_angle(a);
  double y = x + len;
  double m = 0.0;
  for (const auto& pc : circle_pieces(steps)) {
    if (pc.v <= 0.0) continue;
    // Pieces live in [b0, b0+2pi); compare against shifted copies.
    for (int wrap = -1; wrap <= 1; ++wrap) {
      double s = pc.s + wrap * kTwoPi, e = pc.e + wrap * kTwoPi;
      double lo = std::max(x, s), hi = std::min(y, e);
      if (hi > lo) m += pc.v * (hi - lo);
    }
  }
  return m;
}

bool atom_in_interval(const Fibre& fibre, double p, const FibreInterval& iv) {
  if (fibre.periodic()) {
    double len = iv.b - iv.a;
    if (len >= kTwoPi) return true;
    double rel = norm_angle(p - iv.a);
    return rel < len;
  }
  return p >= iv.a && p < iv.b;
}

}  // namespace

double nu_mass(const FibreMeasure& nu, const std::vector<FibreInterval>& intervals) {
  auto ivs = checked_intervals(nu.fibre(), intervals);
  double m = 0.0;
  for (const auto& iv : ivs) {
    for (const auto& atom : nu.atoms()) {
      if (atom_in_interval(nu.fibre(), atom.position, iv)) m += atom.mass;
    }
    if (nu.fibre().periodic()) {
      m += density_mass_arc(nu.steps(), iv.a, iv.b - iv.a);
    } else {
      m += density_mass_interval(nu.fibre(), nu.steps(), iv.a, iv.b);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Pushforward and scaling
// ---------------------------------------------------------------------------

FibreMeasure nu_pushforward(const FibreMeasure& nu, const FibreIsometry& phi) {
  const Fibre& fibre = nu.fibre();
  if (!phi.allowed_on(fibre)) throw std::invalid_argument("isometry not in the fibre's group");

  std::vector<Atom> atoms;
  atoms.reserve(nu.atoms().size());
  for (const auto& a : nu.atoms()) atoms.push_back({phi.apply(a.position, fibre), a.mass});

  std::vector<DensityStep> steps;
  if (!nu.steps().empty()) {
    if (fibre.periodic()) {
      const auto& old = nu.steps();
      const size_t k = old.size();
      if (!phi.reflect) {
        for (const auto& s : old) steps.push_back({norm_angle(s.breakpoint + phi.shift), s.value});
      } else {
        // Piece [b_i, b_{i+1}) maps to the arc starting at phi(b_{i+1}).
        for (size_t i = 0; i < k; ++i) {
          double next = old[(i + 1) % k].breakpoint;
          steps.push_back({norm_angle(phi.shift - next), old[i].value});
        }
      }
    } else {
      auto pieces = interval_pieces(fibre, nu.steps());
      std::vector<Piece> mapped;
      for (const auto& pc : pieces) {
        if (!phi.reflect) {
          mapped.push_back({pc.s + phi.shift, pc.e + phi.shift, pc.v});
        } else {
          double s = std::isfinite(pc.e) ? phi.shift - pc.e : -kInf * (pc.e > 0 ? 1.0 : -1.0);
          double e = std::isfinite(pc.s) ? phi.shift - pc.s : kInf * (pc.s < 0 ? 1.0 : -1.0);
          mapped.push_back({s, e, pc.v});
        }
      }
      std::sort(mapped.begin(), mapped.end(),
                [](const Piece& x, const Piece& y) { return x.s < y.s; });
      for (const auto& pc : mapped) {
        if (pc.e > pc.s) steps.push_back({pc.s, pc.v});
      }
    }
  }
  return FibreMeasure(fibre, std::move(atoms), std::move(steps));
}

FibreMeasure nu_scale(const FibreMeasure& nu, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("scale factor must be positive");
  auto atoms = nu.atoms();
  for (auto& a : atoms) a.mass *= lambda;
  auto steps = nu.steps();
  for (auto& s : steps) s.value *= lambda;
  return FibreMeasure(nu.fibre(), std::move(atoms), std::move(steps));
}

// ---------------------------------------------------------------------------
// nu_match
// ---------------------------------------------------------------------------

namespace {

double position_scale(const FibreMeasure& m) {
  double s = 1.0;
  for (const auto& a : m.atoms())
    if (std::isfinite(a.position)) s = std::max(s, std::fabs(a.position));
  for (const auto& st : m.steps())
    if (std::isfinite(st.breakpoint)) s = std::max(s, std::fabs(st.breakpoint));
  return s;
}

bool values_close(double x, double y, double tol) {
  return std::fabs(x - y) <= tol * std::max({std::fabs(x), std::fabs(y), 1e-300});
}

// Compare rho against lambda * nu2 feature-by-feature.
bool measures_close(const FibreMeasure& rho, const FibreMeasure& nu2, double lambda, double tol) {
  const Fibre& fibre = rho.fibre();
  const double pos_tol =
      tol * (fibre.periodic() ? kTwoPi : std::max(position_scale(rho), position_scale(nu2)));

  // Atoms: pair greedily by position.
  if (rho.atoms().size() != nu2.atoms().size()) return false;
  std::vector<bool> used(nu2.atoms().size(), false);
  for (const auto& a : rho.atoms()) {
    bool found = false;
    for (size_t j = 0; j < nu2.atoms().size(); ++j) {
      if (used[j]) continue;
      const auto& b = nu2.atoms()[j];
      double d = fibre.periodic() ? circle_dist(a.position, b.position)
                                  : std::fabs(a.position - b.position);
      if (d <= pos_tol && values_close(a.mass, lambda * b.mass, tol)) {
        used[j] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }

  // Densities: compare values on the common refinement of both breakpoint sets.
  std::vector<double> cuts;
  auto add_cuts = [&cuts, &fibre](const FibreMeasure& m) {
    for (const auto& s : m.steps()) {
      if (std::isfinite(s.breakpoint)) cuts.push_back(s.breakpoint);
    }
    if (!fibre.periodic()) {
      if (std::isfinite(fibre.left())) cuts.push_back(fibre.left());
      if (std::isfinite(fibre.right())) cuts.push_back(fibre.right());
    }
  };
  add_cuts(rho);
  add_cuts(nu2);
  if (cuts.empty()) {
    return values_close(rho.constant_value(), lambda * nu2.constant_value(), tol);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  auto check_at = [&](double p) {
    return values_close(rho.density_at(p), lambda * nu2.density_at(p), tol);
  };
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    double len = cuts[i + 1] - cuts[i];
    if (len <= pos_tol) continue;  // sliver between nearly-equal cuts
    if (!check_at(0.5 * (cuts[i] + cuts[i + 1]))) return false;
  }
  if (fibre.periodic()) {
    double len = cuts.front() + kTwoPi - cuts.back();
    if (len > pos_tol && !check_at(norm_angle(cuts.back() + 0.5 * len))) return false;
  } else {
    // Unbounded or boundary slabs outside the explicit cut range.
    if (fibre.left() == -kInf && !check_at(cuts.front() - 1.0)) return false;
    if (fibre.right() == kInf && !check_at(cuts.back() + 1.0)) return false;
  }
  return true;
}

std::optional<double> pin_lambda(const FibreMeasure& rho, const FibreMeasure& nu2, double tol) {
  double t1 = rho.total(), t2 = nu2.total();
  if (std::isfinite(t1) && std::isfinite(t2) && t2 > 0.0) return t1 / t2;
  if (!rho.atoms().empty() && !nu2.atoms().empty()) {
    // First matched feature: nearest nu2 atom to rho's first atom.
    const auto& a = rho.atoms().front();
    const Fibre& fibre = rho.fibre();
    double best = kInf;
    double mass = 0.0;
    for (const auto& b : nu2.atoms()) {
      double d = fibre.periodic() ? circle_dist(a.position, b.position)
                                  : std::fabs(a.position - b.position);
      if (d < best) {
        best = d;
        mass = b.mass;
      }
    }
    double pos_tol = tol * (fibre.periodic() ? kTwoPi : std::max(1.0, std::fabs(a.position)));
    if (best > pos_tol || mass <= 0.0) return std::nullopt;
    return a.mass / mass;
  }
  // Density features only: ratio of values inside rho's first positive piece.
  const auto& steps = rho.steps();
  for (size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].value > 0.0) {
      double s = steps[i].breakpoint;
      double e = (i + 1 < steps.size()) ? steps[i + 1].breakpoint : rho.fibre().right();
      double probe;
      if (!std::isfinite(s)) {
        probe = std::isfinite(e) ? e - 1.0 : 0.0;
      } else {
        probe = std::isfinite(e) ? 0.5 * (s + e) : s + 1.0;
      }
      double v1 = rho.density_at(probe);
      double v2 = nu2.density_at(probe);
      if (v2 > 0.0 && v1 > 0.0) return v1 / v2;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

// Feature positions used to anchor candidate isometries.
std::vector<double> anchor_features(const FibreMeasure& m, bool atoms_only) {
  std::vector<double> f;
  if (atoms_only) {
    for (const auto& a : m.atoms()) f.push_back(a.position);
  } else {
    for (const auto& s : m.steps())
      if (std::isfinite(s.breakpoint)) f.push_back(s.breakpoint);
  }
  return f;
}

}  // namespace

std::optional<MatchWitness> nu_match(const FibreMeasure& nu1, const FibreMeasure& nu2,
                                     bool orientation_preserving_only, double tol) {
  if (nu1.fibre().kind != nu2.fibre().kind)
    throw std::invalid_argument("nu_match requires measures on the same fibre kind");
  const Fibre fibre = nu1.fibre();

  std::vector<FibreIsometry> candidates;
  switch (fibre.group()) {
    case FibreGroup::Trivial:
      candidates.push_back(FibreIsometry::identity());
      break;
    case FibreGroup::Z2:
      candidates.push_back(FibreIsometry::identity());
      if (!orientation_preserving_only) candidates.push_back(FibreIsometry::pi_flip());
      break;
    case FibreGroup::O2:
    case FibreGroup::LineZ2: {
      const bool use_atoms = nu1.has_atoms();
      if (use_atoms != nu2.has_atoms()) return std::nullopt;
      if (!use_atoms && nu1.is_constant_density() && nu2.is_constant_density()) {
        // Featureless pair.
        double v1 = nu1.constant_value(), v2 = nu2.constant_value();
        if (v1 > 0.0 && v2 > 0.0) return MatchWitness{v1 / v2, FibreIsometry::identity()};
        return std::nullopt;
      }
      auto f1 = anchor_features(nu1, use_atoms);
      auto f2 = anchor_features(nu2, use_atoms);
      if (f1.empty() || f2.empty()) return std::nullopt;
      for (double g : f2) {
        candidates.push_back(fibre.periodic() ? FibreIsometry::rotation(g - f1.front())
                                              : FibreIsometry::translation(g - f1.front()));
        if (!orientation_preserving_only) {
          candidates.push_back(fibre.periodic() ? FibreIsometry::circle_reflection(g + f1.front())
                                                : FibreIsometry::line_reflection(g + f1.front()));
        }
      }
      break;
    }
  }

  for (const auto& phi : candidates) {
    FibreMeasure rho = nu_pushforward(nu1, phi);
    auto lambda = pin_lambda(rho, nu2, tol);
    if (!lambda || !(*lambda > 0.0)) continue;
    if (measures_close(rho, nu2, *lambda, tol)) return MatchWitness{*lambda, phi};
  }
  return std::nullopt;
}

bool nu_invariant_under_full_group(const FibreMeasure& nu) {
  return !nu.has_atoms() && nu.is_constant_density();
}

double nu_density_mass(const FibreMeasure& nu, double a, double b) {
  if (!(b > a)) return 0.0;
  if (nu.fibre().periodic()) return density_mass_arc(nu.steps(), a, b - a);
  return density_mass_interval(nu.fibre(), nu.steps(), a, b);
}

// ---------------------------------------------------------------------------
// Mollification
// ---------------------------------------------------------------------------

double FibreGrid::spacing() const {
  if (n <= 0) return 0.0;
  return periodic ? (hi - lo) / n : (hi - lo) / (n - 1);
}

double FibreGrid::node(int i) const { return lo + i * spacing(); }

double SampledDensity::total_mass() const {
  double h = grid.spacing();
  double m = 0.0;
  if (grid.periodic) {
    for (double v : values) m += v * h;
  } else {
    for (int i = 0; i < grid.n; ++i) {
      double w = (i == 0 || i == grid.n - 1) ? 0.5 * h : h;
      m += values[static_cast<size_t>(i)] * w;
    }
  }
  return m;
}

namespace {

double bump(double s) {
  double r = 1.0 - s * s;
  return r > 0.0 ? std::exp(-1.0 / r) : 0.0;
}

}  // namespace

SampledDensity nu_mollify(const FibreMeasure& nu, double h, const FibreGrid& grid) {
  if (grid.n < 1) throw std::invalid_argument("mollify grid needs at least one node");
  const double dx = grid.spacing();
  if (grid.n > 1 && h < dx) throw std::invalid_argument("mollify width below grid spacing");
  if (!(h > 0.0)) throw std::invalid_argument("mollify width must be positive");

  const int n = grid.n;
  std::vector<double> cell_mass(static_cast<size_t>(n), 0.0);

  if (n == 1) {
    // Degenerate axisymmetric grid: the single node carries the mean density.
    double tot = nu.total();
    double len = grid.periodic ? (grid.hi - grid.lo) : 1.0;
    return SampledDensity{grid, {tot / len}};
  }

  // Exact deposit of the density part into node-centred cells.
  auto cell_bounds = [&](int i) {
    double c = grid.node(i);
    double a = c - 0.5 * dx, b = c + 0.5 * dx;
    if (!grid.periodic) {
      a = std::max(a, grid.lo);
      b = std::min(b, grid.hi);
    }
    return std::pair<double, double>(a, b);
  };
  for (int i = 0; i < n; ++i) {
    auto [a, b] = cell_bounds(i);
    if (nu.fibre().periodic()) {
      cell_mass[static_cast<size_t>(i)] += density_mass_arc(nu.steps(), a, b - a);
    } else {
      cell_mass[static_cast<size_t>(i)] += density_mass_interval(nu.fibre(), nu.steps(), a, b);
    }
  }
  // Atoms: linear split between the two nearest nodes.
  for (const auto& atom : nu.atoms()) {
    double p = atom.position;
    if (grid.periodic) p = norm_angle(p);
    double s = (p - grid.lo) / dx;
    int i0 = static_cast<int>(std::floor(s));
    double w1 = s - i0;
    int i1 = i0 + 1;
    if (grid.periodic) {
      i0 = ((i0 % n) + n) % n;
      i1 = (i0 + 1) % n;
    } else {
      i0 = std::clamp(i0, 0, n - 1);
      i1 = std::clamp(i1, 0, n - 1);
    }
    cell_mass[static_cast<size_t>(i0)] += atom.mass * (1.0 - w1);
    cell_mass[static_cast<size_t>(i1)] += atom.mass * w1;
  }

  // Normalized discrete kernel of radius h.
  const int J = static_cast<int>(std::floor(h / dx));
  std::vector<double> kern(static_cast<size_t>(2 * J + 1));
  double ksum = 0.0;
  for (int j = -J; j <= J; ++j) {
    double w = bump(j * dx / h);
    kern[static_cast<size_t>(j + J)] = w;
    ksum += w;
  }
  for (auto& w : kern) w /= ksum;

  std::vector<double> out(static_cast<size_t>(n), 0.0);
  if (grid.periodic) {
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = -J; j <= J; ++j) {
        int src = ((i - j) % n + n) % n;
        acc += kern[static_cast<size_t>(j + J)] * cell_mass[static_cast<size_t>(src)];
      }
      out[static_cast<size_t>(i)] = acc / dx;
    }
  } else {
    // Source-side renormalization keeps every cell's mass inside the window.
    for (int src = 0; src < n; ++src) {
      double m = cell_mass[static_cast<size_t>(src)];
      if (m == 0.0) continue;
      double wsum = 0.0;
      for (int j = -J; j <= J; ++j) {
        int dst = src + j;
        if (dst >= 0 && dst < n) wsum += kern[static_cast<size_t>(j + J)];
      }
      for (int j = -J; j <= J; ++j) {
        int dst = src + j;
        if (dst >= 0 && dst < n)
          out[static_cast<size_t>(dst)] += m * kern[static_cast<size_t>(j + J)] / wsum;
      }
    }
    for (int i = 0; i < n; ++i) {
      double w = (i == 0 || i == n - 1) ? 0.5 * dx : dx;
      out[static_cast<size_t>(i)] /= w;
    }
  }
  return SampledDensity{grid, std::move(out)};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string format_double17(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& tok) {
  if (tok == "inf") return kInf;
  if (tok == "-inf") return -kInf;
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw std::invalid_argument("bad number: " + tok);
  return v;
}

}  // namespace

std::string measure_to_text(const FibreMeasure& nu) {
  std::string out;
  for (const auto& a : nu.atoms()) {
    out += "atom " + format_double(a.position) + " " + format_double(a.mass) + "\n";
  }
  for (const auto& s : nu.steps()) {
    std::string b = std::isfinite(s.breakpoint) ? format_double(s.breakpoint)
                                                : (s.breakpoint < 0 ? "-inf" : "inf");
    out += "step " + b + " " + format_double(s.value) + "\n";
  }
  return out;
}

FibreMeasure measure_from_text(Fibre fibre, const std::string& text) {
  std::vector<Atom> atoms;
  std::vector<DensityStep> steps;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string kw, p, v;
    if (!(ls >> kw)) continue;
    if (!(ls >> p >> v)) throw std::invalid_argument("malformed measure line: " + line);
    if (kw == "atom") {
      atoms.push_back({parse_double(p), parse_double(v)});
    } else if (kw == "step") {
      steps.push_back({parse_double(p), parse_double(v)});
    } else {
      throw std::invalid_argument("unknown measure keyword: " + kw);
    }
  }
  return FibreMeasure(fibre, std::move(atoms), std::move(steps));
}

}  // namespace solex
