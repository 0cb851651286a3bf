#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "solex/expander.hpp"
#include "solex/fibre_measure.hpp"

namespace solex::testing {

using Rng = std::mt19937_64;

// Relative agreement that also accepts matching infinities.
inline bool totals_agree(double a, double b, double tol = 1e-9) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::fabs(a - b) <= tol * std::max({std::fabs(a), std::fabs(b), 1.0});
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Coordinate window used for random feature positions on each fibre.
inline std::pair<double, double> feature_window(const Fibre& fibre) {
  switch (fibre.kind) {
    case FibreKind::Circle: return {0.0, kTwoPi};
    case FibreKind::Line: return {-3.0, 3.0};
    case FibreKind::HalfLine: return {0.1, 5.0};
    case FibreKind::PiInterval: return {0.2, kPi - 0.2};
  }
  return {0.0, 1.0};
}

inline FibreMeasure random_measure(Rng& rng, Fibre fibre, int max_atoms = 3, int max_steps = 3) {
  auto [lo, hi] = feature_window(fibre);
  for (;;) {
    std::vector<Atom> atoms;
    std::vector<DensityStep> steps;
    int na = uniform_int(rng, 0, max_atoms);
    int ns = uniform_int(rng, 0, max_steps);
    for (int i = 0; i < na; ++i) atoms.push_back({uniform(rng, lo, hi), uniform(rng, 0.1, 5.0)});
    for (int i = 0; i < ns; ++i)
      steps.push_back({uniform(rng, lo, hi), uniform(rng, 0.1, 4.0)});
    try {
      return FibreMeasure(fibre, std::move(atoms), std::move(steps));
    } catch (const std::invalid_argument&) {
      continue;  // trivial draw or colliding positions; redraw
    }
  }
}

inline FibreIsometry random_isometry(Rng& rng, const Fibre& fibre,
                                     bool orientation_preserving_only = false) {
  switch (fibre.group()) {
    case FibreGroup::Trivial:
      return FibreIsometry::identity();
    case FibreGroup::Z2:
      if (!orientation_preserving_only && uniform_int(rng, 0, 1)) return FibreIsometry::pi_flip();
      return FibreIsometry::identity();
    case FibreGroup::O2: {
      double c = uniform(rng, 0.0, kTwoPi);
      if (!orientation_preserving_only && uniform_int(rng, 0, 1))
        return FibreIsometry::circle_reflection(c);
      return FibreIsometry::rotation(c);
    }
    case FibreGroup::LineZ2: {
      double c = uniform(rng, -2.0, 2.0);
      if (!orientation_preserving_only && uniform_int(rng, 0, 1))
        return FibreIsometry::line_reflection(c);
      return FibreIsometry::translation(c);
    }
  }
  return FibreIsometry::identity();
}

inline std::vector<FamilyTag> all_families() {
  return {FamilyTag::Ai,  FamilyTag::Aii, FamilyTag::Bi, FamilyTag::Bii,
          FamilyTag::Biii, FamilyTag::Ci,  FamilyTag::Cii};
}

inline ProductExpander random_expander(Rng& rng, FamilyTag tag) {
  double alpha = family_fixes_alpha(tag) ? 1.0 : uniform(rng, 0.4, 2.5);
  double beta = family_twisted(tag) ? uniform(rng, 0.3, 2.0) : 0.0;
  return make_expander(tag, alpha, beta, random_measure(rng, family_fibre(tag)));
}

// A box with strictly positive mass for the given expander.
inline Box random_positive_box(Rng& rng, const ProductExpander& e) {
  const Fibre fibre = e.nu.fibre();
  auto [lo, hi] = feature_window(fibre);
  for (;;) {
    double a = uniform(rng, -2.0, 1.5);
    double b = a + uniform(rng, 0.2, 2.0);
    Box box{a, b, {}};
    if (uniform_int(rng, 0, 3) == 0) {
      box = Box::full_fibre(a, b, fibre);
    } else {
      double fa = uniform(rng, lo, hi - 0.05);
      double fb = fa + uniform(rng, 0.05, fibre.periodic() ? kTwoPi - 0.01 : (hi - fa));
      if (!fibre.periodic()) fb = std::min(fb, hi);
      box.fibre_set = {{fa, fb}};
    }
    if (box_mass(e, box) > 1e-9) return box;
  }
}

}  // namespace solex::testing
