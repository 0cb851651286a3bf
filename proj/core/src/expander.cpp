#include "solex/expander.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace solex {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

const char* family_name(FamilyTag tag) {
  switch (tag) {
    case FamilyTag::Ai: return "Ai";
    case FamilyTag::Aii: return "Aii";
    case FamilyTag::Bi: return "Bi";
    case FamilyTag::Bii: return "Bii";
    case FamilyTag::Biii: return "Biii";
    case FamilyTag::Ci: return "Ci";
    case FamilyTag::Cii: return "Cii";
  }
  return "?";
}

std::optional<FamilyTag> family_from_name(const std::string& name) {
  if (name == "Ai") return FamilyTag::Ai;
  if (name == "Aii") return FamilyTag::Aii;
  if (name == "Bi") return FamilyTag::Bi;
  if (name == "Bii") return FamilyTag::Bii;
  if (name == "Biii") return FamilyTag::Biii;
  if (name == "Ci") return FamilyTag::Ci;
  if (name == "Cii") return FamilyTag::Cii;
  return std::nullopt;
}

Fibre family_fibre(FamilyTag tag) {
  switch (tag) {
    case FamilyTag::Ai: return {FibreKind::HalfLine};
    case FamilyTag::Aii: return {FibreKind::PiInterval};
    case FamilyTag::Bi: return {FibreKind::Line};
    default: return {FibreKind::Circle};
  }
}

bool family_twisted(FamilyTag tag) { return tag == FamilyTag::Biii || tag == FamilyTag::Cii; }

bool family_on_plane(FamilyTag tag) { return tag == FamilyTag::Ci || tag == FamilyTag::Cii; }

bool family_fixes_alpha(FamilyTag tag) { return tag == FamilyTag::Ai || tag == FamilyTag::Bi; }

ProductExpander make_expander(FamilyTag tag, double alpha, double beta, FibreMeasure nu) {
  if (family_fixes_alpha(tag)) {
    if (alpha != 1.0) throw std::invalid_argument("invalid alpha");
  } else if (!(alpha > 0.0)) {
    throw std::invalid_argument("invalid alpha");
  }
  if (family_twisted(tag)) {
    if (!(beta > 0.0)) throw std::invalid_argument("invalid beta");
  } else if (beta != 0.0) {
    throw std::invalid_argument("invalid beta");
  }
  if (nu.fibre().kind != family_fibre(tag).kind)
    throw std::invalid_argument("measure fibre does not match family");
  return ProductExpander{tag, alpha, beta, std::move(nu)};
}

Box Box::full_fibre(double x_lo, double x_hi, const Fibre& fibre) {
  double lo = fibre.left(), hi = fibre.right();
  if (!std::isfinite(lo)) lo = -kInf;
  return Box{x_lo, x_hi, {{lo, hi}}};
}

namespace {

bool covers_full_fibre(const Fibre& fibre, const std::vector<FibreInterval>& set) {
  double len = 0.0;
  for (const auto& iv : set) len += iv.b - iv.a;
  if (fibre.periodic()) return len >= kTwoPi - 1e-14;
  return !set.empty() && set.front().a <= fibre.left() && set.back().b >= fibre.right();
}

void check_box(const ProductExpander& e, const Box& box) {
  if (std::isnan(box.x_lo) || std::isnan(box.x_hi) || box.x_hi < box.x_lo)
    throw std::invalid_argument("invalid box x-interval");
  if (box.x_lo == -kInf && !family_on_plane(e.tag))
    throw std::invalid_argument("x_lo = -inf only valid for plane families");
}

// Slab weight (e^{alpha b} - e^{alpha a}) / alpha, written to preserve
// relative precision.
double slab_weight(double alpha, double a, double b) {
  if (b <= a) return 0.0;
  if (a == -kInf) return std::exp(alpha * b) / alpha;
  return std::exp(alpha * a) * std::expm1(alpha * (b - a)) / alpha;
}

// nu(A - beta x) for the fibre sets of a circle measure: piecewise linear in x
// between critical shifts; evaluated exactly at a point.
double shifted_density_mass(const FibreMeasure& nu, const std::vector<FibreInterval>& arcs,
                            double shift) {
  double m = 0.0;
  for (const auto& arc : arcs) m += nu_density_mass(nu, arc.a - shift, arc.b - shift);
  return m;
}

double twisted_box_mass(const ProductExpander& e, const Box& box) {
  const double alpha = e.alpha, beta = e.beta;
  const double a = box.x_lo, b = box.x_hi;
  if (b <= a) return 0.0;
  if (covers_full_fibre(e.nu.fibre(), box.fibre_set)) {
    // Shear preserves full-circle slices.
    return slab_weight(alpha, a, b) * e.nu.total();
  }
  if (a == -kInf)
    throw std::invalid_argument("infinite box requires full fibre for twisted families");

  double mass = 0.0;

  // Atom contribution: atom p meets slice x iff p + beta x lies in A (mod 2pi);
  // each solution window integrates e^{alpha x}.
  for (const auto& atom : e.nu.atoms()) {
    for (const auto& arc : box.fibre_set) {
      double len = arc.b - arc.a;
      if (len <= 0.0) continue;
      double base = arc.a - atom.position;
      // beta x in [base + 2 pi n, base + len + 2 pi n)
      long n_lo = static_cast<long>(std::floor((beta * a - base - len) / kTwoPi)) - 1;
      long n_hi = static_cast<long>(std::ceil((beta * b - base) / kTwoPi)) + 1;
      for (long n = n_lo; n <= n_hi; ++n) {
        double x1 = (base + kTwoPi * static_cast<double>(n)) / beta;
        double x2 = x1 + len / beta;
        double lo = std::max(a, x1), hi = std::min(b, x2);
        if (hi > lo) mass += atom.mass * slab_weight(alpha, lo, hi);
      }
    }
  }

  // Density contribution: s(x) = nu_dens(A - beta x) is continuous piecewise
  // linear; integrate e^{alpha x} s(x) in closed form per critical interval.
  if (!e.nu.steps().empty()) {
    std::vector<double> cuts{a, b};
    for (const auto& arc : box.fibre_set) {
      for (double endpoint : {arc.a, arc.b}) {
        for (const auto& st : e.nu.steps()) {
          double base = endpoint - st.breakpoint;
          long n_lo = static_cast<long>(std::floor((beta * a - base) / kTwoPi)) - 1;
          long n_hi = static_cast<long>(std::ceil((beta * b - base) / kTwoPi)) + 1;
          for (long n = n_lo; n <= n_hi; ++n) {
            double x = (base + kTwoPi * static_cast<double>(n)) / beta;
            if (x > a && x < b) cuts.push_back(x);
          }
        }
      }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    double s_prev = shifted_density_mass(e.nu, box.fibre_set, beta * cuts.front());
    for (size_t i = 0; i + 1 < cuts.size(); ++i) {
      double x0 = cuts[i], x1 = cuts[i + 1];
      double s1 = shifted_density_mass(e.nu, box.fibre_set, beta * x1);
      double s0 = s_prev;
      s_prev = s1;
      if (x1 <= x0) continue;
      double k = (s1 - s0) / (x1 - x0);
      double e1 = std::exp(alpha * x1), e0 = std::exp(alpha * x0);
      mass += (s1 * e1 - s0 * e0) / alpha - k * (e1 - e0) / (alpha * alpha);
    }
  }
  return mass;
}

}  // namespace

double box_mass(const ProductExpander& e, const Box& box) {
  check_box(e, box);
  if (family_twisted(e.tag)) return twisted_box_mass(e, box);
  double w = slab_weight(e.alpha, box.x_lo, box.x_hi);
  return w == 0.0 ? 0.0 : w * nu_mass(e.nu, box.fibre_set);
}

double flow_map_pullback_mass(const ProductExpander& e, const Box& box, double s) {
  check_box(e, box);
  Box shifted = box;
  double dx = s / e.alpha;
  shifted.x_lo = box.x_lo + dx;  // -inf stays -inf
  shifted.x_hi = box.x_hi + dx;
  if (e.beta != 0.0) {
    double dth = e.beta * s / e.alpha;
    for (auto& iv : shifted.fibre_set) {
      iv.a += dth;
      iv.b += dth;
    }
  }
  return box_mass(e, shifted);
}

ExpandingReport expanding_check(const ProductExpander& e, std::span<const double> s_values,
                                std::span<const Box> boxes) {
  ExpandingReport report;
  for (const Box& box : boxes) {
    double m = box_mass(e, box);
    if (!(m > 0.0)) throw std::invalid_argument("expanding_check requires boxes of positive mass");
    for (double s : s_values) {
      double pulled = flow_map_pullback_mass(e, box, s);
      double expected = std::exp(s) * m;
      report.max_rel_err = std::max(report.max_rel_err, std::fabs(pulled - expected) / expected);
    }
    const double ds = 1e-4;
    double deriv =
        (flow_map_pullback_mass(e, box, ds) - flow_map_pullback_mass(e, box, -ds)) / (2.0 * ds);
    report.fd_rel_err = std::max(report.fd_rel_err, std::fabs(deriv - m) / m);
  }
  return report;
}

std::optional<MatchWitness> expanders_isomorphic(const ProductExpander& e1,
                                                 const ProductExpander& e2) {
  if (e1.tag != e2.tag) return std::nullopt;
  if (e1.alpha != e2.alpha || e1.beta != e2.beta) return std::nullopt;  // X_1 = X_2 required
  return nu_match(e1.nu, e2.nu, family_twisted(e1.tag));
}

bool is_gradient(const ProductExpander& e) {
  if (e.tag != FamilyTag::Bi && e.tag != FamilyTag::Bii && e.tag != FamilyTag::Ci) return false;
  return nu_invariant_under_full_group(e.nu);
}

Box plane_coordinates(const ProductExpander& e, double r) {
  if (!family_on_plane(e.tag)) throw std::invalid_argument("plane coordinates need family Ci/Cii");
  if (!(r > 0.0)) throw std::invalid_argument("ball radius must be positive");
  return Box{-kInf, std::log(r), {{0.0, kTwoPi}}};
}

// ---------------------------------------------------------------------------
// Spec files
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueDoc parse_key_value_doc(const std::string& text) {
  KeyValueDoc doc;
  std::istringstream in(text);
  std::string line;
  bool in_measure = false;
  while (std::getline(in, line)) {
    std::string stripped = line;
    auto hash = stripped.find('#');
    if (hash != std::string::npos) stripped = stripped.substr(0, hash);
    stripped = trim(stripped);
    if (stripped.empty()) continue;
    if (in_measure) {
      if (stripped == "end") {
        in_measure = false;
      } else {
        doc.measure_text += stripped + "\n";
      }
      continue;
    }
    if (stripped == "measure:") {
      in_measure = true;
      continue;
    }
    auto eq = stripped.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected key = value: " + stripped);
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty() || value.empty()) throw std::invalid_argument("bad key-value line: " + stripped);
    doc.kv[key] = value;
  }
  if (in_measure) throw std::invalid_argument("unterminated measure block");
  return doc;
}

ProductExpander expander_from_doc(const KeyValueDoc& doc) {
  auto it = doc.kv.find("family");
  if (it == doc.kv.end()) throw std::invalid_argument("missing family");
  auto tag = family_from_name(it->second);
  if (!tag) throw std::invalid_argument("unknown family: " + it->second);

  auto get_num = [&doc](const std::string& key, double fallback, bool required) {
    auto kit = doc.kv.find(key);
    if (kit == doc.kv.end()) {
      if (required) throw std::invalid_argument("missing " + key);
      return fallback;
    }
    try {
      size_t pos = 0;
      double v = std::stod(kit->second, &pos);
      if (pos != kit->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("invalid " + key);
    }
  };

  double alpha = get_num("alpha", 1.0, !family_fixes_alpha(*tag));
  double beta = get_num("beta", 0.0, family_twisted(*tag));
  FibreMeasure nu = measure_from_text(family_fibre(*tag), doc.measure_text);
  return make_expander(*tag, alpha, beta, std::move(nu));
}

ProductExpander expander_from_text(const std::string& text) {
  return expander_from_doc(parse_key_value_doc(text));
}

std::string expander_to_text(const ProductExpander& e) {
  std::string out;
  out += std::string("family = ") + family_name(e.tag) + "\n";
  out += "alpha = " + format_double(e.alpha) + "\n";
  if (family_twisted(e.tag)) out += "beta = " + format_double(e.beta) + "\n";
  out += "measure:\n" + measure_to_text(e.nu) + "end\n";
  return out;
}

}  // namespace solex
