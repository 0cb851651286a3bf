#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solex/fibre_measure.hpp"

namespace solex {

/// The seven measure-expander families. Families A live on the disc (strip
/// models), B on the cylinder/plane-with-X-nonvanishing, C on the plane with
/// X vanishing at the origin; Biii and Cii carry the twist F_beta.
enum class FamilyTag { Ai, Aii, Bi, Bii, Biii, Ci, Cii };

const char* family_name(FamilyTag tag);
std::optional<FamilyTag> family_from_name(const std::string& name);
Fibre family_fibre(FamilyTag tag);
bool family_twisted(FamilyTag tag);
/// Ci/Cii: the cylinder is the log-polar chart of the plane minus the origin.
bool family_on_plane(FamilyTag tag);
/// Ai and Bi are normal forms with alpha fixed to 1.
bool family_fixes_alpha(FamilyTag tag);

/// A classified measure expander mu = e^{alpha x} dx (x) nu, twisted tags
/// pushed forward by F_beta(x,theta) = (x, theta + beta x). The vector field
/// is X = (1/alpha) d_x + (beta/alpha) d_theta.
struct ProductExpander {
  FamilyTag tag;
  double alpha;
  double beta;  // 0 for untwisted families
  FibreMeasure nu;
};

/// Validate parameters against the family pattern. Throws std::invalid_argument
/// with messages "invalid alpha", "invalid beta", "measure is trivial", or a
/// fibre mismatch description.
ProductExpander make_expander(FamilyTag tag, double alpha, double beta, FibreMeasure nu);

/// Test box [x_lo, x_hi] x A. x_lo may be -inf (plane balls); for twisted
/// families that requires A to be the full fibre.
struct Box {
  double x_lo = 0.0;
  double x_hi = 0.0;
  std::vector<FibreInterval> fibre_set;

  static Box full_fibre(double x_lo, double x_hi, const Fibre& fibre);
};

/// Exact mu-mass of a box; closed form for untwisted families, exact sheared
/// slab decomposition for twisted ones.
double box_mass(const ProductExpander& e, const Box& box);

/// (psi_s^* mu)(B) = mu(psi_s(B)) with psi_s(x,th) = (x + s/alpha, th + beta s/alpha).
double flow_map_pullback_mass(const ProductExpander& e, const Box& box, double s);

struct ExpandingReport {
  double max_rel_err = 0.0;  // max over samples of |pullback - e^s mass| / (e^s mass)
  double fd_rel_err = 0.0;   // central-difference check of L_X mu (B) = mu(B)
};

/// Verify psi_s^*(mu) = e^s mu over the given flow parameters and boxes, plus
/// a finite-difference derivative check at s = 0 (step 1e-4).
ExpandingReport expanding_check(const ProductExpander& e, std::span<const double> s_values,
                                std::span<const Box> boxes);

/// Isomorphism decision of the classification: same family, same vector field,
/// and fibre measures related by phi_*(nu1) = lambda nu2 with phi an isometry
/// of the fibre (orientation preserving for Biii/Cii).
std::optional<MatchWitness> expanders_isomorphic(const ProductExpander& e1,
                                                 const ProductExpander& e2);

/// True iff the induced soliton is gradient: family Bi, Bii or Ci with nu
/// invariant under the full isometry group of the fibre.
bool is_gradient(const ProductExpander& e);

/// For plane families: the Euclidean ball B_r of the z = e^{x+i theta} chart,
/// i.e. {x < log r} x S^1.
Box plane_coordinates(const ProductExpander& e, double r);

// --- expander spec files ----------------------------------------------------

/// Key-value document with an embedded `measure:` ... `end` block.
struct KeyValueDoc {
  std::map<std::string, std::string> kv;
  std::string measure_text;
};

KeyValueDoc parse_key_value_doc(const std::string& text);
ProductExpander expander_from_doc(const KeyValueDoc& doc);
ProductExpander expander_from_text(const std::string& text);
/// Canonical key-value form with the embedded measure block.
std::string expander_to_text(const ProductExpander& e);

}  // namespace solex
