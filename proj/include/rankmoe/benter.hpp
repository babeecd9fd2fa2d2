#ifndef RANKMOE_BENTER_HPP
#define RANKMOE_BENTER_HPP

#include <span>
#include <vector>

#include "rankmoe/gating.hpp"
#include "rankmoe/rng.hpp"
#include "rankmoe/types.hpp"

namespace rankmoe {

// Support probabilities below this are floored before taking logs, so a
// ballot ranking a zero-support candidate gets a very small positive density
// instead of -inf.
inline constexpr double kSupportFloor = 1e-10;

// Full parameter set for one mixture-of-experts model: per-component support
// vectors (rows of `support`, each on the simplex), shared stagewise
// dampening weights, and the gating coefficients.
struct MoEParams {
  Matrix support;                 // K x N
  std::vector<double> dampening;  // N entries, each in [0,1]
  GatingParams gating;            // K x (L+1)

  std::size_t n_components() const { return support.rows(); }
  std::size_t n_candidates() const { return support.cols(); }
};

// Dampening weights that turn the stagewise density into the classical
// first-choice-proportional model at every stage: all ones.
std::vector<double> plackett_luce_dampening(int n_candidates);

// Log density of one (possibly partial) ballot under a single component.
// Stage t removes already-chosen candidates from the choice set; the set
// always retains candidates the ballot never ranks. dampening[t] = 0 makes
// stage t uniform over the remaining set (0^0 is taken as 1).
double log_prob_ballot(const Ballot& ballot, std::span<const double> support,
                       std::span<const double> dampening);

// Draws a ballot of the given length by sequential removal sampling.
Ballot sample_ballot(std::span<const double> support,
                     std::span<const double> dampening, int length, Rng& rng);

// Observed-data log likelihood of the full mixture over the dataset,
// accumulated in log space.
double log_likelihood(const Dataset& data, const MoEParams& params);

// Structural checks: simplex rows, dampening in [0,1], gating row 0 zero,
// matching dimensions. Throws ValidationError.
void validate_params(const MoEParams& params, std::size_t n_covariates);

}  // namespace rankmoe

#endif  // RANKMOE_BENTER_HPP
