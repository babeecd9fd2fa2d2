#ifndef RANKMOE_GATING_HPP
#define RANKMOE_GATING_HPP

#include <span>
#include <vector>

#include "rankmoe/types.hpp"

namespace rankmoe {

// Multinomial logistic regression coefficients mapping a covariate vector to
// component membership probabilities. Row k holds (intercept, slopes) for
// component k; row 0 is the reference component and stays identically zero.
struct GatingParams {
  Matrix coef;  // K x (L+1)

  GatingParams() = default;
  GatingParams(std::size_t K, std::size_t L_plus_1) : coef(K, L_plus_1) {}

  std::size_t n_components() const { return coef.rows(); }
  std::size_t n_terms() const { return coef.cols(); }  // L + 1
};

// Membership probabilities for one voter: softmax over rows of coef applied
// to (1, w). `w` has length L = coef.cols() - 1.
std::vector<double> gating_probs(const GatingParams& params,
                                 std::span<const double> w);

// log(P(component k) / P(component 0)) for one voter; linear in (1, w).
double gating_log_odds(const GatingParams& params, std::span<const double> w,
                       int k);

// Throws ValidationError unless row 0 is all zero and every entry is finite.
void validate_gating(const GatingParams& params);

}  // namespace rankmoe

#endif  // RANKMOE_GATING_HPP
