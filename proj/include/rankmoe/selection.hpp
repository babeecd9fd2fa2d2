#ifndef RANKMOE_SELECTION_HPP
#define RANKMOE_SELECTION_HPP

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rankmoe/emm.hpp"
#include "rankmoe/types.hpp"

namespace rankmoe {

// A named group of covariate columns that enters and leaves models together
// (a continuous covariate is a single column; a dummy-coded categorical
// covariate is one block holding all its indicator columns).
struct CovariateBlock {
  std::string name;
  std::vector<std::size_t> columns;  // column indices into Dataset covariates
};

// One fitted candidate model in the selection search.
struct ModelScore {
  int n_components = 0;
  std::vector<std::string> covariate_names;  // block names in the subset
  std::vector<std::size_t> columns;          // flattened column indices
  double bic = 0.0;
  double loglik = 0.0;
  int n_params = 0;
  std::shared_ptr<const FitResult> fit;  // null when the fit failed
  bool failed = false;
  std::string message;  // failure diagnostic when failed
};

// Model-comparison score 2*loglik - n_params*log(M); larger is better.
double bic(double loglik, int n_params, std::size_t n_voters);

// Free parameters of a fitted model: K(N-1) support terms, N-2 interior
// dampening weights (zero when dampening is frozen at 1), and (K-1)(L+1)
// gating coefficients.
int count_free_params(int n_components, int n_candidates, int n_covariates,
                      bool plackett_luce);

// Backward-elimination search over component counts and covariate blocks:
// fit every K with the full block set, then repeatedly drop the single block
// whose removal scores best (by BIC across the K range) until one block
// remains. Returns every fitted model, sorted by BIC descending; failed fits
// score -infinity and are kept for inspection.
std::vector<ModelScore> backward_eliminate(const Dataset& data,
                                           const std::vector<CovariateBlock>& blocks,
                                           std::span<const int> k_values,
                                           const FitConfig& config);

}  // namespace rankmoe

#endif  // RANKMOE_SELECTION_HPP
