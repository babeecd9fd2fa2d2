#ifndef RANKMOE_EMM_HPP
#define RANKMOE_EMM_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rankmoe/benter.hpp"
#include "rankmoe/types.hpp"

namespace rankmoe {

// Posterior component-membership probabilities, one row per voter; rows sum
// to 1.
using Responsibilities = Matrix;

struct FitConfig {
  // Phase (a): expectation/maximization passes on the plain mixture (shared
  // mixing weights, no covariates) from a randomized soft assignment.
  int mixture_warmup_iters = 500;
  // Phase (b): gating ascent steps against the warm-up responsibilities.
  int gating_warmup_steps = 1000;
  // Phase (c): full cycles, stopped early by the Aitken criterion.
  int max_emm_iters = 2000;
  double aitken_tol = 1e-6;
  // Ascent steps taken inside each conditional maximization per cycle.
  int mm_inner_iters = 1;
  int n_random_starts = 5;
  std::uint64_t seed = 0;
  // Freeze all dampening weights at 1 (the first-choice-proportional
  // stagewise model).
  bool fix_plackett_luce = false;
  // Worker threads for independent random starts; observable behavior is
  // identical for any value.
  int n_threads = 1;
  bool compute_standard_errors = true;
  // When set, skip the warm-up phases and random starts and run the main
  // loop once from exactly these parameters.
  std::optional<MoEParams> init;
};

// NaN marks an estimate whose uncertainty is unavailable (parameter fixed by
// convention, at its boundary, or removed to make the information matrix
// invertible).
struct StandardErrors {
  Matrix support;                 // K x N
  std::vector<double> dampening;  // N
  Matrix gating;                  // K x (L+1); row 0 is all NaN (fixed)
};

struct FitResult {
  MoEParams params;
  Responsibilities responsibilities;  // M x K at the final parameters
  // One observed log-likelihood per recorded pass: warm-up cycles first,
  // then one entry per main-loop cycle. Non-decreasing within 1e-8.
  std::vector<double> loglik_trace;
  // How many of the trace entries belong to the warm-up phases.
  std::size_t warmup_entries = 0;
  double final_loglik = 0.0;
  bool converged = false;
  int iterations = 0;  // main-loop cycles executed
  StandardErrors standard_errors;
  std::vector<double> marginal_mixing;  // column means of responsibilities

  const GatingParams& gating() const { return params.gating; }
};

// Posterior membership probabilities under the current parameters, computed
// in log space with a max shift. Throws ValidationError on dimension
// mismatch.
Responsibilities e_step(const Dataset& data, const MoEParams& params);

// Expected complete-data log likelihood
//   sum_i sum_k z_ik [log pi_ik + log f(ballot_i | component k)],
// the objective all conditional maximization steps ascend.
double q_function(const Dataset& data, const Responsibilities& z,
                  const MoEParams& params);

// One fixed-point ascent update of every component's support row, holding
// dampening fixed. Rows are normalized and floored. Throws
// DegenerateComponentError if a responsibility column has no mass.
Matrix m_step_support(const Dataset& data, const Responsibilities& z,
                      const MoEParams& params);

struct DampeningUpdate {
  std::vector<double> dampening;
  // Stages whose curvature vanished (no ballot reaches them); their weight
  // is left unchanged.
  std::vector<char> unidentified;
};

// One quadratic-surrogate ascent update of the interior dampening weights
// (first and last stay fixed), holding support fixed. Results clamped to
// [0,1].
DampeningUpdate m_step_dampening(const Dataset& data, const Responsibilities& z,
                                 const MoEParams& params);

// One ascent update of every non-reference gating row, each by a Newton-like
// step against the fixed curvature bound matrix; rows are visited in order
// with membership probabilities refreshed between rows. Throws
// SingularGatingError when the bound matrix is rank deficient.
GatingParams m_step_gating(const Dataset& data, const Responsibilities& z,
                           const GatingParams& gating);

// Aitken-accelerated convergence test on the last three entries of the
// history. Throws ValidationError on fewer than 3 entries.
bool aitken_converged(std::span<const double> history, double tol);

// Full fitting pipeline: randomized warm-up, gating warm-up, main cycles,
// canonical component ordering (descending marginal mixing), standard
// errors. Best of the random starts by final log likelihood.
FitResult fit(const Dataset& data, int n_components,
              const FitConfig& config = {});

// Curvature-based uncertainty for every free parameter via a central
// finite-difference Hessian of the observed log likelihood, mapped back to
// the reported scales. Fixed or boundary parameters get NaN.
StandardErrors standard_errors(const Dataset& data, const MoEParams& params,
                               bool plackett_luce);

// The three minorizing surrogates used by the conditional maximization
// steps, exposed so tests can verify tangency at the expansion point and the
// global lower-bound property. Each returns a full q_function-scale value
// with the other parameter blocks held at `ref`.
double support_surrogate(const Dataset& data, const Responsibilities& z,
                         const MoEParams& ref, const Matrix& support_new);
double dampening_surrogate(const Dataset& data, const Responsibilities& z,
                           const MoEParams& ref,
                           std::span<const double> dampening_new);
// Varies gating row k only (the per-row bound the update actually uses).
double gating_surrogate(const Dataset& data, const Responsibilities& z,
                        const MoEParams& ref, int k,
                        std::span<const double> row_new);

}  // namespace rankmoe

#endif  // RANKMOE_EMM_HPP
