#include "rankmoe/benter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rankmoe {

std::vector<double> plackett_luce_dampening(int n_candidates) {
  return std::vector<double>(static_cast<std::size_t>(n_candidates), 1.0);
}

double log_prob_ballot(const Ballot& ballot, std::span<const double> support,
                       std::span<const double> dampening) {
  const std::size_t N = support.size();
  const std::size_t n = ballot.ranking.size();
  // active[s] == 1 while candidate s is still in the choice set. Candidates
  // the ballot never ranks stay active at every stage.
  std::vector<char> active(N, 1);
  double lp = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double a = dampening[t];
    const int c = ballot.ranking[t];
    double denom = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
      if (!active[s]) continue;
      denom += std::pow(std::max(support[s], kSupportFloor), a);
    }
    const double pc = std::max(support[static_cast<std::size_t>(c)], kSupportFloor);
    lp += a * std::log(pc) - std::log(denom);
    active[static_cast<std::size_t>(c)] = 0;
  }
  return lp;
}

Ballot sample_ballot(std::span<const double> support,
                     std::span<const double> dampening, int length, Rng& rng) {
  const std::size_t N = support.size();
  std::vector<char> active(N, 1);
  std::vector<double> weights(N);
  Ballot ballot;
  ballot.ranking.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    const double a = dampening[static_cast<std::size_t>(t)];
    for (std::size_t s = 0; s < N; ++s) {
      // pow(0, 0) == 1, so a zero dampening stage is uniform over the
      // remaining candidates, zero-support ones included.
      weights[s] = active[s] ? std::pow(support[s], a) : 0.0;
    }
    int c = rng.categorical(weights);
    ballot.ranking.push_back(c);
    active[static_cast<std::size_t>(c)] = 0;
  }
  return ballot;
}

double log_likelihood(const Dataset& data, const MoEParams& params) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = params.n_components();
  double total = 0.0;
  std::vector<double> lp(K);
  for (std::size_t i = 0; i < M; ++i) {
    auto pi = gating_probs(params.gating, data.covariates.row(i));
    for (std::size_t k = 0; k < K; ++k) {
      lp[k] = std::log(pi[k]) +
              log_prob_ballot(data.ballots[i], params.support.row(k),
                              params.dampening);
    }
    double m = *std::max_element(lp.begin(), lp.end());
    double acc = 0.0;
    for (double v : lp) acc += std::exp(v - m);
    total += m + std::log(acc);
  }
  return total;
}

void validate_params(const MoEParams& params, std::size_t n_covariates) {
  const std::size_t K = params.support.rows();
  const std::size_t N = params.support.cols();
  if (K == 0 || N < 2) {
    throw ValidationError("support matrix must be K x N with N >= 2, got " +
                          std::to_string(K) + " x " + std::to_string(N));
  }
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      double p = params.support(k, j);
      if (!std::isfinite(p) || p < 0.0) {
        throw ValidationError("support (" + std::to_string(k) + ", " +
                              std::to_string(j) + ") is invalid: " +
                              std::to_string(p));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-8) {
      throw ValidationError("support row " + std::to_string(k) +
                            " sums to " + std::to_string(sum) + ", expected 1");
    }
  }
  if (params.dampening.size() != N) {
    throw ValidationError("dampening length (" +
                          std::to_string(params.dampening.size()) +
                          ") does not match candidate count (" +
                          std::to_string(N) + ")");
  }
  for (std::size_t t = 0; t < N; ++t) {
    double a = params.dampening[t];
    if (!std::isfinite(a) || a < 0.0 || a > 1.0) {
      throw ValidationError("dampening weight " + std::to_string(t + 1) +
                            " must lie in [0,1], got " + std::to_string(a));
    }
  }
  if (params.gating.coef.rows() != K) {
    throw ValidationError("gating rows (" +
                          std::to_string(params.gating.coef.rows()) +
                          ") do not match component count (" +
                          std::to_string(K) + ")");
  }
  if (params.gating.coef.cols() != n_covariates + 1) {
    throw ValidationError("gating columns (" +
                          std::to_string(params.gating.coef.cols()) +
                          ") do not match covariate count + 1 (" +
                          std::to_string(n_covariates + 1) + ")");
  }
  validate_gating(params.gating);
}

}  // namespace rankmoe
