#include "rankmoe/synth.hpp"

#include <cmath>
#include <string>

#include "rankmoe/gating.hpp"
#include "rankmoe/rng.hpp"

namespace rankmoe {

std::size_t expanded_columns(const GeneratorSpec& spec) {
  std::size_t n = 0;
  for (const auto& cv : spec.covariates) {
    n += cv.kind == CovariateSpec::Kind::uniform ? 1 : cv.levels.size() - 1;
  }
  return n;
}

namespace {

void validate_spec(const GeneratorSpec& spec) {
  if (spec.n_candidates < 2) throw ValidationError("need at least 2 candidates");
  if (spec.n_components < 1) throw ValidationError("need at least 1 component");
  if (spec.n_voters < 1) throw ValidationError("need at least 1 voter");
  const std::size_t N = static_cast<std::size_t>(spec.n_candidates);
  if (spec.length_probs.size() != N) {
    throw ValidationError("length distribution must have one entry per ballot "
                          "length 1.." + std::to_string(spec.n_candidates));
  }
  double sum = 0.0;
  for (double p : spec.length_probs) {
    if (p < 0.0) throw ValidationError("negative length probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("length distribution sums to " + std::to_string(sum));
  }
  for (const auto& cv : spec.covariates) {
    if (cv.kind == CovariateSpec::Kind::categorical) {
      if (cv.levels.size() < 2) {
        throw ValidationError("categorical covariate '" + cv.name +
                              "' needs at least 2 levels");
      }
      if (cv.level_probs.size() != cv.levels.size()) {
        throw ValidationError("categorical covariate '" + cv.name +
                              "' has mismatched level probabilities");
      }
      double ps = 0.0;
      for (double p : cv.level_probs) {
        if (p < 0.0) throw ValidationError("negative level probability");
        ps += p;
      }
      if (std::abs(ps - 1.0) > 1e-9) {
        throw ValidationError("level probabilities of '" + cv.name +
                              "' sum to " + std::to_string(ps));
      }
      if (cv.reference >= cv.levels.size()) {
        throw ValidationError("reference level of '" + cv.name +
                              "' is out of range");
      }
    }
  }
  if (spec.params.n_components() != static_cast<std::size_t>(spec.n_components) ||
      spec.params.n_candidates() != N) {
    throw ValidationError("generator parameters do not match the declared "
                          "component or candidate counts");
  }
  validate_params(spec.params, expanded_columns(spec));
  if (!spec.candidate_names.empty() && spec.candidate_names.size() != N) {
    throw ValidationError("candidate name count does not match n_candidates");
  }
}

}  // namespace

SynthData generate(const GeneratorSpec& spec) {
  validate_spec(spec);
  const std::size_t M = spec.n_voters;
  const std::size_t N = static_cast<std::size_t>(spec.n_candidates);
  const std::size_t L = expanded_columns(spec);

  SynthData out;
  std::vector<std::string> covariate_names;
  std::size_t col = 0;
  for (const auto& cv : spec.covariates) {
    CovariateBlock block;
    block.name = cv.name;
    if (cv.kind == CovariateSpec::Kind::uniform) {
      covariate_names.push_back(cv.name);
      block.columns.push_back(col++);
    } else {
      for (std::size_t l = 0; l < cv.levels.size(); ++l) {
        if (l == cv.reference) continue;
        covariate_names.push_back(cv.name + "=" + cv.levels[l]);
        block.columns.push_back(col++);
      }
    }
    out.blocks.push_back(std::move(block));
  }

  std::vector<Ballot> ballots(M);
  Matrix covariates(M, L);
  out.labels.resize(M);

  for (std::size_t i = 0; i < M; ++i) {
    Rng rng(Rng::derive(spec.seed, i));
    auto w = covariates.row(i);
    std::size_t c = 0;
    for (const auto& cv : spec.covariates) {
      if (cv.kind == CovariateSpec::Kind::uniform) {
        w[c++] = rng.uniform();
      } else {
        int level = rng.categorical(cv.level_probs);
        for (std::size_t l = 0; l < cv.levels.size(); ++l) {
          if (l == cv.reference) continue;
          w[c++] = (static_cast<std::size_t>(level) == l) ? 1.0 : 0.0;
        }
      }
    }
    auto pi = gating_probs(spec.params.gating, w);
    int label = rng.categorical(pi);
    out.labels[i] = label;
    int length = 1 + rng.categorical(spec.length_probs);
    ballots[i] = sample_ballot(spec.params.support.row(static_cast<std::size_t>(label)),
                               spec.params.dampening, length, rng);
  }

  out.data = validate_dataset(std::move(ballots), std::move(covariates),
                              spec.n_candidates, spec.candidate_names,
                              covariate_names);
  return out;
}

}  // namespace rankmoe
