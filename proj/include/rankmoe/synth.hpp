#ifndef RANKMOE_SYNTH_HPP
#define RANKMOE_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rankmoe/benter.hpp"
#include "rankmoe/selection.hpp"
#include "rankmoe/types.hpp"

namespace rankmoe {

// How one covariate is drawn for each synthetic voter. A uniform covariate
// contributes one column on [0,1]; a categorical one contributes a 0/1
// indicator column per non-reference level.
struct CovariateSpec {
  enum class Kind { uniform, categorical };
  Kind kind = Kind::uniform;
  std::string name;
  std::vector<std::string> levels;      // categorical only
  std::vector<double> level_probs;      // categorical only; sums to 1
  std::size_t reference = 0;            // index of the dropped level
};

struct GeneratorSpec {
  int n_candidates = 0;
  int n_components = 0;
  MoEParams params;  // generating truth; gating columns = expanded columns + 1
  std::vector<CovariateSpec> covariates;
  std::vector<double> length_probs;  // ballot length 1..N; sums to 1
  std::size_t n_voters = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> candidate_names;  // optional
};

struct SynthData {
  Dataset data;
  std::vector<int> labels;            // true component per voter, 0-based
  std::vector<CovariateBlock> blocks; // expanded column structure
};

// Number of covariate columns the spec expands to.
std::size_t expanded_columns(const GeneratorSpec& spec);

// Draws a fully labeled dataset: per voter, covariates in declaration order,
// then the component label from the gating probabilities, then the ballot
// length, then the ballot itself. Each voter uses an independent substream
// derived from the seed, so output is reproducible bit for bit.
SynthData generate(const GeneratorSpec& spec);

}  // namespace rankmoe

#endif  // RANKMOE_SYNTH_HPP
