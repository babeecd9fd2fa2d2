#ifndef RANKMOE_IO_HPP
#define RANKMOE_IO_HPP

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rankmoe/emm.hpp"
#include "rankmoe/selection.hpp"
#include "rankmoe/stv.hpp"
#include "rankmoe/synth.hpp"
#include "rankmoe/types.hpp"

namespace rankmoe {

// File or format problem; the message carries the path and, when known, the
// line number.
struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Ballot files: delimited text, header row, then one voter per row:
//   voter_id, pref1, pref2, ..., prefN
// holding candidate names, left-packed (no blank before a non-blank).

struct BallotFileContent {
  std::vector<std::string> voter_ids;
  std::vector<std::vector<std::string>> preferences;  // names per voter
  std::vector<std::string> candidate_names;           // resolved list
};

// Reads and validates a ballot file. With a declared candidate list, every
// name must resolve against it; otherwise candidates are collected in order
// of first appearance.
BallotFileContent read_ballot_file(const std::string& path,
                                   const std::vector<std::string>& declared_candidates = {});

// Candidate-name preferences mapped to index ballots.
std::vector<Ballot> to_ballots(const BallotFileContent& content);

// Writes the dataset's ballots; voter ids default to 1..M.
void write_ballot_file(const std::string& path, const Dataset& data,
                       const std::vector<std::string>& voter_ids = {});

// ---------------------------------------------------------------------------
// Covariate files: header row (voter id column + one column per covariate),
// cells kept as strings until the design is built.

struct CovariateFileContent {
  std::vector<std::string> voter_ids;
  std::vector<std::string> column_names;
  std::vector<std::vector<std::string>> cells;
};

CovariateFileContent read_covariate_file(const std::string& path);

void write_covariate_file(const std::string& path, const Dataset& data,
                          const std::vector<std::string>& voter_ids = {});

// Declares a covariate column as categorical; its dummy columns use the
// given reference level (or the alphabetically first level when empty).
struct CategoricalDecl {
  std::string column;
  std::string reference;
};

struct DesignResult {
  Matrix columns;
  std::vector<std::string> names;
  std::vector<CovariateBlock> blocks;
};

// Aligns covariate rows to the ballot voter ids (exact id-set match
// required) and expands declared categorical columns into 0/1 dummies.
DesignResult build_design(const CovariateFileContent& cov,
                          const std::vector<std::string>& ballot_ids,
                          const std::vector<CategoricalDecl>& categoricals);

// ---------------------------------------------------------------------------
// JSON configuration.

struct CliConfig {
  std::vector<std::string> candidates;
  std::vector<CategoricalDecl> categoricals;
  int n_components = 1;
  FitConfig fit;
};

nlohmann::json load_json_file(const std::string& path);
CliConfig parse_config(const nlohmann::json& j);
GeneratorSpec parse_generator_spec(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Reports. The fit report is the single source of truth; the mosaic data is
// derived from it, never rebuilt from the parameters directly.

nlohmann::ordered_json build_fit_report(
    const Dataset& data, const FitResult& result, int n_components,
    bool plackett_luce, const FitConfig& config,
    const std::optional<Standardization>& standardization,
    const std::vector<CovariateBlock>& blocks);

// Plot-ready column/segment table: one row per (component, candidate) with
// column extents [x0,x1) sized by mixing and stacked segment extents [y0,y1)
// sized by support.
std::string mosaic_csv(const nlohmann::ordered_json& report);

nlohmann::ordered_json count_report(const CountResult& result,
                                    const std::vector<std::string>& candidate_names,
                                    std::size_t n_ballots);
std::string render_count_table(const CountResult& result,
                               const std::vector<std::string>& candidate_names,
                               std::size_t n_ballots);

nlohmann::ordered_json selection_report(const std::vector<ModelScore>& scores,
                                        std::size_t n_voters);
std::string render_selection_table(const std::vector<ModelScore>& scores,
                                   std::size_t top_n);

// Labels and generating parameters written alongside simulated datasets;
// component labels are 1-based here.
nlohmann::ordered_json truth_sidecar(const SynthData& synth,
                                     const GeneratorSpec& spec);

// Rewrites (voter, rank, candidate) long-format rows as a wide ballot file.
void convert_long_to_wide(const std::string& in_path, const std::string& out_path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace rankmoe

#endif  // RANKMOE_IO_HPP
