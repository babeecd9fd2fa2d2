#ifndef RANKMOE_TYPES_HPP
#define RANKMOE_TYPES_HPP

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rankmoe {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input data failed an invariant (duplicate candidate, index out of range, ...).
struct ValidationError : Error {
  using Error::Error;
};

// A mixture component lost all responsibility mass during fitting.
struct DegenerateComponentError : Error {
  DegenerateComponentError(std::string msg, int k)
      : Error(std::move(msg)), component(k) {}
  int component;
};

// The gating bound matrix is rank deficient (collinear covariate columns).
struct SingularGatingError : Error {
  SingularGatingError(std::string msg, std::vector<double> dir)
      : Error(std::move(msg)), null_direction(std::move(dir)) {}
  std::vector<double> null_direction;  // length L+1, slot 0 = intercept
};

// Dense row-major matrix of doubles. Rows are contiguous so they can be
// handed around as spans.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// An ordered partial ranking. Entries are 0-based candidate ids, all
// distinct; external file formats use candidate names (or 1-based ids) and
// are converted at the I/O boundary.
struct Ballot {
  std::vector<int> ranking;

  Ballot() = default;
  explicit Ballot(std::vector<int> r) : ranking(std::move(r)) {}

  std::size_t length() const { return ranking.size(); }
};

// Ballots joined to per-voter covariate rows. Immutable after validation.
struct Dataset {
  std::vector<Ballot> ballots;              // M entries
  Matrix covariates;                        // M x L, aligned with ballots
  std::vector<std::string> candidate_names; // N entries
  std::vector<std::string> covariate_names; // L entries

  std::size_t n_voters() const { return ballots.size(); }
  std::size_t n_candidates() const { return candidate_names.size(); }
  std::size_t n_covariates() const { return covariate_names.size(); }
};

// Per-column affine map onto [0,1] recorded so later observations can be
// transformed identically. Constant columns get range 0 and map to 0.
struct Standardization {
  std::vector<double> min;
  std::vector<double> range;

  double apply(std::size_t col, double value) const {
    if (range[col] <= 0.0) return 0.0;
    return (value - min[col]) / range[col];
  }
};

// Checks every Ballot/Dataset invariant; throws ValidationError naming the
// offending row. Candidate and covariate names are generated when absent.
Dataset validate_dataset(std::vector<Ballot> ballots, Matrix covariates,
                         int n_candidates,
                         std::vector<std::string> candidate_names = {},
                         std::vector<std::string> covariate_names = {});

// Maps each column of `raw` onto [0,1] in place and returns the per-column
// (min, range) record. Throws ValidationError on non-finite input.
Standardization standardize_covariates(Matrix& raw,
                                       std::span<const std::string> names = {});

// Candidates a ballot never ranks, ascending. The remaining-choice set at
// stage t is ranking[t..n) plus this list.
std::vector<int> unranked_candidates(const Ballot& ballot, int n_candidates);

}  // namespace rankmoe

#endif  // RANKMOE_TYPES_HPP
