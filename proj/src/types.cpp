#include "rankmoe/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rankmoe {

Dataset validate_dataset(std::vector<Ballot> ballots, Matrix covariates,
                         int n_candidates,
                         std::vector<std::string> candidate_names,
                         std::vector<std::string> covariate_names) {
  if (n_candidates < 1) {
    throw ValidationError("n_candidates must be at least 1, got " +
                          std::to_string(n_candidates));
  }
  if (ballots.empty()) {
    throw ValidationError("dataset has no ballots");
  }
  if (covariates.rows() == 0 && covariates.cols() == 0) {
    covariates = Matrix(ballots.size(), 0);  // no covariates supplied
  }
  if (covariates.rows() != ballots.size()) {
    throw ValidationError("covariate rows (" + std::to_string(covariates.rows()) +
                          ") do not match ballot count (" +
                          std::to_string(ballots.size()) + ")");
  }

  std::vector<char> seen(static_cast<std::size_t>(n_candidates));
  for (std::size_t i = 0; i < ballots.size(); ++i) {
    const auto& r = ballots[i].ranking;
    if (r.empty()) {
      throw ValidationError("ballot " + std::to_string(i) + " is empty");
    }
    if (r.size() > static_cast<std::size_t>(n_candidates)) {
      throw ValidationError("ballot " + std::to_string(i) + " ranks " +
                            std::to_string(r.size()) + " candidates but only " +
                            std::to_string(n_candidates) + " exist");
    }
    std::fill(seen.begin(), seen.end(), 0);
    for (int c : r) {
      if (c < 0 || c >= n_candidates) {
        throw ValidationError("ballot " + std::to_string(i) +
                              " references candidate " + std::to_string(c) +
                              " outside [0, " + std::to_string(n_candidates - 1) +
                              "]");
      }
      if (seen[static_cast<std::size_t>(c)]) {
        throw ValidationError("ballot " + std::to_string(i) +
                              " ranks candidate " + std::to_string(c) +
                              " more than once");
      }
      seen[static_cast<std::size_t>(c)] = 1;
    }
  }

  for (std::size_t i = 0; i < covariates.rows(); ++i) {
    for (std::size_t j = 0; j < covariates.cols(); ++j) {
      if (!std::isfinite(covariates(i, j))) {
        throw ValidationError("covariate (" + std::to_string(i) + ", " +
                              std::to_string(j) + ") is not finite");
      }
    }
  }

  if (candidate_names.empty()) {
    for (int c = 0; c < n_candidates; ++c) {
      candidate_names.push_back("candidate_" + std::to_string(c + 1));
    }
  } else if (candidate_names.size() != static_cast<std::size_t>(n_candidates)) {
    throw ValidationError("candidate name count (" +
                          std::to_string(candidate_names.size()) +
                          ") does not match n_candidates (" +
                          std::to_string(n_candidates) + ")");
  }

  if (covariate_names.empty()) {
    for (std::size_t j = 0; j < covariates.cols(); ++j) {
      covariate_names.push_back("x" + std::to_string(j + 1));
    }
  } else if (covariate_names.size() != covariates.cols()) {
    throw ValidationError("covariate name count (" +
                          std::to_string(covariate_names.size()) +
                          ") does not match covariate columns (" +
                          std::to_string(covariates.cols()) + ")");
  }

  Dataset d;
  d.ballots = std::move(ballots);
  d.covariates = std::move(covariates);
  d.candidate_names = std::move(candidate_names);
  d.covariate_names = std::move(covariate_names);
  return d;
}

Standardization standardize_covariates(Matrix& raw,
                                       std::span<const std::string> names) {
  Standardization s;
  s.min.resize(raw.cols());
  s.range.resize(raw.cols());
  for (std::size_t j = 0; j < raw.cols(); ++j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < raw.rows(); ++i) {
      double v = raw(i, j);
      if (!std::isfinite(v)) {
        std::string col = j < names.size() ? names[j] : std::to_string(j);
        throw ValidationError("covariate column " + col +
                              " has a non-finite value in row " +
                              std::to_string(i));
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    s.min[j] = lo;
    s.range[j] = hi - lo;
    for (std::size_t i = 0; i < raw.rows(); ++i) {
      raw(i, j) = s.apply(j, raw(i, j));
    }
  }
  return s;
}

std::vector<int> unranked_candidates(const Ballot& ballot, int n_candidates) {
  std::vector<char> seen(static_cast<std::size_t>(n_candidates));
  for (int c : ballot.ranking) seen[static_cast<std::size_t>(c)] = 1;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_candidates) - ballot.ranking.size());
  for (int c = 0; c < n_candidates; ++c) {
    if (!seen[static_cast<std::size_t>(c)]) out.push_back(c);
  }
  return out;
}

}  // namespace rankmoe
