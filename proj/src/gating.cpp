#include "rankmoe/gating.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rankmoe {

std::vector<double> gating_probs(const GatingParams& params,
                                 std::span<const double> w) {
  const std::size_t K = params.coef.rows();
  std::vector<double> eta(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto row = params.coef.row(k);
    double v = row[0];
    for (std::size_t j = 0; j < w.size(); ++j) v += row[j + 1] * w[j];
    eta[k] = v;
  }
  // Shift by the max before exponentiating so large coefficients cannot
  // overflow.
  double m = *std::max_element(eta.begin(), eta.end());
  double total = 0.0;
  for (double& e : eta) {
    e = std::exp(e - m);
    total += e;
  }
  for (double& e : eta) e /= total;
  return eta;
}

double gating_log_odds(const GatingParams& params, std::span<const double> w,
                       int k) {
  auto row = params.coef.row(static_cast<std::size_t>(k));
  double v = row[0];
  for (std::size_t j = 0; j < w.size(); ++j) v += row[j + 1] * w[j];
  return v;
}

void validate_gating(const GatingParams& params) {
  if (params.coef.rows() == 0 || params.coef.cols() == 0) {
    throw ValidationError("gating coefficient matrix is empty");
  }
  for (std::size_t j = 0; j < params.coef.cols(); ++j) {
    if (params.coef(0, j) != 0.0) {
      throw ValidationError("gating reference row must be zero, entry " +
                            std::to_string(j) + " is " +
                            std::to_string(params.coef(0, j)));
    }
  }
  for (std::size_t k = 0; k < params.coef.rows(); ++k) {
    for (std::size_t j = 0; j < params.coef.cols(); ++j) {
      if (!std::isfinite(params.coef(k, j))) {
        throw ValidationError("gating coefficient (" + std::to_string(k) +
                              ", " + std::to_string(j) + ") is not finite");
      }
    }
  }
}

}  // namespace rankmoe
