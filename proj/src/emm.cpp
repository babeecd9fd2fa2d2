#include "rankmoe/emm.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <utility>

#include "rankmoe/rng.hpp"

namespace rankmoe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Parameters closer than this to a constraint boundary are treated as pinned
// when building the curvature-based uncertainty estimates.
constexpr double kBoundaryTol = 1e-9;

double floorp(double p) { return std::max(p, kSupportFloor); }

void check_dims(const Dataset& data, const MoEParams& params) {
  const std::size_t N = data.n_candidates();
  const std::size_t L = data.covariates.cols();
  if (params.support.cols() != N) {
    throw ValidationError("support has " + std::to_string(params.support.cols()) +
                          " candidates, dataset has " + std::to_string(N));
  }
  if (params.dampening.size() != N) {
    throw ValidationError("dampening length " +
                          std::to_string(params.dampening.size()) +
                          " does not match candidate count " + std::to_string(N));
  }
  if (params.gating.coef.rows() != params.support.rows()) {
    throw ValidationError("gating rows " +
                          std::to_string(params.gating.coef.rows()) +
                          " do not match component count " +
                          std::to_string(params.support.rows()));
  }
  if (params.gating.coef.cols() != L + 1) {
    throw ValidationError("gating columns " +
                          std::to_string(params.gating.coef.cols()) +
                          " do not match covariate count + 1 = " +
                          std::to_string(L + 1));
  }
}

void check_resp(const Dataset& data, const Responsibilities& z, std::size_t K) {
  if (z.rows() != data.ballots.size() || z.cols() != K) {
    throw ValidationError("responsibilities are " + std::to_string(z.rows()) +
                          " x " + std::to_string(z.cols()) + ", expected " +
                          std::to_string(data.ballots.size()) + " x " +
                          std::to_string(K));
  }
}

// Per-iteration lookup tables so the inner loops over voters never call pow
// or log: floored support, its log, and its alpha[t]-th power per stage.
struct Tables {
  Matrix pf;               // K x N (floored support)
  Matrix logp;             // K x N
  std::vector<Matrix> pw;  // per stage t: K x N, pf^alpha[t]
};

Tables build_tables(const Matrix& support, std::span<const double> alpha) {
  const std::size_t K = support.rows();
  const std::size_t N = support.cols();
  Tables t;
  t.pf = Matrix(K, N);
  t.logp = Matrix(K, N);
  t.pw.assign(N, Matrix(K, N));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < N; ++j) {
      double p = floorp(support(k, j));
      t.pf(k, j) = p;
      t.logp(k, j) = std::log(p);
    }
  }
  for (std::size_t s = 0; s < N; ++s) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < N; ++j) {
        t.pw[s](k, j) = std::pow(t.pf(k, j), alpha[s]);
      }
    }
  }
  return t;
}

// Log density of one ballot under component k using the tables. `active` is
// caller-provided scratch of size N.
double ballot_log_density(const Ballot& b, std::size_t k, const Tables& T,
                          std::span<const double> alpha,
                          std::vector<char>& active) {
  const std::size_t N = T.pf.cols();
  std::fill(active.begin(), active.end(), 1);
  double lp = 0.0;
  for (std::size_t t = 0; t < b.ranking.size(); ++t) {
    const int c = b.ranking[t];
    const auto pw = T.pw[t].row(k);
    double S = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
      if (active[s]) S += pw[s];
    }
    lp += alpha[t] * T.logp(k, static_cast<std::size_t>(c)) - std::log(S);
    active[static_cast<std::size_t>(c)] = 0;
  }
  return lp;
}

Matrix logprior_from_gating(const Dataset& data, const GatingParams& gating) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = gating.coef.rows();
  Matrix lp(M, K);
  std::vector<double> eta(K);
  for (std::size_t i = 0; i < M; ++i) {
    auto w = data.covariates.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      auto row = gating.coef.row(k);
      double v = row[0];
      for (std::size_t j = 0; j < w.size(); ++j) v += row[j + 1] * w[j];
      eta[k] = v;
      m = std::max(m, v);
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += std::exp(eta[k] - m);
    double lse = m + std::log(acc);
    for (std::size_t k = 0; k < K; ++k) lp(i, k) = eta[k] - lse;
  }
  return lp;
}

Matrix logprior_from_mixing(std::size_t M, std::span<const double> mixing) {
  const std::size_t K = mixing.size();
  Matrix lp(M, K);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      lp(i, k) = std::log(std::max(mixing[k], 1e-300));
    }
  }
  return lp;
}

// Shared E-step core: fills z with posterior membership probabilities and
// returns the observed log likelihood.
double e_step_core(const Dataset& data, const Matrix& support,
                   std::span<const double> alpha, const Matrix& logprior,
                   Responsibilities& z) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = support.rows();
  const std::size_t N = support.cols();
  Tables T = build_tables(support, alpha);
  z = Matrix(M, K);
  std::vector<char> active(N);
  std::vector<double> lp(K);
  double loglik = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      lp[k] = logprior(i, k) +
              ballot_log_density(data.ballots[i], k, T, alpha, active);
    }
    double m = *std::max_element(lp.begin(), lp.end());
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double e = std::exp(lp[k] - m);
      z(i, k) = e;
      acc += e;
    }
    for (std::size_t k = 0; k < K; ++k) z(i, k) /= acc;
    loglik += m + std::log(acc);
  }
  return loglik;
}

double fast_loglik(const Dataset& data, const MoEParams& params) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = params.n_components();
  const std::size_t N = params.n_candidates();
  Tables T = build_tables(params.support, params.dampening);
  Matrix logprior = logprior_from_gating(data, params.gating);
  std::vector<char> active(N);
  std::vector<double> lp(K);
  double loglik = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      lp[k] = logprior(i, k) + ballot_log_density(data.ballots[i], k, T,
                                                  params.dampening, active);
    }
    double m = *std::max_element(lp.begin(), lp.end());
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += std::exp(lp[k] - m);
    loglik += m + std::log(acc);
  }
  return loglik;
}

std::vector<double> colmeans(const Responsibilities& z) {
  std::vector<double> out(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t k = 0; k < z.cols(); ++k) out[k] += z(i, k);
  }
  for (double& v : out) v /= static_cast<double>(z.rows());
  return out;
}

// One multiplicative fixed-point update of every support row: accumulate the
// chosen-candidate weights and the normalizer gradients, divide, normalize,
// floor.
Matrix support_step(const Dataset& data, const Responsibilities& z,
                    const Matrix& support, std::span<const double> alpha) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = support.rows();
  const std::size_t N = support.cols();

  for (std::size_t k = 0; k < K; ++k) {
    double colsum = 0.0;
    for (std::size_t i = 0; i < M; ++i) colsum += z(i, k);
    if (colsum <= 1e-12) {
      throw DegenerateComponentError(
          "component " + std::to_string(k + 1) +
              " lost all posterior mass during fitting",
          static_cast<int>(k));
    }
  }

  Tables T = build_tables(support, alpha);
  Matrix omega(K, N, 0.0);
  Matrix D(K, N, 0.0);
  std::vector<char> active(N);
  for (std::size_t i = 0; i < M; ++i) {
    const auto& r = data.ballots[i].ranking;
    std::fill(active.begin(), active.end(), 1);
    for (std::size_t t = 0; t < r.size(); ++t) {
      const double a = alpha[t];
      const std::size_t c = static_cast<std::size_t>(r[t]);
      if (a > 0.0) {
        for (std::size_t k = 0; k < K; ++k) {
          const double zik = z(i, k);
          const auto pw = T.pw[t].row(k);
          const auto pf = T.pf.row(k);
          double S = 0.0;
          for (std::size_t s = 0; s < N; ++s) {
            if (active[s]) S += pw[s];
          }
          omega(k, c) += zik * a;
          const double coef = zik * a / S;
          for (std::size_t s = 0; s < N; ++s) {
            if (active[s]) D(k, s) += coef * pw[s] / pf[s];
          }
        }
      }
      active[c] = 0;
    }
  }

  Matrix out(K, N);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      double p = D(k, j) > 0.0 ? omega(k, j) / D(k, j) : 0.0;
      out(k, j) = p;
      sum += p;
    }
    if (sum <= 0.0) {
      throw DegenerateComponentError(
          "component " + std::to_string(k + 1) +
              " received no ranked choices with positive dampening",
          static_cast<int>(k));
    }
    for (std::size_t j = 0; j < N; ++j) out(k, j) /= sum;
    // Floor and renormalize so every entry stays strictly positive.
    double fsum = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      out(k, j) = floorp(out(k, j));
      fsum += out(k, j);
    }
    for (std::size_t j = 0; j < N; ++j) out(k, j) /= fsum;
  }
  return out;
}

DampeningUpdate dampening_step(const Dataset& data, const Responsibilities& z,
                               const Matrix& support,
                               std::span<const double> alpha) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = support.rows();
  const std::size_t N = support.cols();
  DampeningUpdate upd;
  upd.dampening.assign(alpha.begin(), alpha.end());
  upd.unidentified.assign(N, 0);
  if (N <= 2) return upd;  // no interior stages

  Tables T = build_tables(support, alpha);
  std::vector<double> A(N, 0.0), C(N, 0.0);
  std::vector<char> active(N);
  for (std::size_t i = 0; i < M; ++i) {
    const auto& r = data.ballots[i].ranking;
    std::fill(active.begin(), active.end(), 1);
    for (std::size_t t = 0; t < r.size(); ++t) {
      const std::size_t c = static_cast<std::size_t>(r[t]);
      if (t >= 1 && t <= N - 2) {
        for (std::size_t k = 0; k < K; ++k) {
          const double zik = z(i, k);
          const auto pw = T.pw[t].row(k);
          const auto lg = T.logp.row(k);
          double S = 0.0, plog = 0.0, log2 = 0.0;
          for (std::size_t s = 0; s < N; ++s) {
            if (!active[s]) continue;
            S += pw[s];
            plog += pw[s] * lg[s];
            log2 += lg[s] * lg[s];
          }
          A[t] += zik * (lg[c] - plog / S);
          C[t] += zik * log2 / S;
        }
      }
      active[c] = 0;
    }
  }
  for (std::size_t t = 1; t + 1 < N; ++t) {
    if (C[t] <= 0.0) {
      upd.unidentified[t] = 1;  // no ballot reaches this stage
      continue;
    }
    upd.dampening[t] = std::clamp(alpha[t] + A[t] / C[t], 0.0, 1.0);
  }
  return upd;
}

// The gating ascent's fixed curvature bound: solves against
// A = 1/4 sum_i w~_i w~_i^T, factorized once and reused.
struct GatingWorkspace {
  Eigen::MatrixXd A;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;

  Eigen::VectorXd solve(const Eigen::VectorXd& g) const {
    return es.eigenvectors() *
           (es.eigenvalues().cwiseInverse().asDiagonal() *
            (es.eigenvectors().transpose() * g));
  }
};

GatingWorkspace build_workspace(const Dataset& data) {
  const std::size_t M = data.ballots.size();
  const std::size_t d = data.covariates.cols() + 1;
  GatingWorkspace ws;
  ws.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                               static_cast<Eigen::Index>(d));
  Eigen::VectorXd w(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < M; ++i) {
    w(0) = 1.0;
    auto row = data.covariates.row(i);
    for (std::size_t j = 0; j + 1 < d; ++j) w(static_cast<Eigen::Index>(j + 1)) = row[j];
    ws.A.noalias() += w * w.transpose();
  }
  ws.A *= 0.25;
  ws.es.compute(ws.A);
  const auto& ev = ws.es.eigenvalues();
  double lmax = ev(ev.size() - 1);
  double lmin = ev(0);
  if (lmin <= 1e-12 * std::max(lmax, 1e-300)) {
    std::vector<double> dir(d);
    for (std::size_t j = 0; j < d; ++j) {
      dir[j] = ws.es.eigenvectors()(static_cast<Eigen::Index>(j), 0);
    }
    throw SingularGatingError(
        "gating curvature matrix is rank deficient (collinear covariate "
        "columns); consider dropping a covariate",
        std::move(dir));
  }
  return ws;
}

// One ascent pass over the non-reference gating rows. Membership
// probabilities are refreshed after each row so every row step ascends the
// current objective.
GatingParams gating_pass(const Dataset& data, const Responsibilities& z,
                         GatingParams gating, const GatingWorkspace& ws) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = gating.coef.rows();
  const std::size_t d = gating.coef.cols();
  if (K < 2) return gating;

  Matrix eta(M, K);
  for (std::size_t i = 0; i < M; ++i) {
    auto w = data.covariates.row(i);
    for (std::size_t k = 0; k < K; ++k) {
      auto row = gating.coef.row(k);
      double v = row[0];
      for (std::size_t j = 0; j < w.size(); ++j) v += row[j + 1] * w[j];
      eta(i, k) = v;
    }
  }

  Eigen::VectorXd g(static_cast<Eigen::Index>(d));
  for (std::size_t k = 1; k < K; ++k) {
    g.setZero();
    for (std::size_t i = 0; i < M; ++i) {
      auto e = eta.row(i);
      double m = *std::max_element(e.begin(), e.end());
      double acc = 0.0;
      for (std::size_t k2 = 0; k2 < K; ++k2) acc += std::exp(e[k2] - m);
      double pik = std::exp(e[k] - m) / acc;
      double resid = z(i, k) - pik;
      g(0) += resid;
      auto w = data.covariates.row(i);
      for (std::size_t j = 0; j < w.size(); ++j) {
        g(static_cast<Eigen::Index>(j + 1)) += resid * w[j];
      }
    }
    Eigen::VectorXd delta = ws.solve(g);
    auto row = gating.coef.row(k);
    for (std::size_t j = 0; j < d; ++j) row[j] += delta(static_cast<Eigen::Index>(j));
    for (std::size_t i = 0; i < M; ++i) {
      auto w = data.covariates.row(i);
      double v = row[0];
      for (std::size_t j = 0; j < w.size(); ++j) v += row[j + 1] * w[j];
      eta(i, k) = v;
    }
  }
  return gating;
}

}  // namespace

Responsibilities e_step(const Dataset& data, const MoEParams& params) {
  check_dims(data, params);
  Matrix logprior = logprior_from_gating(data, params.gating);
  Responsibilities z;
  e_step_core(data, params.support, params.dampening, logprior, z);
  return z;
}

double q_function(const Dataset& data, const Responsibilities& z,
                  const MoEParams& params) {
  check_dims(data, params);
  check_resp(data, z, params.n_components());
  const std::size_t M = data.ballots.size();
  const std::size_t K = params.n_components();
  const std::size_t N = params.n_candidates();
  Tables T = build_tables(params.support, params.dampening);
  Matrix logprior = logprior_from_gating(data, params.gating);
  std::vector<char> active(N);
  double q = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      q += z(i, k) * (logprior(i, k) +
                      ballot_log_density(data.ballots[i], k, T,
                                         params.dampening, active));
    }
  }
  return q;
}

Matrix m_step_support(const Dataset& data, const Responsibilities& z,
                      const MoEParams& params) {
  check_dims(data, params);
  check_resp(data, z, params.n_components());
  return support_step(data, z, params.support, params.dampening);
}

DampeningUpdate m_step_dampening(const Dataset& data, const Responsibilities& z,
                                 const MoEParams& params) {
  check_dims(data, params);
  check_resp(data, z, params.n_components());
  return dampening_step(data, z, params.support, params.dampening);
}

GatingParams m_step_gating(const Dataset& data, const Responsibilities& z,
                           const GatingParams& gating) {
  check_resp(data, z, gating.coef.rows());
  if (gating.coef.cols() != data.covariates.cols() + 1) {
    throw ValidationError("gating columns " + std::to_string(gating.coef.cols()) +
                          " do not match covariate count + 1 = " +
                          std::to_string(data.covariates.cols() + 1));
  }
  if (gating.coef.rows() < 2) return gating;  // nothing free to update
  GatingWorkspace ws = build_workspace(data);
  return gating_pass(data, z, gating, ws);
}

bool aitken_converged(std::span<const double> history, double tol) {
  if (history.size() < 3) {
    throw ValidationError("convergence test needs at least 3 history entries, got " +
                          std::to_string(history.size()));
  }
  const double l1 = history[history.size() - 3];
  const double l2 = history[history.size() - 2];
  const double l3 = history[history.size() - 1];
  if (l2 == l1) return true;  // exactly flat
  const double c = (l3 - l2) / (l2 - l1);
  if (c >= 1.0) return false;  // not contracting; projected limit undefined
  const double linf = l2 + (l3 - l2) / (1.0 - c);
  return std::abs(linf - l2) < tol;
}

double support_surrogate(const Dataset& data, const Responsibilities& z,
                         const MoEParams& ref, const Matrix& support_new) {
  check_dims(data, ref);
  check_resp(data, z, ref.n_components());
  if (support_new.rows() != ref.support.rows() ||
      support_new.cols() != ref.support.cols()) {
    throw ValidationError("surrogate support has the wrong shape");
  }
  const std::size_t M = data.ballots.size();
  const std::size_t K = ref.n_components();
  const std::size_t N = ref.n_candidates();
  const auto& alpha = ref.dampening;
  Tables T = build_tables(ref.support, alpha);
  Matrix logprior = logprior_from_gating(data, ref.gating);

  double val = 0.0;
  std::vector<char> active(N);
  for (std::size_t i = 0; i < M; ++i) {
    const auto& r = data.ballots[i].ranking;
    for (std::size_t k = 0; k < K; ++k) {
      const double zik = z(i, k);
      double term = logprior(i, k);
      std::fill(active.begin(), active.end(), 1);
      for (std::size_t t = 0; t < r.size(); ++t) {
        const double a = alpha[t];
        const std::size_t c = static_cast<std::size_t>(r[t]);
        const auto pw = T.pw[t].row(k);
        const auto pf = T.pf.row(k);
        double S = 0.0;
        for (std::size_t s = 0; s < N; ++s) {
          if (active[s]) S += pw[s];
        }
        // Exact in the chosen candidate's log weight; the normalizer is
        // replaced by its tangent bound at the reference point.
        double lin = 0.0;
        if (a > 0.0) {
          for (std::size_t s = 0; s < N; ++s) {
            if (!active[s]) continue;
            lin += a * (pw[s] / pf[s]) * (floorp(support_new(k, s)) - pf[s]);
          }
        }
        term += a * std::log(floorp(support_new(k, c))) - std::log(S) - lin / S;
        active[c] = 0;
      }
      val += zik * term;
    }
  }
  return val;
}

double dampening_surrogate(const Dataset& data, const Responsibilities& z,
                           const MoEParams& ref,
                           std::span<const double> dampening_new) {
  check_dims(data, ref);
  check_resp(data, z, ref.n_components());
  const std::size_t N = ref.n_candidates();
  if (dampening_new.size() != N) {
    throw ValidationError("surrogate dampening has the wrong length");
  }
  const std::size_t M = data.ballots.size();
  const std::size_t K = ref.n_components();
  const auto& alpha = ref.dampening;
  Tables T = build_tables(ref.support, alpha);
  Matrix logprior = logprior_from_gating(data, ref.gating);

  double val = 0.0;
  std::vector<char> active(N);
  for (std::size_t i = 0; i < M; ++i) {
    const auto& r = data.ballots[i].ranking;
    for (std::size_t k = 0; k < K; ++k) {
      const double zik = z(i, k);
      double term = logprior(i, k);
      std::fill(active.begin(), active.end(), 1);
      for (std::size_t t = 0; t < r.size(); ++t) {
        const std::size_t c = static_cast<std::size_t>(r[t]);
        const double da = dampening_new[t] - alpha[t];
        const auto pw = T.pw[t].row(k);
        const auto lg = T.logp.row(k);
        double S = 0.0, plog = 0.0, log2 = 0.0;
        for (std::size_t s = 0; s < N; ++s) {
          if (!active[s]) continue;
          S += pw[s];
          plog += pw[s] * lg[s];
          log2 += lg[s] * lg[s];
        }
        // Quadratic lower bound in the stage weight around the reference.
        term += alpha[t] * lg[c] + lg[c] * da - std::log(S) -
                (plog * da + 0.5 * da * da * log2) / S;
        active[c] = 0;
      }
      val += zik * term;
    }
  }
  return val;
}

double gating_surrogate(const Dataset& data, const Responsibilities& z,
                        const MoEParams& ref, int k,
                        std::span<const double> row_new) {
  check_dims(data, ref);
  check_resp(data, z, ref.n_components());
  const std::size_t K = ref.n_components();
  const std::size_t d = ref.gating.coef.cols();
  if (k < 1 || static_cast<std::size_t>(k) >= K) {
    throw ValidationError("gating surrogate row must be a non-reference row");
  }
  if (row_new.size() != d) {
    throw ValidationError("gating surrogate row has the wrong length");
  }
  const std::size_t M = data.ballots.size();
  const std::size_t ks = static_cast<std::size_t>(k);

  // Gradient of the expected membership log likelihood in row k, and the
  // shared quadratic curvature bound.
  std::vector<double> g(d, 0.0);
  Matrix A(d, d, 0.0);
  std::vector<double> eta(K), wtilde(d);
  for (std::size_t i = 0; i < M; ++i) {
    auto w = data.covariates.row(i);
    wtilde[0] = 1.0;
    for (std::size_t j = 0; j + 1 < d; ++j) wtilde[j + 1] = w[j];
    for (std::size_t k2 = 0; k2 < K; ++k2) {
      auto row = ref.gating.coef.row(k2);
      double v = 0.0;
      for (std::size_t j = 0; j < d; ++j) v += row[j] * wtilde[j];
      eta[k2] = v;
    }
    double m = *std::max_element(eta.begin(), eta.end());
    double acc = 0.0;
    for (std::size_t k2 = 0; k2 < K; ++k2) acc += std::exp(eta[k2] - m);
    double pik = std::exp(eta[ks] - m) / acc;
    double resid = z(i, ks) - pik;
    for (std::size_t a = 0; a < d; ++a) {
      g[a] += resid * wtilde[a];
      for (std::size_t b = 0; b < d; ++b) {
        A(a, b) += 0.25 * wtilde[a] * wtilde[b];
      }
    }
  }

  double val = q_function(data, z, ref);
  auto row_ref = ref.gating.coef.row(ks);
  for (std::size_t a = 0; a < d; ++a) {
    const double da = row_new[a] - row_ref[a];
    val += g[a] * da;
    for (std::size_t b = 0; b < d; ++b) {
      val -= 0.5 * da * A(a, b) * (row_new[b] - row_ref[b]);
    }
  }
  return val;
}

namespace {

// Reorders components into the canonical reporting order: descending
// marginal mixing, ties broken by the first support coordinate, then by
// original index. The gating rows are re-based so the new first row is zero.
void canonicalize(FitResult& res) {
  const std::size_t K = res.params.n_components();
  if (K < 2) return;
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (res.marginal_mixing[a] != res.marginal_mixing[b]) {
                       return res.marginal_mixing[a] > res.marginal_mixing[b];
                     }
                     return res.params.support(a, 0) < res.params.support(b, 0);
                   });
  bool identity = true;
  for (std::size_t k = 0; k < K; ++k) {
    if (order[k] != k) identity = false;
  }
  if (identity) return;

  const std::size_t N = res.params.n_candidates();
  const std::size_t d = res.params.gating.coef.cols();
  Matrix support(K, N);
  Matrix beta(K, d);
  std::vector<double> mixing(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < N; ++j) support(k, j) = res.params.support(order[k], j);
    for (std::size_t j = 0; j < d; ++j) {
      beta(k, j) = res.params.gating.coef(order[k], j) -
                   res.params.gating.coef(order[0], j);
    }
    mixing[k] = res.marginal_mixing[order[k]];
  }
  Matrix z(res.responsibilities.rows(), K);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t k = 0; k < K; ++k) z(i, k) = res.responsibilities(i, order[k]);
  }
  res.params.support = std::move(support);
  res.params.gating.coef = std::move(beta);
  res.marginal_mixing = std::move(mixing);
  res.responsibilities = std::move(z);
}

StandardErrors nan_errors(std::size_t K, std::size_t N, std::size_t d) {
  StandardErrors se;
  se.support = Matrix(K, N, kNaN);
  se.dampening.assign(N, kNaN);
  se.gating = Matrix(K, d, kNaN);
  return se;
}

struct StartResult {
  MoEParams params;
  Responsibilities z;
  std::vector<double> trace;
  std::size_t warmup_entries = 0;
  double final_loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

StartResult run_start(const Dataset& data, int n_components,
                      const FitConfig& config, std::uint64_t seed) {
  const std::size_t M = data.ballots.size();
  const std::size_t K = static_cast<std::size_t>(n_components);
  const std::size_t N = data.n_candidates();
  const std::size_t L = data.covariates.cols();
  const bool pl = config.fix_plackett_luce;

  StartResult out;
  std::vector<double> main_trace;

  Matrix support;
  std::vector<double> alpha;
  GatingParams gating;
  Responsibilities z;

  if (config.init.has_value()) {
    const MoEParams& init = *config.init;
    check_dims(data, init);
    if (init.n_components() != K) {
      throw ValidationError("initial parameters have " +
                            std::to_string(init.n_components()) +
                            " components, fit was asked for " +
                            std::to_string(K));
    }
    support = init.support;
    alpha = init.dampening;
    gating = init.gating;
  } else {
    Rng rng(seed);
    // Soft random assignment: each row an even-handed random point of the
    // simplex, concentrated enough that no component starts empty.
    z = Matrix(M, K);
    for (std::size_t i = 0; i < M; ++i) {
      double rowsum = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        double g = 0.0;
        for (int rep = 0; rep < 5; ++rep) g += rng.exponential();
        z(i, k) = g;
        rowsum += g;
      }
      for (std::size_t k = 0; k < K; ++k) z(i, k) /= rowsum;
    }

    support = Matrix(K, N, 1.0 / static_cast<double>(N));
    alpha.assign(N, 1.0);
    if (!pl) alpha[N - 1] = 0.0;

    // Phase (a): plain-mixture cycles (component weights shared by all
    // voters), starting from the random soft assignment.
    std::vector<double> mixing = colmeans(z);
    for (int h = 0; h < config.mixture_warmup_iters; ++h) {
      support = support_step(data, z, support, alpha);
      if (!pl) {
        alpha = dampening_step(data, z, support, alpha).dampening;
      }
      mixing = colmeans(z);
      Matrix logprior = logprior_from_mixing(M, mixing);
      double ll = e_step_core(data, support, alpha, logprior, z);
      out.trace.push_back(ll);
    }

    // Phase (b): hand the mixing weights to the gating intercepts (the
    // membership probabilities are unchanged by this reparameterization),
    // then ascend the gating objective against the frozen assignment.
    gating = GatingParams(K, L + 1);
    for (std::size_t k = 0; k < K; ++k) {
      gating.coef(k, 0) = std::log(std::max(mixing[k], 1e-300) /
                                   std::max(mixing[0], 1e-300));
    }
  }

  std::optional<GatingWorkspace> ws;
  if (K > 1 && (config.gating_warmup_steps > 0 || config.max_emm_iters > 0)) {
    ws.emplace(build_workspace(data));
  }
  if (!config.init.has_value() && K > 1) {
    for (int s = 0; s < config.gating_warmup_steps; ++s) {
      gating = gating_pass(data, z, std::move(gating), *ws);
    }
  }

  // Phase (c): full cycles with the covariate-aware membership model.
  Matrix logprior = logprior_from_gating(data, gating);
  double ll = e_step_core(data, support, alpha, logprior, z);
  out.trace.push_back(ll);
  main_trace.push_back(ll);

  for (int h = 0; h < config.max_emm_iters; ++h) {
    if (main_trace.size() >= 3 &&
        aitken_converged(main_trace, config.aitken_tol)) {
      out.converged = true;
      break;
    }
    for (int s = 0; s < config.mm_inner_iters; ++s) {
      support = support_step(data, z, support, alpha);
    }
    if (!pl) {
      for (int s = 0; s < config.mm_inner_iters; ++s) {
        alpha = dampening_step(data, z, support, alpha).dampening;
      }
    }
    if (K > 1) {
      for (int s = 0; s < config.mm_inner_iters; ++s) {
        gating = gating_pass(data, z, std::move(gating), *ws);
      }
    }
    logprior = logprior_from_gating(data, gating);
    ll = e_step_core(data, support, alpha, logprior, z);
    out.trace.push_back(ll);
    main_trace.push_back(ll);
    ++out.iterations;
  }
  if (!out.converged && main_trace.size() >= 3) {
    out.converged = aitken_converged(main_trace, config.aitken_tol);
  }

  out.params.support = std::move(support);
  out.params.dampening = std::move(alpha);
  out.params.gating = std::move(gating);
  out.z = std::move(z);
  out.warmup_entries = out.trace.size() - main_trace.size();
  out.final_loglik = out.trace.back();
  return out;
}

}  // namespace

FitResult fit(const Dataset& data, int n_components, const FitConfig& config) {
  if (n_components < 1) {
    throw ValidationError("component count must be at least 1, got " +
                          std::to_string(n_components));
  }
  if (data.ballots.empty()) throw ValidationError("dataset has no ballots");
  if (data.n_candidates() < 2) {
    throw ValidationError("need at least 2 candidates to fit");
  }
  if (config.mixture_warmup_iters < 0 || config.gating_warmup_steps < 0 ||
      config.max_emm_iters < 0 || config.mm_inner_iters < 0 ||
      config.n_random_starts < 0) {
    throw ValidationError("fit configuration counts must be nonnegative");
  }
  if (!(config.aitken_tol > 0.0)) {
    throw ValidationError("convergence tolerance must be positive");
  }

  const std::size_t K = static_cast<std::size_t>(n_components);
  const std::size_t N = data.n_candidates();
  const std::size_t d = data.covariates.cols() + 1;

  struct Outcome {
    bool done = false;
    bool failed = false;
    std::string message;
    std::exception_ptr fatal;  // non-degenerate errors propagate
    StartResult res;
  };

  const int n_starts = config.init.has_value() ? 1
                       : std::max(1, config.n_random_starts);
  std::vector<Outcome> outcomes(static_cast<std::size_t>(n_starts));

  auto run_one = [&](int r) {
    Outcome& o = outcomes[static_cast<std::size_t>(r)];
    try {
      o.res = run_start(data, n_components, config,
                        Rng::derive(config.seed, static_cast<std::uint64_t>(r)));
      o.done = true;
    } catch (const DegenerateComponentError& e) {
      o.failed = true;
      o.message = e.what();
    } catch (...) {
      o.fatal = std::current_exception();
    }
  };

  const int threads = std::min(std::max(1, config.n_threads), n_starts);
  if (threads <= 1) {
    for (int r = 0; r < n_starts; ++r) run_one(r);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (int r = w; r < n_starts; r += threads) run_one(r);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (const auto& o : outcomes) {
    if (o.fatal) std::rethrow_exception(o.fatal);
  }

  int best = -1;
  for (int r = 0; r < n_starts; ++r) {
    const Outcome& o = outcomes[static_cast<std::size_t>(r)];
    if (!o.done) continue;
    if (best < 0 || o.res.final_loglik >
                        outcomes[static_cast<std::size_t>(best)].res.final_loglik) {
      best = r;
    }
  }
  if (best < 0) {
    // Every start collapsed; surface the last recorded failure.
    std::string msg = "all random starts failed";
    int comp = -1;
    for (const auto& o : outcomes) {
      if (o.failed) msg = o.message;
    }
    throw DegenerateComponentError(msg, comp);
  }

  StartResult& sr = outcomes[static_cast<std::size_t>(best)].res;
  FitResult result;
  result.params = std::move(sr.params);
  result.responsibilities = std::move(sr.z);
  result.loglik_trace = std::move(sr.trace);
  result.warmup_entries = sr.warmup_entries;
  result.final_loglik = sr.final_loglik;
  result.converged = sr.converged;
  result.iterations = sr.iterations;
  result.marginal_mixing = colmeans(result.responsibilities);
  canonicalize(result);

  if (config.compute_standard_errors) {
    result.standard_errors =
        standard_errors(data, result.params, config.fix_plackett_luce);
  } else {
    result.standard_errors = nan_errors(K, N, d);
  }
  return result;
}

namespace {

// Free-parameter chart for the curvature computation: per-component support
// log-ratios against the largest entry, interior dampening weights, and the
// non-reference gating rows.
struct Chart {
  struct SupportCoord {
    std::size_t k, j;
  };
  std::vector<std::size_t> base;            // per component: chart baseline
  std::vector<std::vector<char>> in_chart;  // per component: candidate included
  std::vector<SupportCoord> support_coords;
  std::vector<std::size_t> alpha_coords;  // stage indices
  struct GatingCoord {
    std::size_t k, j;
  };
  std::vector<GatingCoord> gating_coords;

  std::size_t size() const {
    return support_coords.size() + alpha_coords.size() + gating_coords.size();
  }
};

Chart build_chart(const MoEParams& params, bool plackett_luce) {
  const std::size_t K = params.n_components();
  const std::size_t N = params.n_candidates();
  const std::size_t d = params.gating.coef.cols();
  Chart ch;
  ch.base.resize(K);
  ch.in_chart.assign(K, std::vector<char>(N, 0));
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t base = 0;
    for (std::size_t j = 1; j < N; ++j) {
      if (params.support(k, j) > params.support(k, base)) base = j;
    }
    ch.base[k] = base;
    for (std::size_t j = 0; j < N; ++j) {
      if (j == base) continue;
      if (params.support(k, j) <= kBoundaryTol) continue;  // pinned at zero
      ch.in_chart[k][j] = 1;
      ch.support_coords.push_back({k, j});
    }
  }
  if (!plackett_luce) {
    for (std::size_t t = 1; t + 1 < N; ++t) {
      const double a = params.dampening[t];
      if (a <= kBoundaryTol || a >= 1.0 - kBoundaryTol) continue;  // boundary
      ch.alpha_coords.push_back(t);
    }
  }
  for (std::size_t k = 1; k < K; ++k) {
    for (std::size_t j = 0; j < d; ++j) ch.gating_coords.push_back({k, j});
  }
  return ch;
}

std::vector<double> chart_point(const Chart& ch, const MoEParams& params) {
  std::vector<double> x;
  x.reserve(ch.size());
  for (const auto& sc : ch.support_coords) {
    x.push_back(std::log(params.support(sc.k, sc.j) /
                         params.support(sc.k, ch.base[sc.k])));
  }
  for (std::size_t t : ch.alpha_coords) x.push_back(params.dampening[t]);
  for (const auto& gc : ch.gating_coords) {
    x.push_back(params.gating.coef(gc.k, gc.j));
  }
  return x;
}

MoEParams chart_params(const Chart& ch, const MoEParams& ref,
                       std::span<const double> x) {
  MoEParams p = ref;
  const std::size_t K = ref.n_components();
  const std::size_t N = ref.n_candidates();
  std::size_t idx = 0;
  // Support rows: excluded (boundary) entries keep their reference value;
  // the rest share the remaining mass through a softmax over the chart.
  std::vector<double> expv(N);
  for (std::size_t k = 0; k < K; ++k) {
    double mass = 1.0;
    for (std::size_t j = 0; j < N; ++j) {
      if (!ch.in_chart[k][j] && j != ch.base[k]) mass -= ref.support(k, j);
    }
    double acc = 1.0;  // baseline term exp(0)
    std::fill(expv.begin(), expv.end(), 0.0);
    expv[ch.base[k]] = 1.0;
    for (std::size_t c = 0; c < ch.support_coords.size(); ++c) {
      const auto& sc = ch.support_coords[c];
      if (sc.k != k) continue;
      double e = std::exp(x[c]);
      expv[sc.j] = e;
      acc += e;
    }
    for (std::size_t j = 0; j < N; ++j) {
      if (ch.in_chart[k][j] || j == ch.base[k]) {
        p.support(k, j) = mass * expv[j] / acc;
      }
    }
  }
  idx = ch.support_coords.size();
  for (std::size_t a = 0; a < ch.alpha_coords.size(); ++a) {
    p.dampening[ch.alpha_coords[a]] = x[idx + a];
  }
  idx += ch.alpha_coords.size();
  for (std::size_t g = 0; g < ch.gating_coords.size(); ++g) {
    p.gating.coef(ch.gating_coords[g].k, ch.gating_coords[g].j) = x[idx + g];
  }
  return p;
}

}  // namespace

StandardErrors standard_errors(const Dataset& data, const MoEParams& params,
                               bool plackett_luce) {
  check_dims(data, params);
  const std::size_t K = params.n_components();
  const std::size_t N = params.n_candidates();
  const std::size_t d = params.gating.coef.cols();
  StandardErrors se = nan_errors(K, N, d);

  Chart ch = build_chart(params, plackett_luce);
  const std::size_t n = ch.size();
  if (n == 0) return se;

  std::vector<double> x0 = chart_point(ch, params);
  auto f = [&](std::span<const double> x) {
    return fast_loglik(data, chart_params(ch, params, x));
  };

  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = 1e-4 * std::max(1.0, std::abs(x0[i]));

  const double f0 = f(x0);
  Eigen::MatrixXd H(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<double> xp(x0), xm(x0);
  for (std::size_t i = 0; i < n; ++i) {
    xp = x0;
    xm = x0;
    xp[i] += h[i];
    xm[i] -= h[i];
    H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
        (f(xp) - 2.0 * f0 + f(xm)) / (h[i] * h[i]);
  }
  std::vector<double> xx(x0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (int si = -1; si <= 1; si += 2) {
        for (int sj = -1; sj <= 1; sj += 2) {
          xx = x0;
          xx[i] += si * h[i];
          xx[j] += sj * h[j];
          acc += si * sj * f(xx);
        }
      }
      const double v = acc / (4.0 * h[i] * h[j]);
      H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }

  // Invert -H on the largest sub-block where it is positive definite,
  // discarding the direction of the worst violation until it is.
  std::vector<std::size_t> alive(n);
  std::iota(alive.begin(), alive.end(), 0);
  Eigen::MatrixXd cov;
  while (!alive.empty()) {
    const Eigen::Index m = static_cast<Eigen::Index>(alive.size());
    Eigen::MatrixXd sub(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) {
        sub(a, b) = -H(static_cast<Eigen::Index>(alive[static_cast<std::size_t>(a)]),
                       static_cast<Eigen::Index>(alive[static_cast<std::size_t>(b)]));
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sub);
    const double lmin = es.eigenvalues()(0);
    const double lmax = es.eigenvalues()(m - 1);
    if (lmin > 1e-10 * std::max(lmax, 1.0)) {
      cov = es.eigenvectors() *
            es.eigenvalues().cwiseInverse().asDiagonal() *
            es.eigenvectors().transpose();
      break;
    }
    // Drop the coordinate dominating the offending eigenvector.
    Eigen::Index worst = 0;
    es.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
    alive.erase(alive.begin() + worst);
  }
  if (alive.empty()) return se;

  // Positions of surviving chart coordinates.
  std::vector<std::ptrdiff_t> pos(n, -1);
  for (std::size_t a = 0; a < alive.size(); ++a) pos[alive[a]] = static_cast<std::ptrdiff_t>(a);

  // Support: map chart variances back to probability scale per component.
  for (std::size_t k = 0; k < K; ++k) {
    // Chart coordinates of this component that survived.
    std::vector<std::size_t> coords;   // index into support_coords
    for (std::size_t c = 0; c < ch.support_coords.size(); ++c) {
      if (ch.support_coords[c].k == k && pos[c] >= 0) coords.push_back(c);
    }
    if (coords.empty()) continue;
    double mass = 1.0;
    for (std::size_t j = 0; j < N; ++j) {
      if (!ch.in_chart[k][j] && j != ch.base[k]) mass -= params.support(k, j);
    }
    for (std::size_t j = 0; j < N; ++j) {
      if (!ch.in_chart[k][j] && j != ch.base[k]) continue;  // pinned: NaN
      // Check every chart coordinate of this component survived, else only
      // the dropped one stays NaN.
      bool self_dropped = false;
      for (std::size_t c = 0; c < ch.support_coords.size(); ++c) {
        if (ch.support_coords[c].k == k && ch.support_coords[c].j == j &&
            pos[c] < 0) {
          self_dropped = true;
        }
      }
      if (self_dropped) continue;
      double var = 0.0;
      for (std::size_t a : coords) {
        const double sa = params.support(k, ch.support_coords[a].j) / mass;
        const double Ja =
            params.support(k, j) * ((ch.support_coords[a].j == j ? 1.0 : 0.0) - sa);
        for (std::size_t b : coords) {
          const double sb = params.support(k, ch.support_coords[b].j) / mass;
          const double Jb =
              params.support(k, j) * ((ch.support_coords[b].j == j ? 1.0 : 0.0) - sb);
          var += Ja * cov(static_cast<Eigen::Index>(pos[a]),
                          static_cast<Eigen::Index>(pos[b])) * Jb;
        }
      }
      se.support(k, j) = var > 0.0 ? std::sqrt(var) : 0.0;
    }
  }

  const std::size_t a_off = ch.support_coords.size();
  for (std::size_t a = 0; a < ch.alpha_coords.size(); ++a) {
    if (pos[a_off + a] < 0) continue;
    const double var = cov(static_cast<Eigen::Index>(pos[a_off + a]),
                           static_cast<Eigen::Index>(pos[a_off + a]));
    se.dampening[ch.alpha_coords[a]] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  const std::size_t g_off = a_off + ch.alpha_coords.size();
  for (std::size_t g = 0; g < ch.gating_coords.size(); ++g) {
    if (pos[g_off + g] < 0) continue;
    const double var = cov(static_cast<Eigen::Index>(pos[g_off + g]),
                           static_cast<Eigen::Index>(pos[g_off + g]));
    se.gating(ch.gating_coords[g].k, ch.gating_coords[g].j) =
        var > 0.0 ? std::sqrt(var) : 0.0;
  }
  return se;
}

}  // namespace rankmoe
