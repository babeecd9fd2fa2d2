#include "rankmoe/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "rankmoe/rng.hpp"

namespace rankmoe {

double bic(double loglik, int n_params, std::size_t n_voters) {
  if (n_voters < 1) throw ValidationError("BIC needs at least one observation");
  if (n_params < 0) throw ValidationError("negative parameter count");
  return 2.0 * loglik -
         static_cast<double>(n_params) * std::log(static_cast<double>(n_voters));
}

int count_free_params(int n_components, int n_candidates, int n_covariates,
                      bool plackett_luce) {
  if (n_components < 1 || n_candidates < 2) {
    throw ValidationError("parameter count needs K >= 1 and N >= 2");
  }
  const int K = n_components;
  const int N = n_candidates;
  const int L = n_covariates;
  return K * (N - 1) + (plackett_luce ? 0 : N - 2) + (K - 1) * (L + 1);
}

namespace {

Dataset subset_dataset(const Dataset& data, std::span<const std::size_t> columns) {
  Dataset d;
  d.ballots = data.ballots;
  d.candidate_names = data.candidate_names;
  d.covariates = Matrix(data.ballots.size(), columns.size());
  for (std::size_t i = 0; i < data.ballots.size(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      d.covariates(i, j) = data.covariates(i, columns[j]);
    }
  }
  for (std::size_t j : columns) d.covariate_names.push_back(data.covariate_names[j]);
  return d;
}

std::vector<std::size_t> flatten(const std::vector<CovariateBlock>& blocks,
                                 std::span<const std::size_t> subset) {
  std::vector<std::size_t> cols;
  for (std::size_t b : subset) {
    cols.insert(cols.end(), blocks[b].columns.begin(), blocks[b].columns.end());
  }
  return cols;
}

std::uint64_t subset_mask(std::span<const std::size_t> subset) {
  std::uint64_t m = 0;
  for (std::size_t b : subset) m |= (1ULL << (b % 64));
  return m;
}

}  // namespace

std::vector<ModelScore> backward_eliminate(const Dataset& data,
                                           const std::vector<CovariateBlock>& blocks,
                                           std::span<const int> k_values,
                                           const FitConfig& config) {
  if (k_values.empty()) throw ValidationError("empty component-count range");
  if (blocks.empty()) throw ValidationError("no covariate blocks to search over");
  for (const auto& b : blocks) {
    for (std::size_t c : b.columns) {
      if (c >= data.covariates.cols()) {
        throw ValidationError("covariate block '" + b.name +
                              "' references column " + std::to_string(c) +
                              " outside the dataset");
      }
    }
  }

  struct Job {
    int K;
    std::vector<std::size_t> subset;  // block indices
  };

  std::vector<ModelScore> all;

  // Fits one level's worth of candidate models, optionally in parallel, and
  // appends the scores in job order.
  auto run_level = [&](const std::vector<Job>& jobs) -> std::size_t {
    std::vector<ModelScore> scores(jobs.size());
    auto run_job = [&](std::size_t j) {
      const Job& job = jobs[j];
      ModelScore ms;
      ms.n_components = job.K;
      for (std::size_t b : job.subset) ms.covariate_names.push_back(blocks[b].name);
      ms.columns = flatten(blocks, job.subset);
      Dataset sub = subset_dataset(data, ms.columns);
      FitConfig fc = config;
      fc.n_threads = 1;
      // Per-model seed depends only on (K, subset), not on visit order.
      fc.seed = Rng::derive(Rng::derive(config.seed, subset_mask(job.subset)),
                            static_cast<std::uint64_t>(job.K));
      try {
        auto fr = std::make_shared<FitResult>(fit(sub, job.K, fc));
        ms.loglik = fr->final_loglik;
        ms.n_params = count_free_params(job.K,
                                        static_cast<int>(data.n_candidates()),
                                        static_cast<int>(ms.columns.size()),
                                        config.fix_plackett_luce);
        ms.bic = bic(ms.loglik, ms.n_params, data.ballots.size());
        ms.fit = std::move(fr);
      } catch (const Error& e) {
        ms.failed = true;
        ms.message = e.what();
        ms.bic = -std::numeric_limits<double>::infinity();
        ms.loglik = -std::numeric_limits<double>::infinity();
      }
      scores[j] = std::move(ms);
    };

    const int threads =
        std::min<std::size_t>(std::max(1, config.n_threads), jobs.size());
    if (threads <= 1) {
      for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t j = static_cast<std::size_t>(w); j < jobs.size();
               j += static_cast<std::size_t>(threads)) {
            run_job(j);
          }
        });
      }
      for (auto& th : pool) th.join();
    }
    std::size_t first = all.size();
    for (auto& s : scores) all.push_back(std::move(s));
    return first;
  };

  // Best BIC across the K range for each distinct subset at one level.
  auto best_per_subset = [&](std::size_t first, std::size_t n_subsets,
                             std::size_t k_count) {
    std::vector<double> best(n_subsets, -std::numeric_limits<double>::infinity());
    for (std::size_t s = 0; s < n_subsets; ++s) {
      for (std::size_t k = 0; k < k_count; ++k) {
        best[s] = std::max(best[s], all[first + s * k_count + k].bic);
      }
    }
    return best;
  };

  std::vector<std::size_t> current(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) current[b] = b;

  // Level 0: the full block set.
  {
    std::vector<Job> jobs;
    for (int K : k_values) jobs.push_back({K, current});
    run_level(jobs);
  }

  // Drop one block at a time, keeping the best-scoring reduced subset.
  while (current.size() > 1) {
    std::vector<std::vector<std::size_t>> candidates;
    for (std::size_t drop = 0; drop < current.size(); ++drop) {
      std::vector<std::size_t> sub;
      for (std::size_t b = 0; b < current.size(); ++b) {
        if (b != drop) sub.push_back(current[b]);
      }
      candidates.push_back(std::move(sub));
    }
    std::vector<Job> jobs;
    for (const auto& sub : candidates) {
      for (int K : k_values) jobs.push_back({K, sub});
    }
    std::size_t first = run_level(jobs);
    auto best = best_per_subset(first, candidates.size(), k_values.size());
    std::size_t pick = 0;
    for (std::size_t s = 1; s < candidates.size(); ++s) {
      if (best[s] > best[pick]) pick = s;
    }
    current = candidates[pick];
  }

  std::stable_sort(all.begin(), all.end(), [](const ModelScore& a, const ModelScore& b) {
    if (a.bic != b.bic) return a.bic > b.bic;
    if (a.n_components != b.n_components) return a.n_components < b.n_components;
    return a.columns < b.columns;
  });
  return all;
}

}  // namespace rankmoe
