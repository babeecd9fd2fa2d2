#include "rankmoe/stv.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace rankmoe {

std::int64_t quota(std::int64_t valid_votes, int seats) {
  if (seats < 1) {
    throw ValidationError("seat count must be at least 1, got " +
                          std::to_string(seats));
  }
  if (valid_votes < 0) throw ValidationError("negative vote count");
  return valid_votes / (seats + 1) + 1;
}

namespace {

// Candidates tied at an elimination (or election) decision, resolved per
// policy. `rounds` holds the completed tallies for the prior-round
// comparison; `keep_low` selects the fewest-votes candidate (elimination)
// versus the most-votes candidate (election).
int break_tie(const std::vector<int>& tied, TieBreak policy,
              const std::vector<CountRound>& rounds, bool keep_low) {
  if (tied.size() == 1) return tied[0];
  if (policy == TieBreak::error) {
    throw TiedEliminationError(
        "candidates tied with equal totals and tie policy is 'error'", tied);
  }
  std::vector<int> pool = tied;
  if (policy == TieBreak::by_prior_rounds) {
    // Narrow the pool at the earliest prior round where totals differ.
    for (const auto& r : rounds) {
      std::int64_t extreme = r.totals[static_cast<std::size_t>(pool[0])];
      for (int c : pool) {
        std::int64_t t = r.totals[static_cast<std::size_t>(c)];
        extreme = keep_low ? std::min(extreme, t) : std::max(extreme, t);
      }
      std::vector<int> next;
      for (int c : pool) {
        if (r.totals[static_cast<std::size_t>(c)] == extreme) next.push_back(c);
      }
      pool = std::move(next);
      if (pool.size() == 1) return pool[0];
    }
  }
  return *std::min_element(pool.begin(), pool.end());
}

}  // namespace

CountResult count_election(const std::vector<Ballot>& ballots, int n_candidates,
                           const StvConfig& config) {
  if (config.seats != 1) {
    throw ValidationError("only single-seat elections are supported, got " +
                          std::to_string(config.seats) + " seats");
  }
  if (n_candidates < 1) throw ValidationError("no candidates");
  if (ballots.empty()) throw ValidationError("no ballots to count");
  const std::size_t N = static_cast<std::size_t>(n_candidates);
  for (std::size_t i = 0; i < ballots.size(); ++i) {
    for (int c : ballots[i].ranking) {
      if (c < 0 || c >= n_candidates) {
        throw ValidationError("ballot " + std::to_string(i) +
                              " references candidate " + std::to_string(c) +
                              " outside [0, " + std::to_string(n_candidates - 1) +
                              "]");
      }
    }
  }

  CountResult result;
  result.quota = quota(static_cast<std::int64_t>(ballots.size()), config.seats);

  // Each continuing candidate holds a pile of (ballot, cursor) pairs; a
  // transfer advances the cursor past non-continuing candidates. This is
  // equivalent to replaying every ballot each round but touches only the
  // ballots that actually move.
  struct Held {
    std::size_t ballot;
    std::size_t cursor;
  };
  std::vector<std::vector<Held>> piles(N);
  std::int64_t nontransferable = 0;
  std::vector<char> continuing(N, 1);

  for (std::size_t i = 0; i < ballots.size(); ++i) {
    if (ballots[i].ranking.empty()) {
      ++nontransferable;
      continue;
    }
    piles[static_cast<std::size_t>(ballots[i].ranking[0])].push_back({i, 0});
  }

  int n_continuing = n_candidates;
  for (int round_no = 1;; ++round_no) {
    CountRound round;
    round.index = round_no;
    round.totals.assign(N, 0);
    for (std::size_t c = 0; c < N; ++c) {
      round.totals[c] = static_cast<std::int64_t>(piles[c].size());
    }
    round.nontransferable = nontransferable;

    // Quota check: seat the leader among those at or over quota.
    std::vector<int> over;
    for (std::size_t c = 0; c < N; ++c) {
      if (continuing[c] && round.totals[c] >= result.quota) {
        over.push_back(static_cast<int>(c));
      }
    }
    if (!over.empty()) {
      std::int64_t top = 0;
      for (int c : over) top = std::max(top, round.totals[static_cast<std::size_t>(c)]);
      std::vector<int> leaders;
      for (int c : over) {
        if (round.totals[static_cast<std::size_t>(c)] == top) leaders.push_back(c);
      }
      int winner = break_tie(leaders, config.tiebreak, result.rounds, false);
      round.elected.push_back(winner);
      result.rounds.push_back(std::move(round));
      result.winner = winner;
      return result;
    }

    // Last remaining candidate is seated without reaching quota.
    if (n_continuing == 1) {
      for (std::size_t c = 0; c < N; ++c) {
        if (continuing[c]) {
          round.elected.push_back(static_cast<int>(c));
          result.winner = static_cast<int>(c);
        }
      }
      result.rounds.push_back(std::move(round));
      return result;
    }

    // Elimination: sort continuing candidates by (total, index) ascending.
    std::vector<int> order;
    for (std::size_t c = 0; c < N; ++c) {
      if (continuing[c]) order.push_back(static_cast<int>(c));
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      auto ta = round.totals[static_cast<std::size_t>(a)];
      auto tb = round.totals[static_cast<std::size_t>(b)];
      if (ta != tb) return ta < tb;
      return a < b;
    });

    std::vector<int> batch;
    if (config.batch_elimination) {
      // Largest trailing prefix whose combined total is below the next
      // candidate's total. Such a prefix can never split a tied group.
      std::int64_t prefix = 0;
      std::vector<std::int64_t> sums(order.size());
      for (std::size_t m = 0; m < order.size(); ++m) {
        prefix += round.totals[static_cast<std::size_t>(order[m])];
        sums[m] = prefix;
      }
      for (std::size_t m = order.size() - 1; m >= 1; --m) {
        if (sums[m - 1] < round.totals[static_cast<std::size_t>(order[m])]) {
          batch.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
          break;
        }
      }
    }
    if (batch.empty()) {
      // Single elimination of the lowest candidate; ties resolved by policy.
      std::int64_t low = round.totals[static_cast<std::size_t>(order[0])];
      std::vector<int> tied;
      for (int c : order) {
        if (round.totals[static_cast<std::size_t>(c)] == low) tied.push_back(c);
      }
      batch.push_back(break_tie(tied, config.tiebreak, result.rounds, true));
    }

    for (int c : batch) {
      continuing[static_cast<std::size_t>(c)] = 0;
      --n_continuing;
      round.eliminated.push_back(c);
    }

    // Transfer each held ballot to its next continuing preference.
    for (int c : batch) {
      auto pile = std::move(piles[static_cast<std::size_t>(c)]);
      piles[static_cast<std::size_t>(c)].clear();
      for (const Held& h : pile) {
        const auto& r = ballots[h.ballot].ranking;
        std::size_t cur = h.cursor + 1;
        while (cur < r.size() && !continuing[static_cast<std::size_t>(r[cur])]) {
          ++cur;
        }
        if (cur < r.size()) {
          piles[static_cast<std::size_t>(r[cur])].push_back({h.ballot, cur});
        } else {
          ++nontransferable;
        }
      }
    }

    result.rounds.push_back(std::move(round));
  }
}

}  // namespace rankmoe
