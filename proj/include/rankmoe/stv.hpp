#ifndef RANKMOE_STV_HPP
#define RANKMOE_STV_HPP

#include <cstdint>
#include <vector>

#include "rankmoe/types.hpp"

namespace rankmoe {

// Elimination needs a decision between exactly tied candidates and the
// configured policy refused to make one.
struct TiedEliminationError : Error {
  TiedEliminationError(std::string msg, std::vector<int> tied_set)
      : Error(std::move(msg)), tied(std::move(tied_set)) {}
  std::vector<int> tied;
};

enum class TieBreak {
  by_prior_rounds,  // fewer votes at the earliest differing prior round,
                    // then lowest candidate index
  by_index,         // lowest candidate index
  error,            // refuse: throw TiedEliminationError
};

struct StvConfig {
  int seats = 1;  // only single-seat counts are supported
  // Eliminate the largest trailing group whose combined total is below the
  // next candidate's total, instead of one candidate at a time.
  bool batch_elimination = true;
  TieBreak tiebreak = TieBreak::by_prior_rounds;
};

struct CountRound {
  int index = 0;                       // 1-based round number
  std::vector<std::int64_t> totals;    // per candidate; 0 once eliminated
  std::vector<int> eliminated;         // candidates removed this round
  std::vector<int> elected;            // candidates seated this round
  std::int64_t nontransferable = 0;    // ballots with no continuing preference
};

struct CountResult {
  std::int64_t quota = 0;
  std::vector<CountRound> rounds;
  int winner = -1;
};

// Minimum vote total that guarantees election:
// floor(valid_votes / (seats + 1)) + 1.
std::int64_t quota(std::int64_t valid_votes, int seats);

// Tabulates a single-seat preferential election: tally first preferences,
// elect on reaching quota, otherwise eliminate the trailing candidate (or
// batch) and transfer each of their ballots to its next continuing
// preference. The last remaining candidate is elected regardless of quota.
CountResult count_election(const std::vector<Ballot>& ballots, int n_candidates,
                           const StvConfig& config = {});

}  // namespace rankmoe

#endif  // RANKMOE_STV_HPP
