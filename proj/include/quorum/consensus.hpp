// Majority voting over canonical answers, tie detection, and the selection
// policies: metric tie-break over calibrated cross-model scores, seeded
// random tie-break, and the oracle upper bound.
//
// Everything here is pure decision logic over completed score matrices; the
// scoring fan-out that fills a ScoreMatrix lives in the debate orchestrator.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "quorum/answer.hpp"
#include "quorum/errors.hpp"
#include "quorum/metrics.hpp"

namespace quorum::consensus {

// One model response in one round.
struct Candidate {
    int candidate_id = 0;  // unique within a question
    int model_index = 0;   // [0, N)
    int round = 1;         // >= 1
    std::string text;
    std::optional<answer::CanonicalAnswer> answer;  // nullopt = abstention
};

// Outcome of tallying non-abstaining answers.
struct VoteResult {
    enum class Kind { majority, tie, all_abstain };

    Kind kind = Kind::all_abstain;
    // majority: exactly one answer; tie: >= 2 answers sorted lexicographically
    // by value; all_abstain: empty.
    std::vector<answer::CanonicalAnswer> answers;
    int count = 0;  // votes carried by the winning / tied answers

    friend bool operator==(const VoteResult& a, const VoteResult& b);
};

// Teacher-forced scoring results: N scorer models x M candidates. Entries may
// be missing until the fan-out completes; tie-breaking requires the relevant
// columns to be complete.
struct ScoreMatrix {
    struct Entry {
        double avg_logprob = 0.0;  // <= 0
        int token_count = 0;       // >= 1
    };

    // entries[i][j]: scorer model i, candidate column j.
    std::vector<std::vector<std::optional<Entry>>> entries;
    std::vector<int> candidate_ids;  // column j -> candidate_id
    // Optional per-column per-model values for a distribution-based metric
    // (entropy, gini, self-certainty, KL disagreement), filled by the
    // orchestrator when such a metric is configured.
    std::optional<std::vector<std::vector<double>>> aux_per_model;
    std::optional<metrics::Metric> aux_metric;

    std::size_t models() const { return entries.size(); }
    std::size_t columns() const { return candidate_ids.size(); }
    std::optional<std::size_t> column_of(int candidate_id) const;
    bool column_complete(std::size_t column) const;
    bool complete() const;

    // Calibrated cross-model score of one column under `metric`. Derives
    // per-model perplexities from avg_logprob; distribution metrics read
    // aux_per_model and throw when it is absent or for a different metric.
    metrics::CalibratedScore calibrated(std::size_t column,
                                        metrics::Metric metric) const;
};

// How a tied answer's score is aggregated over the candidates bearing it.
enum class TieAggregation {
    best_candidate,        // best-scoring representative (default)
    mean_over_candidates,  // mean across the answer's candidates
};

constexpr int kNoAnswer = -1;  // Decision.chosen for the all-abstain outcome

struct Decision {
    enum class Policy { metric, random, oracle, majority };

    int chosen = kNoAnswer;  // candidate_id, or kNoAnswer
    Policy policy = Policy::majority;

    // Sufficient to recompute `chosen` without re-scoring.
    struct Trace {
        VoteResult vote;
        // (candidate_id, calibrated score) for every scored candidate.
        std::optional<std::vector<std::pair<int, metrics::CalibratedScore>>> scores;
        std::optional<std::uint64_t> rng_seed;
        bool all_cases = false;  // selection ignored the vote
        TieAggregation aggregation = TieAggregation::best_candidate;
    } trace;
};

// Tally non-abstaining canonical answers. A unique strict plurality is a
// majority; several answers at the maximal count are a tie. Throws Error on
// an empty candidate list or duplicate candidate_ids.
VoteResult vote(const std::vector<Candidate>& candidates);

// Break a tie by calibrated metric score: each tied answer is represented by
// its best-scoring candidate (or candidate mean under mean_over_candidates),
// the best answer under the metric's orientation wins, and exact score ties
// fall to the lowest candidate_id. Throws Error("scores missing") when a tied
// answer's candidate column is incomplete.
Decision tie_break_metric(const VoteResult& tied,
                          const std::vector<Candidate>& candidates,
                          const ScoreMatrix& matrix, metrics::Metric metric,
                          TieAggregation aggregation = TieAggregation::best_candidate);

// Break a tie uniformly at random over the lexicographically sorted tied
// answers with a seeded mt19937_64; the chosen answer's lowest candidate_id
// wins. The seed is recorded in the trace.
Decision tie_break_random(const VoteResult& tied,
                          const std::vector<Candidate>& candidates,
                          std::uint64_t seed);

enum class TieBreakPolicy { metric, random };

// Full selection: a majority wins outright under either policy (no scores
// consulted); a tie dispatches to the configured tie-breaker; all-abstain
// yields chosen = kNoAnswer. policy = metric requires a matrix.
Decision select_final(const std::vector<Candidate>& candidates,
                      const VoteResult& vote, TieBreakPolicy policy,
                      const ScoreMatrix* matrix = nullptr,
                      metrics::Metric metric = metrics::Metric::log_likelihood,
                      std::uint64_t seed = 0,
                      TieAggregation aggregation = TieAggregation::best_candidate);

// True iff any candidate's answer equals gold.
bool oracle_upper_bound(const std::vector<Candidate>& candidates,
                        const answer::CanonicalAnswer& gold);

// Ignore voting entirely: pick the best-calibrated candidate over a complete
// matrix covering all candidates (diagnostic "all cases" variant).
Decision apply_metric_all_cases(const std::vector<Candidate>& candidates,
                                const ScoreMatrix& matrix, metrics::Metric metric);

// Recompute a Decision's chosen candidate_id from its trace alone (scores are
// read from the trace, never recomputed). Throws Error when the trace is
// insufficient or inconsistent with `candidates`.
int replay(const Decision& decision, const std::vector<Candidate>& candidates);

}  // namespace quorum::consensus
