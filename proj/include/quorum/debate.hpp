// Multi-round debate orchestration across N backends: prompt construction,
// seeded generation fan-out, best-of-n sampling from a single model, and the
// N x M teacher-forced scoring fan-out that fills a ScoreMatrix.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quorum/answer.hpp"
#include "quorum/backend.hpp"
#include "quorum/consensus.hpp"
#include "quorum/errors.hpp"
#include "quorum/metrics.hpp"

namespace quorum::debate {

// Deterministic seed stream: every (round, slot) pair gets an independent
// seed derived from the base via splitmix64 mixing.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t round,
                          std::uint64_t slot);

// One model response slot in one round. `failed` marks a backend error
// (transport, unscripted, overflow); such slots abstain from voting and show
// a placeholder in later debate prompts.
struct Utterance {
    std::string text;
    backend::FinishReason finish_reason = backend::FinishReason::stop;
    bool failed = false;

    friend bool operator==(const Utterance& a, const Utterance& b) = default;
};

struct Transcript {
    // turns[k][i]: output of model i in round k+1.
    std::vector<std::vector<Utterance>> turns;

    std::size_t rounds() const { return turns.size(); }
    std::size_t models() const { return turns.empty() ? 0 : turns.front().size(); }

    friend bool operator==(const Transcript& a, const Transcript& b) = default;
};

// Call accounting. Successful and failed calls are tallied separately;
// failures are the calls that raised after client-side retries.
struct CostLedger {
    long long generation_calls = 0;
    long long scoring_calls = 0;
    long long failed_generation_calls = 0;
    long long failed_scoring_calls = 0;

    CostLedger& operator+=(const CostLedger& o);
    friend bool operator==(const CostLedger& a, const CostLedger& b) = default;
};

// Prompt templates ({placeholder} substitution). The copies under
// data/prompts/ mirror these bytes exactly.
std::string_view round1_numeric_template();
std::string_view round1_choice_template();
std::string_view debate_template();

// Round-1 prompt: the bare question plus the answer-format directive
// ("#### <answer>" for numeric tasks, "the answer is (X)" plus the choice
// list for multiple choice).
std::string build_round1_prompt(const std::string& question,
                                const answer::TaskKind& task);

// Debate prompt for round >= 2 given the full previous round. Agents appear
// as "Agent 1".."Agent N" in slot order; for_model marks that agent's slot as
// "your previous answer". With for_model = nullopt the prompt is the
// anonymized shared form, identical for every reader. Failed slots show
// "[no response]".
std::string build_debate_prompt(const std::string& question,
                                const answer::TaskKind& task,
                                const std::vector<Utterance>& previous,
                                int round, std::optional<int> for_model);

struct RunOptions {
    int rounds = 1;       // K >= 1
    int concurrency = 4;  // max in-flight backend calls per fan-out
};

// K sequential rounds over N backends (N * K generation calls, failures
// included). Round 1 sends the same round-1 prompt to every backend; later
// rounds send each model its own view of the previous round.
Transcript run_debate(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const std::string& question, const answer::TaskKind& task,
    const RunOptions& options, std::uint64_t base_seed, CostLedger& ledger);

// n samples of the round-1 prompt from one backend under distinct derived
// seeds; the single-model consensus baseline.
std::vector<Utterance> run_best_of_n(
    const std::shared_ptr<backend::Backend>& backend,
    const std::string& question, const answer::TaskKind& task, int n,
    const RunOptions& options, std::uint64_t base_seed, CostLedger& ledger);

// Final-round utterances to vote candidates: candidate_id = slot index,
// answers extracted from the text (failed or unparseable slots abstain).
// fixed_model_index collapses all candidates onto one model (best-of-n).
std::vector<consensus::Candidate> make_candidates(
    const std::vector<Utterance>& final_round, const answer::TaskKind& task,
    int round, std::optional<int> fixed_model_index = std::nullopt);

// Which context conditions teacher-forced scoring.
enum class ScoringContext {
    shared,          // anonymized final-round prompt, same for every pair
    per_model_view,  // each candidate's own final-round prompt
};

// Concrete contexts for the scoring fan-out. Both forms collapse to the
// round-1 prompt when the debate had a single round.
struct ScoringPlan {
    ScoringContext mode = ScoringContext::shared;
    std::string shared_context;
    std::vector<std::string> per_candidate;  // column j -> context
};

ScoringPlan make_scoring_plan(const std::string& question,
                              const answer::TaskKind& task,
                              const Transcript& transcript, ScoringContext mode);

// N scorers x M candidates. Holes are left where a pair failed (ledger
// records it); the matrix then reports itself incomplete. When aux_metric
// names a distribution metric, every backend must advertise
// full_distribution, and per-pair aux values (or per-candidate KL
// disagreement components) are filled alongside the logprob entries.
consensus::ScoreMatrix score_candidates(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const std::vector<consensus::Candidate>& candidates,
    const ScoringPlan& plan, std::optional<metrics::Metric> aux_metric,
    const RunOptions& options, CostLedger& ledger);

}  // namespace quorum::debate
