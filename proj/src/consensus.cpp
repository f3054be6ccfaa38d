#include "quorum/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace quorum::consensus {
namespace {

using answer::CanonicalAnswer;
using metrics::Metric;
using metrics::Orientation;

void validate_candidates(const std::vector<Candidate>& candidates) {
    if (candidates.empty()) throw Error("empty candidate list");
    for (std::size_t i = 0; i < candidates.size(); ++i)
        for (std::size_t j = i + 1; j < candidates.size(); ++j)
            if (candidates[i].candidate_id == candidates[j].candidate_id)
                throw Error("duplicate candidate_id: " +
                            std::to_string(candidates[i].candidate_id));
}

bool better(double a, double b, Orientation o) {
    return o == Orientation::maximize ? a > b : a < b;
}

// Lowest candidate_id whose answer equals `ans`.
int lowest_id_bearing(const std::vector<Candidate>& candidates,
                      const CanonicalAnswer& ans) {
    int best = kNoAnswer;
    for (const Candidate& c : candidates) {
        if (!c.answer || !answer::answers_equal(*c.answer, ans)) continue;
        if (best == kNoAnswer || c.candidate_id < best) best = c.candidate_id;
    }
    if (best == kNoAnswer) throw Error("no candidate bears the given answer");
    return best;
}

const Candidate& by_id(const std::vector<Candidate>& candidates, int id) {
    for (const Candidate& c : candidates)
        if (c.candidate_id == id) return c;
    throw Error("unknown candidate_id: " + std::to_string(id));
}

// Per tied answer: aggregate score plus the representative candidate.
struct AnswerScore {
    double aggregate = 0.0;
    int representative = kNoAnswer;  // best-scoring candidate, lowest id on ties
};

AnswerScore aggregate_answer(const std::vector<std::pair<int, double>>& scored,
                             Orientation orientation, TieAggregation aggregation) {
    AnswerScore out;
    double sum = 0.0;
    bool first = true;
    double best = 0.0;
    for (const auto& [id, value] : scored) {
        sum += value;
        if (first || better(value, best, orientation) ||
            (value == best && id < out.representative)) {
            best = value;
            out.representative = id;
            first = false;
        }
    }
    out.aggregate = aggregation == TieAggregation::best_candidate
                        ? best
                        : sum / static_cast<double>(scored.size());
    return out;
}

}  // namespace

bool operator==(const VoteResult& a, const VoteResult& b) {
    if (a.kind != b.kind || a.count != b.count || a.answers.size() != b.answers.size())
        return false;
    for (std::size_t i = 0; i < a.answers.size(); ++i)
        if (!answer::answers_equal(a.answers[i], b.answers[i])) return false;
    return true;
}

std::optional<std::size_t> ScoreMatrix::column_of(int candidate_id) const {
    for (std::size_t j = 0; j < candidate_ids.size(); ++j)
        if (candidate_ids[j] == candidate_id) return j;
    return std::nullopt;
}

bool ScoreMatrix::column_complete(std::size_t column) const {
    if (entries.empty() || column >= columns()) return false;
    for (const auto& row : entries) {
        if (column >= row.size() || !row[column]) return false;
    }
    return true;
}

bool ScoreMatrix::complete() const {
    for (std::size_t j = 0; j < columns(); ++j)
        if (!column_complete(j)) return false;
    return columns() > 0;
}

metrics::CalibratedScore ScoreMatrix::calibrated(std::size_t column,
                                                 Metric metric) const {
    if (column >= columns()) throw Error("score matrix column out of range");
    if (!column_complete(column)) throw Error("scores missing");

    std::vector<double> per_model;
    per_model.reserve(models());
    switch (metric) {
        case Metric::log_likelihood:
            for (const auto& row : entries) per_model.push_back(row[column]->avg_logprob);
            break;
        case Metric::perplexity:
            for (const auto& row : entries)
                per_model.push_back(std::exp(-row[column]->avg_logprob));
            break;
        default:
            if (!aux_per_model || !aux_metric || *aux_metric != metric)
                throw Error("metric requires token distributions");
            if (column >= aux_per_model->size() ||
                (*aux_per_model)[column].size() != models())
                throw Error("scores missing");
            per_model = (*aux_per_model)[column];
            break;
    }
    return metrics::calibrate(per_model, metric);
}

VoteResult vote(const std::vector<Candidate>& candidates) {
    validate_candidates(candidates);

    struct Group {
        CanonicalAnswer representative;
        int count = 0;
    };
    std::vector<Group> groups;
    for (const Candidate& c : candidates) {
        if (!c.answer) continue;
        bool found = false;
        for (Group& g : groups) {
            if (answer::answers_equal(g.representative, *c.answer)) {
                ++g.count;
                found = true;
                break;
            }
        }
        if (!found) groups.push_back({*c.answer, 1});
    }

    VoteResult out;
    if (groups.empty()) {
        out.kind = VoteResult::Kind::all_abstain;
        return out;
    }
    int max_count = 0;
    for (const Group& g : groups) max_count = std::max(max_count, g.count);
    for (const Group& g : groups)
        if (g.count == max_count) out.answers.push_back(g.representative);
    std::sort(out.answers.begin(), out.answers.end(),
              [](const CanonicalAnswer& a, const CanonicalAnswer& b) {
                  return a.value < b.value;
              });
    out.count = max_count;
    out.kind = out.answers.size() == 1 ? VoteResult::Kind::majority
                                       : VoteResult::Kind::tie;
    return out;
}

Decision tie_break_metric(const VoteResult& tied,
                          const std::vector<Candidate>& candidates,
                          const ScoreMatrix& matrix, Metric metric,
                          TieAggregation aggregation) {
    if (tied.kind != VoteResult::Kind::tie) throw Error("vote is not a tie");
    validate_candidates(candidates);
    const Orientation orientation = metrics::orientation(metric);

    std::vector<std::pair<int, metrics::CalibratedScore>> trace_scores;
    std::optional<AnswerScore> winner;
    for (const CanonicalAnswer& ans : tied.answers) {
        std::vector<std::pair<int, double>> scored;
        for (const Candidate& c : candidates) {
            if (!c.answer || !answer::answers_equal(*c.answer, ans)) continue;
            const auto column = matrix.column_of(c.candidate_id);
            if (!column) throw Error("scores missing");
            auto cal = matrix.calibrated(*column, metric);
            scored.emplace_back(c.candidate_id, cal.value);
            trace_scores.emplace_back(c.candidate_id, std::move(cal));
        }
        if (scored.empty()) throw Error("scores missing");
        const AnswerScore s = aggregate_answer(scored, orientation, aggregation);
        if (!winner || better(s.aggregate, winner->aggregate, orientation) ||
            (s.aggregate == winner->aggregate &&
             s.representative < winner->representative))
            winner = s;
    }

    std::sort(trace_scores.begin(), trace_scores.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    Decision d;
    d.chosen = winner->representative;
    d.policy = Decision::Policy::metric;
    d.trace.vote = tied;
    d.trace.scores = std::move(trace_scores);
    d.trace.aggregation = aggregation;
    return d;
}

Decision tie_break_random(const VoteResult& tied,
                          const std::vector<Candidate>& candidates,
                          std::uint64_t seed) {
    if (tied.kind != VoteResult::Kind::tie) throw Error("vote is not a tie");
    validate_candidates(candidates);

    std::mt19937_64 rng(seed);
    const std::size_t idx = rng() % tied.answers.size();

    Decision d;
    d.chosen = lowest_id_bearing(candidates, tied.answers[idx]);
    d.policy = Decision::Policy::random;
    d.trace.vote = tied;
    d.trace.rng_seed = seed;
    return d;
}

Decision select_final(const std::vector<Candidate>& candidates,
                      const VoteResult& vote_result, TieBreakPolicy policy,
                      const ScoreMatrix* matrix, Metric metric,
                      std::uint64_t seed, TieAggregation aggregation) {
    validate_candidates(candidates);
    switch (vote_result.kind) {
        case VoteResult::Kind::majority: {
            Decision d;
            d.chosen = lowest_id_bearing(candidates, vote_result.answers.front());
            d.policy = Decision::Policy::majority;
            d.trace.vote = vote_result;
            return d;
        }
        case VoteResult::Kind::tie:
            if (policy == TieBreakPolicy::metric) {
                if (!matrix) throw Error("metric tie-break requires a score matrix");
                return tie_break_metric(vote_result, candidates, *matrix, metric,
                                        aggregation);
            }
            return tie_break_random(vote_result, candidates, seed);
        case VoteResult::Kind::all_abstain:
        default: {
            Decision d;
            d.chosen = kNoAnswer;
            d.policy = policy == TieBreakPolicy::metric ? Decision::Policy::metric
                                                        : Decision::Policy::random;
            d.trace.vote = vote_result;
            if (policy == TieBreakPolicy::random) d.trace.rng_seed = seed;
            return d;
        }
    }
}

bool oracle_upper_bound(const std::vector<Candidate>& candidates,
                        const CanonicalAnswer& gold) {
    for (const Candidate& c : candidates)
        if (c.answer && answer::answers_equal(*c.answer, gold)) return true;
    return false;
}

Decision apply_metric_all_cases(const std::vector<Candidate>& candidates,
                                const ScoreMatrix& matrix, Metric metric) {
    validate_candidates(candidates);
    if (!matrix.complete()) throw Error("incomplete score matrix");
    const Orientation orientation = metrics::orientation(metric);

    std::vector<std::pair<int, metrics::CalibratedScore>> trace_scores;
    std::optional<int> chosen;
    std::optional<double> best;
    for (const Candidate& c : candidates) {
        const auto column = matrix.column_of(c.candidate_id);
        if (!column) throw Error("incomplete score matrix");
        auto cal = matrix.calibrated(*column, metric);
        const double value = cal.value;
        trace_scores.emplace_back(c.candidate_id, std::move(cal));
        if (!chosen || better(value, *best, orientation) ||
            (value == *best && c.candidate_id < *chosen)) {
            chosen = c.candidate_id;
            best = value;
        }
    }

    std::sort(trace_scores.begin(), trace_scores.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    Decision d;
    d.chosen = *chosen;
    d.policy = Decision::Policy::metric;
    d.trace.vote = vote(candidates);
    d.trace.scores = std::move(trace_scores);
    d.trace.all_cases = true;
    return d;
}

int replay(const Decision& decision, const std::vector<Candidate>& candidates) {
    validate_candidates(candidates);
    const VoteResult& v = decision.trace.vote;

    switch (decision.policy) {
        case Decision::Policy::majority:
            if (v.kind != VoteResult::Kind::majority || v.answers.empty())
                throw Error("majority decision without a majority vote trace");
            return lowest_id_bearing(candidates, v.answers.front());

        case Decision::Policy::random: {
            if (v.kind == VoteResult::Kind::all_abstain) return kNoAnswer;
            if (!decision.trace.rng_seed) throw Error("random decision without a seed");
            std::mt19937_64 rng(*decision.trace.rng_seed);
            const std::size_t idx = rng() % v.answers.size();
            return lowest_id_bearing(candidates, v.answers[idx]);
        }

        case Decision::Policy::metric: {
            if (v.kind == VoteResult::Kind::all_abstain && !decision.trace.all_cases)
                return kNoAnswer;
            if (!decision.trace.scores) throw Error("metric decision without scores");
            const auto& scores = *decision.trace.scores;
            if (scores.empty()) throw Error("metric decision without scores");
            const Orientation orientation =
                metrics::orientation(scores.front().second.metric);
            auto value_of = [&](int id) -> double {
                for (const auto& [cid, cal] : scores)
                    if (cid == id) return cal.value;
                throw Error("trace scores missing candidate " + std::to_string(id));
            };

            if (decision.trace.all_cases) {
                std::optional<int> chosen;
                std::optional<double> best;
                for (const auto& [id, cal] : scores) {
                    if (!chosen || better(cal.value, *best, orientation) ||
                        (cal.value == *best && id < *chosen)) {
                        chosen = id;
                        best = cal.value;
                    }
                }
                return *chosen;
            }

            std::optional<AnswerScore> winner;
            for (const answer::CanonicalAnswer& ans : v.answers) {
                std::vector<std::pair<int, double>> scored;
                for (const Candidate& c : candidates) {
                    if (!c.answer || !answer::answers_equal(*c.answer, ans)) continue;
                    scored.emplace_back(c.candidate_id, value_of(c.candidate_id));
                }
                if (scored.empty()) throw Error("trace scores missing tied answer");
                const AnswerScore s = aggregate_answer(scored, orientation,
                                                       decision.trace.aggregation);
                if (!winner || better(s.aggregate, winner->aggregate, orientation) ||
                    (s.aggregate == winner->aggregate &&
                     s.representative < winner->representative))
                    winner = s;
            }
            return winner->representative;
        }

        case Decision::Policy::oracle:
        default:
            throw Error("oracle decisions are not replayable");
    }
}

}  // namespace quorum::consensus
