#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "quorum/errors.hpp"

namespace quorum::metrics {

/// Natural-log probabilities of the realized tokens of one completion,
/// in emission order. Every element is finite and <= 0; length >= 1.
class TokenScoreSeq {
public:
    /// Validates and takes ownership. Throws Error on an empty sequence
    /// ("empty token sequence") or on positive/non-finite entries.
    static TokenScoreSeq from_logprobs(std::vector<double> logprobs);

    std::span<const double> logprobs() const { return logprobs_; }
    std::size_t length() const { return logprobs_.size(); }

private:
    explicit TokenScoreSeq(std::vector<double> lp) : logprobs_(std::move(lp)) {}
    std::vector<double> logprobs_;
};

/// Next-token probability mass at one position, possibly truncated
/// (top-k from a real API). Entries are (token id, probability), sorted by
/// token id. coverage is the total mass present (1.0 for a full
/// distribution); vocab_size is the declared nominal vocabulary size.
class TokenDistribution {
public:
    /// Validates: probabilities in (0,1], sum == coverage (which is
    /// recomputed from the entries) within 1e-9 of at most 1, vocab_size >=
    /// number of entries, token ids unique and within [0, vocab_size).
    static TokenDistribution from_probs(std::vector<std::pair<int32_t, double>> probs,
                                        int32_t vocab_size);

    std::span<const std::pair<int32_t, double>> entries() const { return probs_; }
    double coverage() const { return coverage_; }
    int32_t vocab_size() const { return vocab_size_; }
    bool full() const;

    /// Probability of one token id, 0 when absent.
    double prob(int32_t token_id) const;

private:
    TokenDistribution() = default;
    std::vector<std::pair<int32_t, double>> probs_;
    double coverage_ = 0.0;
    int32_t vocab_size_ = 0;
};

/// Additive smoothing over the declared vocabulary: every token id in
/// [0, vocab_size) gets probability (p + eps) / (1 + vocab_size * eps).
/// The result is a full distribution. eps must be > 0.
TokenDistribution smooth(const TokenDistribution& dist, double eps);

enum class Metric {
    log_likelihood,
    perplexity,
    entropy,
    gini,
    self_certainty,
    kl_disagreement,
};

enum class Orientation { maximize, minimize };

Orientation orientation(Metric m);
bool requires_distribution(Metric m);
std::string_view metric_name(Metric m);
std::optional<Metric> parse_metric(std::string_view name);
std::vector<Metric> all_metrics();

/// Cross-model calibrated value of one metric: the arithmetic mean of the
/// per-model values, with the per-model values kept in model-index order.
struct CalibratedScore {
    double value = 0.0;
    std::vector<double> per_model;
    Metric metric = Metric::log_likelihood;
};

/// Mean per-token log-likelihood: (1/T) * sum of logprobs. Always <= 0.
double avg_log_likelihood(const TokenScoreSeq& seq);

/// exp(-avg_log_likelihood). Always >= 1.
double perplexity(const TokenScoreSeq& seq);

/// Mean over positions of sum_v -p ln p, with truncated distributions
/// renormalized by their coverage. Distributions whose coverage is below
/// min_coverage are rejected ("insufficient distribution coverage").
double entropy(std::span<const TokenDistribution> dists, double min_coverage = 0.99);

/// Mean over positions of 1 - sum_v p^2, renormalized as for entropy.
double gini(std::span<const TokenDistribution> dists, double min_coverage = 0.99);

/// Mean over positions of KL(Uniform(|V|) || p). Higher means the model is
/// more certain. Requires either full coverage over the whole declared
/// vocabulary, or truncated entries plus a uniform tail over the missing
/// ids carrying the remaining mass. Full coverage with ids missing from the
/// declared vocabulary is an error (a zero-probability entry makes the
/// divergence unbounded).
double self_certainty(std::span<const TokenDistribution> dists);

/// Mean pairwise disagreement of N models over a shared token sequence:
/// KL(p_i || p_j) averaged over positions, then over all ordered pairs
/// i != j. Zero iff all per-position distributions are identical.
/// Distributions are renormalized by coverage before comparison; a q-side
/// zero where p > 0 raises "unbounded divergence".
double kl_disagreement(std::span<const std::vector<TokenDistribution>> per_model_dists);

/// Per-model view of kl_disagreement: element i is model i's mean
/// divergence to the other models, (1/(N-1)) sum_{j != i} KL(p_i || p_j)
/// averaged over positions. The mean of this vector equals
/// kl_disagreement().
std::vector<double> kl_disagreement_per_model(
    std::span<const std::vector<TokenDistribution>> per_model_dists);

/// Cross-model calibration: arithmetic mean across models, order preserved.
CalibratedScore calibrate(std::span<const double> per_model_values, Metric metric);

/// Index of the best score under the metric's orientation. All scores must
/// share one metric kind. Exact value ties resolve to the lowest index.
std::size_t select_best(std::span<const CalibratedScore> scores);

}  // namespace quorum::metrics
