#include "quorum/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "quorum/kernels.hpp"

namespace quorum::metrics {

namespace {

constexpr double kCoverageTol = 1e-9;

void check_nonempty_dists(std::span<const TokenDistribution> dists) {
    if (dists.empty()) throw Error("empty distribution sequence");
}

// Entry probabilities divided by coverage, in id order.
std::vector<double> renormalized(const TokenDistribution& d) {
    std::vector<double> out;
    out.reserve(d.entries().size());
    const double c = d.coverage();
    for (const auto& [id, p] : d.entries()) out.push_back(p / c);
    return out;
}

void check_coverage(const TokenDistribution& d, double min_coverage) {
    if (d.coverage() + kCoverageTol < min_coverage) {
        throw Error("insufficient distribution coverage");
    }
}

}  // namespace

TokenScoreSeq TokenScoreSeq::from_logprobs(std::vector<double> logprobs) {
    if (logprobs.empty()) throw Error("empty token sequence");
    for (double lp : logprobs) {
        if (!std::isfinite(lp)) throw Error("non-finite token logprob");
        if (lp > 0.0) throw Error("token logprob above 0 (probability above 1)");
    }
    return TokenScoreSeq(std::move(logprobs));
}

TokenDistribution TokenDistribution::from_probs(
    std::vector<std::pair<int32_t, double>> probs, int32_t vocab_size) {
    if (probs.empty()) throw Error("empty token distribution");
    if (vocab_size < static_cast<int32_t>(probs.size())) {
        throw Error("vocab_size smaller than number of distribution entries");
    }
    std::sort(probs.begin(), probs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double sum = 0.0;
    int32_t prev_id = -1;
    for (const auto& [id, p] : probs) {
        if (id < 0 || id >= vocab_size) throw Error("token id outside declared vocabulary");
        if (id == prev_id) throw Error("duplicate token id in distribution");
        prev_id = id;
        if (!(p > 0.0) || p > 1.0 + kCoverageTol) {
            throw Error("distribution probability outside (0, 1]");
        }
        sum += p;
    }
    if (sum > 1.0 + kCoverageTol) throw Error("distribution mass above 1");
    TokenDistribution d;
    d.probs_ = std::move(probs);
    d.coverage_ = std::min(sum, 1.0);
    d.vocab_size_ = vocab_size;
    return d;
}

bool TokenDistribution::full() const {
    return std::abs(coverage_ - 1.0) <= kCoverageTol;
}

double TokenDistribution::prob(int32_t token_id) const {
    auto it = std::lower_bound(
        probs_.begin(), probs_.end(), token_id,
        [](const auto& e, int32_t id) { return e.first < id; });
    if (it != probs_.end() && it->first == token_id) return it->second;
    return 0.0;
}

TokenDistribution smooth(const TokenDistribution& dist, double eps) {
    if (!(eps > 0.0)) throw Error("smoothing epsilon must be > 0");
    const int32_t v = dist.vocab_size();
    const double denom = dist.coverage() + static_cast<double>(v) * eps;
    std::vector<std::pair<int32_t, double>> probs;
    probs.reserve(static_cast<std::size_t>(v));
    for (int32_t id = 0; id < v; ++id) {
        probs.emplace_back(id, (dist.prob(id) + eps) / denom);
    }
    return TokenDistribution::from_probs(std::move(probs), v);
}

Orientation orientation(Metric m) {
    switch (m) {
        case Metric::log_likelihood:
        case Metric::self_certainty:
            return Orientation::maximize;
        case Metric::perplexity:
        case Metric::entropy:
        case Metric::gini:
        case Metric::kl_disagreement:
            return Orientation::minimize;
    }
    throw Error("unknown metric");
}

bool requires_distribution(Metric m) {
    switch (m) {
        case Metric::log_likelihood:
        case Metric::perplexity:
            return false;
        case Metric::entropy:
        case Metric::gini:
        case Metric::self_certainty:
        case Metric::kl_disagreement:
            return true;
    }
    throw Error("unknown metric");
}

std::string_view metric_name(Metric m) {
    switch (m) {
        case Metric::log_likelihood: return "log_likelihood";
        case Metric::perplexity: return "perplexity";
        case Metric::entropy: return "entropy";
        case Metric::gini: return "gini";
        case Metric::self_certainty: return "self_certainty";
        case Metric::kl_disagreement: return "kl_disagreement";
    }
    return "unknown";
}

std::optional<Metric> parse_metric(std::string_view name) {
    for (Metric m : all_metrics()) {
        if (metric_name(m) == name) return m;
    }
    return std::nullopt;
}

std::vector<Metric> all_metrics() {
    return {Metric::log_likelihood, Metric::perplexity,   Metric::entropy,
            Metric::gini,           Metric::self_certainty, Metric::kl_disagreement};
}

double avg_log_likelihood(const TokenScoreSeq& seq) {
    return kernels::reduce_sum(seq.logprobs()) /
           static_cast<double>(seq.length());
}

double perplexity(const TokenScoreSeq& seq) {
    return std::exp(-avg_log_likelihood(seq));
}

double entropy(std::span<const TokenDistribution> dists, double min_coverage) {
    check_nonempty_dists(dists);
    double acc = 0.0;
    for (const auto& d : dists) {
        check_coverage(d, min_coverage);
        acc += kernels::reduce_neg_plogp(renormalized(d));
    }
    return acc / static_cast<double>(dists.size());
}

double gini(std::span<const TokenDistribution> dists, double min_coverage) {
    check_nonempty_dists(dists);
    double acc = 0.0;
    for (const auto& d : dists) {
        check_coverage(d, min_coverage);
        acc += 1.0 - kernels::reduce_sum_squares(renormalized(d));
    }
    return acc / static_cast<double>(dists.size());
}

double self_certainty(std::span<const TokenDistribution> dists) {
    check_nonempty_dists(dists);
    double acc = 0.0;
    for (const auto& d : dists) {
        const auto v = static_cast<double>(d.vocab_size());
        const auto missing =
            d.vocab_size() - static_cast<int32_t>(d.entries().size());
        std::vector<double> probs;
        probs.reserve(d.entries().size());
        for (const auto& [id, p] : d.entries()) probs.push_back(p);
        double sum_log = kernels::reduce_sum_log(probs);
        if (d.full()) {
            if (missing > 0) throw Error("zero-probability entry under full coverage");
        } else {
            if (missing == 0) {
                throw Error("truncated distribution already covers the declared vocabulary");
            }
            // Uniform tail: spread the missing mass over the absent ids.
            const double tail = (1.0 - d.coverage()) / static_cast<double>(missing);
            sum_log += static_cast<double>(missing) * std::log(tail);
        }
        acc += -std::log(v) - sum_log / v;
    }
    return acc / static_cast<double>(dists.size());
}

namespace {

// Dense aligned probability rows for one position across N models, over the
// union of token ids present in any of them, renormalized by coverage.
std::vector<std::vector<double>> aligned_rows(
    std::span<const std::vector<TokenDistribution>> models, std::size_t t) {
    std::vector<int32_t> ids;
    for (const auto& m : models) {
        for (const auto& [id, p] : m[t].entries()) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    std::vector<std::vector<double>> rows(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto& d = models[i][t];
        rows[i].reserve(ids.size());
        for (int32_t id : ids) rows[i].push_back(d.prob(id) / d.coverage());
    }
    return rows;
}

// N x N matrix of token-averaged KL(p_i || p_j); diagonal zero.
std::vector<std::vector<double>> pairwise_kl(
    std::span<const std::vector<TokenDistribution>> models) {
    const std::size_t n = models.size();
    if (n < 2) throw Error("kl_disagreement requires at least two models");
    const std::size_t t_len = models[0].size();
    if (t_len == 0) throw Error("empty distribution sequence");
    for (const auto& m : models) {
        if (m.size() != t_len) throw Error("mismatched sequence lengths");
        for (const auto& d : m) {
            if (d.vocab_size() != models[0][0].vocab_size()) {
                throw Error("token-id spaces not alignable");
            }
        }
    }

    std::vector<std::vector<double>> acc(n, std::vector<double>(n, 0.0));
    for (std::size_t t = 0; t < t_len; ++t) {
        const auto rows = aligned_rows(models, t);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                for (std::size_t v = 0; v < rows[i].size(); ++v) {
                    if (rows[i][v] > 0.0 && rows[j][v] == 0.0) {
                        throw Error("unbounded divergence");
                    }
                }
                acc[i][j] += kernels::reduce_kl(rows[i], rows[j]);
            }
        }
    }
    for (auto& row : acc) {
        for (double& v : row) v /= static_cast<double>(t_len);
    }
    return acc;
}

}  // namespace

double kl_disagreement(
    std::span<const std::vector<TokenDistribution>> per_model_dists) {
    const auto m = pairwise_kl(per_model_dists);
    const std::size_t n = m.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) acc += m[i][j];
    }
    return acc / static_cast<double>(n * (n - 1));
}

std::vector<double> kl_disagreement_per_model(
    std::span<const std::vector<TokenDistribution>> per_model_dists) {
    const auto m = pairwise_kl(per_model_dists);
    const std::size_t n = m.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i] += m[i][j];
        out[i] /= static_cast<double>(n - 1);
    }
    return out;
}

CalibratedScore calibrate(std::span<const double> per_model_values, Metric metric) {
    if (per_model_values.empty()) throw Error("empty per-model value list");
    for (double v : per_model_values) {
        if (!std::isfinite(v)) throw Error("non-finite per-model value");
    }
    CalibratedScore s;
    s.metric = metric;
    s.per_model.assign(per_model_values.begin(), per_model_values.end());
    // Sum over a sorted copy so the mean is bit-identical under any
    // permutation of the inputs.
    std::vector<double> sorted = s.per_model;
    std::sort(sorted.begin(), sorted.end());
    s.value = kernels::reduce_sum(sorted) / static_cast<double>(sorted.size());
    return s;
}

std::size_t select_best(std::span<const CalibratedScore> scores) {
    if (scores.empty()) throw Error("no scores to select from");
    const Metric kind = scores[0].metric;
    for (const auto& s : scores) {
        if (s.metric != kind) throw Error("mixed metric kinds");
    }
    const bool maximize = orientation(kind) == Orientation::maximize;
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const bool better = maximize ? scores[i].value > scores[best].value
                                     : scores[i].value < scores[best].value;
        if (better) best = i;
    }
    return best;
}

}  // namespace quorum::metrics
