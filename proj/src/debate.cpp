#include <algorithm>
#include <atomic>
#include <initializer_list>
#include <mutex>
#include <thread>
#include <utility>

#include "quorum/debate.hpp"

namespace quorum::debate {

namespace {

constexpr std::string_view kRound1NumericTemplate =
    "Solve the following problem. Reason step by step, then give your final "
    "answer on its own line in the form \"#### <answer>\".\n"
    "\n"
    "Problem: {question}\n";

constexpr std::string_view kRound1ChoiceTemplate =
    "Answer the following multiple-choice question. Reason step by step, then "
    "end with the sentence \"the answer is (X)\", where X is the letter of "
    "your choice.\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Choices:\n"
    "{choices}\n";

constexpr std::string_view kDebateTemplate =
    "{round1}\n"
    "Below are the answers from all {n} agents in round {k_prev}. Review "
    "their reasoning, point out any mistakes, and update your solution.\n"
    "\n"
    "{agents}"
    "Give your revised final answer in the same format as before.\n";

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Single-pass template rendering; substituted values are never rescanned, so
// question or agent text containing a placeholder stays literal.
std::string render(
    std::string_view tmpl,
    std::initializer_list<std::pair<std::string_view, std::string_view>> subs) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t brace = tmpl.find('{', pos);
        if (brace == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, brace - pos));
        bool matched = false;
        for (const auto& [key, value] : subs) {
            if (tmpl.substr(brace).starts_with(key)) {
                out.append(value);
                pos = brace + key.size();
                matched = true;
                break;
            }
        }
        if (!matched) {
            out.push_back('{');
            pos = brace + 1;
        }
    }
    return out;
}

// Index-pulling fan-out with a concurrency cap; fn must not throw.
template <typename Fn>
void parallel_for(std::size_t count, int concurrency, Fn&& fn) {
    const std::size_t workers =
        std::min<std::size_t>(std::max(concurrency, 1), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&next, count, &fn] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (auto& t : threads) t.join();
}

std::vector<Utterance> run_round(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const std::vector<std::string>& prompts,
    const std::vector<std::uint64_t>& seeds, int concurrency,
    CostLedger& ledger) {
    std::vector<Utterance> out(backends.size());
    std::mutex mu;
    parallel_for(backends.size(), concurrency, [&](std::size_t i) {
        try {
            backend::Generation g = backends[i]->generate(prompts[i], seeds[i]);
            std::lock_guard<std::mutex> lock(mu);
            out[i] = Utterance{std::move(g.text), g.finish_reason, false};
            ++ledger.generation_calls;
        } catch (const Error&) {
            std::lock_guard<std::mutex> lock(mu);
            out[i] = Utterance{"", backend::FinishReason::error, true};
            ++ledger.failed_generation_calls;
        }
    });
    return out;
}

double aux_value(metrics::Metric m,
                 const std::vector<metrics::TokenDistribution>& dists) {
    switch (m) {
        case metrics::Metric::entropy: return metrics::entropy(dists);
        case metrics::Metric::gini: return metrics::gini(dists);
        case metrics::Metric::self_certainty: return metrics::self_certainty(dists);
        default: throw Error("metric has no per-model distribution value");
    }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t round,
                          std::uint64_t slot) {
    const std::uint64_t x = splitmix64(base ^ (0x9e3779b97f4a7c15ULL * (round + 1)));
    return splitmix64(x ^ (0xbf58476d1ce4e5b9ULL * (slot + 1)));
}

CostLedger& CostLedger::operator+=(const CostLedger& o) {
    generation_calls += o.generation_calls;
    scoring_calls += o.scoring_calls;
    failed_generation_calls += o.failed_generation_calls;
    failed_scoring_calls += o.failed_scoring_calls;
    return *this;
}

std::string_view round1_numeric_template() { return kRound1NumericTemplate; }
std::string_view round1_choice_template() { return kRound1ChoiceTemplate; }
std::string_view debate_template() { return kDebateTemplate; }

std::string build_round1_prompt(const std::string& question,
                                const answer::TaskKind& task) {
    if (question.empty()) throw Error("empty question");
    if (task.kind == answer::Kind::numeric)
        return render(kRound1NumericTemplate, {{"{question}", question}});
    std::string choices;
    for (std::size_t i = 0; i < task.choices.size(); ++i) {
        if (i > 0) choices += '\n';
        choices += "(" + task.choices[i].label + ") " + task.choices[i].text;
    }
    return render(kRound1ChoiceTemplate,
                  {{"{question}", question}, {"{choices}", choices}});
}

std::string build_debate_prompt(const std::string& question,
                                const answer::TaskKind& task,
                                const std::vector<Utterance>& previous,
                                int round, std::optional<int> for_model) {
    if (round < 2) throw Error("debate prompts start at round 2");
    if (previous.empty()) throw Error("debate prompt needs a previous round");
    if (for_model && (*for_model < 0 ||
                      static_cast<std::size_t>(*for_model) >= previous.size()))
        throw Error("for_model out of range");
    std::string agents;
    for (std::size_t i = 0; i < previous.size(); ++i) {
        agents += "Agent " + std::to_string(i + 1);
        if (for_model && static_cast<std::size_t>(*for_model) == i)
            agents += " (your previous answer)";
        agents += ":\n";
        if (previous[i].failed || previous[i].text.empty())
            agents += "[no response]";
        else
            agents += previous[i].text;
        agents += "\n\n";
    }
    return render(kDebateTemplate,
                  {{"{round1}", build_round1_prompt(question, task)},
                   {"{n}", std::to_string(previous.size())},
                   {"{k_prev}", std::to_string(round - 1)},
                   {"{agents}", agents}});
}

Transcript run_debate(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const std::string& question, const answer::TaskKind& task,
    const RunOptions& options, std::uint64_t base_seed, CostLedger& ledger) {
    if (backends.empty()) throw Error("no backends");
    if (options.rounds < 1) throw Error("rounds must be >= 1");
    if (options.concurrency < 1) throw Error("concurrency must be >= 1");
    const std::size_t n = backends.size();
    const std::string round1 = build_round1_prompt(question, task);

    Transcript transcript;
    for (int k = 1; k <= options.rounds; ++k) {
        std::vector<std::string> prompts;
        prompts.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            prompts.push_back(k == 1 ? round1
                                     : build_debate_prompt(
                                           question, task,
                                           transcript.turns.back(), k,
                                           static_cast<int>(i)));
        std::vector<std::uint64_t> seeds;
        seeds.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            seeds.push_back(derive_seed(base_seed, static_cast<std::uint64_t>(k),
                                        static_cast<std::uint64_t>(i)));
        transcript.turns.push_back(
            run_round(backends, prompts, seeds, options.concurrency, ledger));
    }
    return transcript;
}

std::vector<Utterance> run_best_of_n(
    const std::shared_ptr<backend::Backend>& backend,
    const std::string& question, const answer::TaskKind& task, int n,
    const RunOptions& options, std::uint64_t base_seed, CostLedger& ledger) {
    if (!backend) throw Error("no backend");
    if (n < 1) throw Error("sample count must be >= 1");
    if (options.concurrency < 1) throw Error("concurrency must be >= 1");
    const std::string round1 = build_round1_prompt(question, task);
    const std::vector<std::shared_ptr<backend::Backend>> clones(
        static_cast<std::size_t>(n), backend);
    std::vector<std::string> prompts(static_cast<std::size_t>(n), round1);
    std::vector<std::uint64_t> seeds;
    seeds.reserve(static_cast<std::size_t>(n));
    // Round index 0 keeps this seed stream disjoint from debate rounds >= 1.
    for (int j = 0; j < n; ++j)
        seeds.push_back(derive_seed(base_seed, 0, static_cast<std::uint64_t>(j)));
    return run_round(clones, prompts, seeds, options.concurrency, ledger);
}

std::vector<consensus::Candidate> make_candidates(
    const std::vector<Utterance>& final_round, const answer::TaskKind& task,
    int round, std::optional<int> fixed_model_index) {
    std::vector<consensus::Candidate> out;
    out.reserve(final_round.size());
    for (std::size_t i = 0; i < final_round.size(); ++i) {
        const Utterance& u = final_round[i];
        consensus::Candidate c;
        c.candidate_id = static_cast<int>(i);
        c.model_index = fixed_model_index.value_or(static_cast<int>(i));
        c.round = round;
        c.text = u.text;
        if (!u.failed && !u.text.empty())
            c.answer = answer::extract(u.text, task);
        out.push_back(std::move(c));
    }
    return out;
}

ScoringPlan make_scoring_plan(const std::string& question,
                              const answer::TaskKind& task,
                              const Transcript& transcript,
                              ScoringContext mode) {
    if (transcript.rounds() == 0) throw Error("empty transcript");
    ScoringPlan plan;
    plan.mode = mode;
    const std::size_t m = transcript.turns.back().size();
    if (transcript.rounds() == 1) {
        plan.shared_context = build_round1_prompt(question, task);
        plan.per_candidate.assign(m, plan.shared_context);
        return plan;
    }
    const int final_round = static_cast<int>(transcript.rounds());
    const auto& previous = transcript.turns[transcript.rounds() - 2];
    plan.shared_context =
        build_debate_prompt(question, task, previous, final_round, std::nullopt);
    plan.per_candidate.reserve(m);
    for (std::size_t j = 0; j < m; ++j)
        plan.per_candidate.push_back(build_debate_prompt(
            question, task, previous, final_round, static_cast<int>(j)));
    return plan;
}

consensus::ScoreMatrix score_candidates(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const std::vector<consensus::Candidate>& candidates,
    const ScoringPlan& plan, std::optional<metrics::Metric> aux_metric,
    const RunOptions& options, CostLedger& ledger) {
    if (backends.empty()) throw Error("no backends");
    if (options.concurrency < 1) throw Error("concurrency must be >= 1");
    const std::size_t n = backends.size();
    const std::size_t m = candidates.size();
    if (plan.mode == ScoringContext::per_model_view && plan.per_candidate.size() < m)
        throw Error("scoring plan does not cover all candidates");

    const bool want_aux =
        aux_metric && metrics::requires_distribution(*aux_metric);
    if (want_aux) {
        for (const auto& b : backends)
            if (!b->descriptor().capabilities.full_distribution)
                throw ConfigError(
                    "metric '" + std::string(metrics::metric_name(*aux_metric)) +
                    "' needs token distributions, but backend '" +
                    b->descriptor().name + "' does not expose them");
    }

    consensus::ScoreMatrix matrix;
    matrix.entries.assign(
        n, std::vector<std::optional<consensus::ScoreMatrix::Entry>>(m));
    matrix.candidate_ids.reserve(m);
    for (const auto& c : candidates) matrix.candidate_ids.push_back(c.candidate_id);

    std::vector<std::vector<std::optional<std::vector<metrics::TokenDistribution>>>>
        dists;
    if (want_aux)
        dists.assign(
            n, std::vector<std::optional<std::vector<metrics::TokenDistribution>>>(
                   m));

    std::mutex mu;
    parallel_for(n * m, options.concurrency, [&](std::size_t t) {
        const std::size_t i = t / m;
        const std::size_t j = t % m;
        const std::string& context = plan.mode == ScoringContext::shared
                                         ? plan.shared_context
                                         : plan.per_candidate[j];
        try {
            backend::ScoringResult r = backends[i]->score_completion(
                {context, candidates[j].text, backends[i]->descriptor().name});
            if (want_aux && !r.distributions)
                throw ProtocolError("backend '" + backends[i]->descriptor().name +
                                    "' returned no token distributions");
            const double avg = metrics::avg_log_likelihood(r.token_scores);
            std::lock_guard<std::mutex> lock(mu);
            matrix.entries[i][j] =
                consensus::ScoreMatrix::Entry{avg, r.token_count};
            if (want_aux) dists[i][j] = std::move(r.distributions);
            ++ledger.scoring_calls;
        } catch (const Error&) {
            std::lock_guard<std::mutex> lock(mu);
            ++ledger.failed_scoring_calls;
        }
    });

    if (want_aux) {
        // Columns where any model's distributions are missing or unusable stay
        // empty; calibrated() then reports "scores missing" for them.
        std::vector<std::vector<double>> aux(m);
        for (std::size_t j = 0; j < m; ++j) {
            bool have_all = true;
            for (std::size_t i = 0; i < n; ++i)
                if (!dists[i][j]) {
                    have_all = false;
                    break;
                }
            if (!have_all) continue;
            try {
                if (*aux_metric == metrics::Metric::kl_disagreement) {
                    std::vector<std::vector<metrics::TokenDistribution>> seqs;
                    seqs.reserve(n);
                    for (std::size_t i = 0; i < n; ++i) seqs.push_back(*dists[i][j]);
                    aux[j] = metrics::kl_disagreement_per_model(seqs);
                } else {
                    std::vector<double> vals;
                    vals.reserve(n);
                    for (std::size_t i = 0; i < n; ++i)
                        vals.push_back(aux_value(*aux_metric, *dists[i][j]));
                    aux[j] = std::move(vals);
                }
            } catch (const Error&) {
                aux[j].clear();
            }
        }
        matrix.aux_per_model = std::move(aux);
        matrix.aux_metric = *aux_metric;
    }
    return matrix;
}

}  // namespace quorum::debate
