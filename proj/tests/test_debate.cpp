// Debate orchestration: prompt contracts, deterministic seeded fan-out,
// failure handling, ledger accounting, and the scoring fan-out.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "quorum/debate.hpp"

using namespace quorum;
using namespace quorum::debate;
using nlohmann::json;

namespace {

const std::string kQ = "What is 7 + 8?";
const answer::TaskKind kNumeric = answer::TaskKind::numeric();

// Three agents: A says 15 throughout; B starts at 12 and flips to 15; C holds
// 12. Every backend can teacher-force every final-round candidate.
const char* kScriptA = R"({
  "entries": [
    {"context_contains": ["What is 7 + 8?", "Below are the answers"],
     "generations": [{"text": "Everyone checks out. #### 15", "token_probs": [0.9, 0.9]}],
     "scores": [
       {"completion": "Everyone checks out. #### 15", "token_probs": [0.9, 0.8]},
       {"completion": "Hold on, 15 is right. #### 15", "token_probs": [0.7, 0.7]},
       {"completion": "Sticking with 12. #### 12", "token_probs": [0.5, 0.5]}
     ]},
    {"context_contains": ["What is 7 + 8?"],
     "generations": [{"text": "7 + 8 = 15. #### 15", "token_probs": [0.9]}]}
  ]
})";

const char* kScriptB = R"({
  "entries": [
    {"context_contains": ["What is 7 + 8?", "Below are the answers"],
     "generations": [{"text": "Hold on, 15 is right. #### 15", "token_probs": [0.8, 0.8]}],
     "scores": [
       {"completion": "Everyone checks out. #### 15", "token_probs": [0.8, 0.8]},
       {"completion": "Hold on, 15 is right. #### 15", "token_probs": [0.9, 0.9]},
       {"completion": "Sticking with 12. #### 12", "token_probs": [0.4, 0.4]}
     ]},
    {"context_contains": ["What is 7 + 8?"],
     "generations": [{"text": "I get 12. #### 12", "token_probs": [0.7]}]}
  ]
})";

const char* kScriptC = R"({
  "entries": [
    {"context_contains": ["What is 7 + 8?", "Below are the answers"],
     "generations": [{"text": "Sticking with 12. #### 12", "token_probs": [0.9, 0.9]}],
     "scores": [
       {"completion": "Everyone checks out. #### 15", "token_probs": [0.6, 0.6]},
       {"completion": "Hold on, 15 is right. #### 15", "token_probs": [0.6, 0.5]},
       {"completion": "Sticking with 12. #### 12", "token_probs": [0.9, 0.9]}
     ]},
    {"context_contains": ["What is 7 + 8?"],
     "generations": [{"text": "Twelve. #### 12", "token_probs": [0.7]}]}
  ]
})";

// Four alternatives selected by seed; for seed-stream tests.
const char* kScriptAlts = R"({
  "entries": [
    {"context_contains": ["What is 7 + 8?"],
     "generations": [
       {"text": "#### 10", "token_probs": [0.5]},
       {"text": "#### 11", "token_probs": [0.5]},
       {"text": "#### 12", "token_probs": [0.5]},
       {"text": "#### 13", "token_probs": [0.5]}
     ]}
  ]
})";

std::shared_ptr<backend::Backend> mk(const std::string& name,
                                     const char* script,
                                     backend::MockOptions opts = {},
                                     bool full_distribution = false) {
    backend::BackendDescriptor d;
    d.name = name;
    d.endpoint = "mock";
    d.model_id = name;
    d.sampling.max_tokens = 64;
    d.capabilities.full_distribution = full_distribution;
    return backend::mock_from_script(
        d, backend::ScriptTable::parse(json::parse(script)), opts);
}

std::vector<std::shared_ptr<backend::Backend>> trio(
    backend::MockOptions a = {}, backend::MockOptions b = {},
    backend::MockOptions c = {}) {
    return {mk("alpha", kScriptA, a), mk("beta", kScriptB, b),
            mk("gamma", kScriptC, c)};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("round-1 prompts carry the question and the format directive") {
    const std::string numeric = build_round1_prompt(kQ, kNumeric);
    CHECK(contains(numeric, "Problem: What is 7 + 8?"));
    CHECK(contains(numeric, "#### <answer>"));

    const auto task = answer::TaskKind::multiple_choice(
        {{"A", "Paris"}, {"B", "London"}, {"C", "Berlin"}, {"D", "Madrid"}});
    const std::string mc = build_round1_prompt("Which city?", task);
    CHECK(contains(mc, "Question: Which city?"));
    CHECK(contains(mc, "(A) Paris"));
    CHECK(contains(mc, "(B) London"));
    CHECK(contains(mc, "(C) Berlin"));
    CHECK(contains(mc, "(D) Madrid"));
    CHECK(contains(mc, "the answer is (X)"));

    CHECK_THROWS_AS(build_round1_prompt("", kNumeric), Error);
}

TEST_CASE("prompt templates match their data files byte for byte") {
    CHECK(slurp(QUORUM_DATA_DIR "/prompts/round1_numeric.txt") ==
          std::string(round1_numeric_template()));
    CHECK(slurp(QUORUM_DATA_DIR "/prompts/round1_choice.txt") ==
          std::string(round1_choice_template()));
    CHECK(slurp(QUORUM_DATA_DIR "/prompts/debate.txt") ==
          std::string(debate_template()));
}

TEST_CASE("debate prompts label agents and mark the reader's own slot") {
    const std::vector<Utterance> prev = {{"first says 15", {}, false},
                                         {"second says 12", {}, false},
                                         {"third says 12", {}, false}};
    const std::string own = build_debate_prompt(kQ, kNumeric, prev, 2, 1);
    CHECK(own.starts_with(build_round1_prompt(kQ, kNumeric)));
    CHECK(contains(own, "all 3 agents in round 1"));
    CHECK(contains(own, "Agent 1:\nfirst says 15"));
    CHECK(contains(own, "Agent 2 (your previous answer):\nsecond says 12"));
    CHECK(contains(own, "Agent 3:\nthird says 12"));
    CHECK(contains(own, "Give your revised final answer"));

    SUBCASE("anonymized form marks nobody") {
        const std::string anon =
            build_debate_prompt(kQ, kNumeric, prev, 2, std::nullopt);
        CHECK_FALSE(contains(anon, "your previous answer"));
        CHECK(contains(anon, "Agent 1:\nfirst says 15"));
        CHECK(contains(anon, "Agent 2:\nsecond says 12"));
        CHECK(contains(anon, "Agent 3:\nthird says 12"));
        // Re-building yields the identical string: nothing reader-specific.
        CHECK(anon == build_debate_prompt(kQ, kNumeric, prev, 2, std::nullopt));
    }
    SUBCASE("later rounds reference the previous round number") {
        CHECK(contains(build_debate_prompt(kQ, kNumeric, prev, 3, 0),
                       "in round 2"));
    }
    SUBCASE("failed or empty slots show a placeholder") {
        std::vector<Utterance> with_fail = prev;
        with_fail[2] = {"", backend::FinishReason::error, true};
        CHECK(contains(build_debate_prompt(kQ, kNumeric, with_fail, 2, 0),
                       "Agent 3:\n[no response]"));
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(build_debate_prompt(kQ, kNumeric, prev, 1, 0), Error);
        CHECK_THROWS_AS(build_debate_prompt(kQ, kNumeric, {}, 2, std::nullopt),
                        Error);
        CHECK_THROWS_AS(build_debate_prompt(kQ, kNumeric, prev, 2, 3), Error);
    }
    SUBCASE("placeholders inside user text stay literal") {
        const std::string tricky =
            build_debate_prompt("What is {agents} + {n}?", kNumeric, prev, 2, 0);
        CHECK(contains(tricky, "What is {agents} + {n}?"));
        CHECK(contains(tricky, "all 3 agents"));
    }
}

TEST_CASE("run_debate: shape, content, and generation accounting") {
    auto backends = trio();
    CostLedger ledger;
    RunOptions opts;
    opts.rounds = 3;
    const Transcript t = run_debate(backends, kQ, kNumeric, opts, 42, ledger);

    REQUIRE(t.rounds() == 3);
    REQUIRE(t.models() == 3);
    CHECK(t.turns[0][0].text == "7 + 8 = 15. #### 15");
    CHECK(t.turns[0][1].text == "I get 12. #### 12");
    CHECK(t.turns[0][2].text == "Twelve. #### 12");
    for (int k : {1, 2}) {
        CHECK(t.turns[k][0].text == "Everyone checks out. #### 15");
        CHECK(t.turns[k][1].text == "Hold on, 15 is right. #### 15");
        CHECK(t.turns[k][2].text == "Sticking with 12. #### 12");
    }
    CHECK(ledger.generation_calls == 9);
    CHECK(ledger.failed_generation_calls == 0);
    CHECK(ledger.scoring_calls == 0);

    SUBCASE("single round costs N calls") {
        CostLedger l2;
        RunOptions one;
        const Transcript t1 = run_debate(backends, kQ, kNumeric, one, 42, l2);
        CHECK(t1.rounds() == 1);
        CHECK(l2.generation_calls == 3);
    }
    SUBCASE("candidates come from the final round with extracted answers") {
        const auto cands = make_candidates(t.turns.back(), kNumeric, 3);
        REQUIRE(cands.size() == 3);
        CHECK(cands[0].candidate_id == 0);
        CHECK(cands[0].model_index == 0);
        CHECK(cands[0].round == 3);
        REQUIRE(cands[0].answer.has_value());
        CHECK(cands[0].answer->value == "15");
        CHECK(cands[1].answer->value == "15");
        CHECK(cands[2].answer->value == "12");
        CHECK(consensus::vote(cands).kind ==
              consensus::VoteResult::Kind::majority);
    }
}

TEST_CASE("failed generations abstain and later rounds see the placeholder") {
    // beta's first call fails; its debate entry additionally demands that the
    // placeholder reached it, proving the round-2 prompt carried it.
    const std::string script_b_strict = R"({
      "entries": [
        {"context_contains": ["What is 7 + 8?", "Below are the answers", "[no response]"],
         "generations": [{"text": "Hold on, 15 is right. #### 15", "token_probs": [0.8, 0.8]}]},
        {"context_contains": ["What is 7 + 8?"],
         "generations": [{"text": "I get 12. #### 12", "token_probs": [0.7]}]}
      ]})";
    backend::MockOptions fail_once;
    fail_once.fail_first_generations = 1;
    std::vector<std::shared_ptr<backend::Backend>> backends = {
        mk("alpha", kScriptA), mk("beta", script_b_strict.c_str(), fail_once),
        mk("gamma", kScriptC)};

    CostLedger ledger;
    RunOptions opts;
    opts.rounds = 2;
    const Transcript t = run_debate(backends, kQ, kNumeric, opts, 7, ledger);

    CHECK(t.turns[0][1].failed);
    CHECK(t.turns[0][1].text.empty());
    CHECK_FALSE(t.turns[1][1].failed);
    CHECK(t.turns[1][1].text == "Hold on, 15 is right. #### 15");
    CHECK(ledger.generation_calls == 5);
    CHECK(ledger.failed_generation_calls == 1);

    const auto round1_cands = make_candidates(t.turns[0], kNumeric, 1);
    CHECK_FALSE(round1_cands[1].answer.has_value());  // abstention
    CHECK(round1_cands[0].answer.has_value());
}

TEST_CASE("derived seeds are deterministic and distinct") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t k = 0; k < 5; ++k)
        for (std::uint64_t i = 0; i < 7; ++i) {
            const std::uint64_t s = derive_seed(123, k, i);
            CHECK(s == derive_seed(123, k, i));
            CHECK(seen.insert(s).second);
        }
    CHECK(derive_seed(1, 0, 0) != derive_seed(2, 0, 0));
}

TEST_CASE("same base seed reproduces a debate; seeds change selections") {
    std::vector<std::shared_ptr<backend::Backend>> backends = {
        mk("a", kScriptAlts), mk("b", kScriptAlts), mk("c", kScriptAlts)};
    RunOptions opts;
    opts.rounds = 1;

    CostLedger l1, l2;
    const Transcript t1 = run_debate(backends, kQ, kNumeric, opts, 99, l1);
    const Transcript t2 = run_debate(backends, kQ, kNumeric, opts, 99, l2);
    CHECK(t1 == t2);
    CHECK(l1 == l2);

    bool any_difference = false;
    for (std::uint64_t base = 0; base < 20 && !any_difference; ++base) {
        const Transcript other =
            run_debate(backends, kQ, kNumeric, opts, base, l1);
        any_difference = !(other == t1);
    }
    CHECK(any_difference);
}

TEST_CASE("delays and concurrency level do not change results") {
    RunOptions opts;
    opts.rounds = 2;
    CostLedger baseline_ledger;
    const Transcript baseline =
        run_debate(trio(), kQ, kNumeric, opts, 5, baseline_ledger);

    backend::MockOptions d1, d2, d3;
    d1.max_delay = std::chrono::milliseconds(25);
    d1.delay_seed = 11;
    d2.max_delay = std::chrono::milliseconds(25);
    d2.delay_seed = 22;
    d3.max_delay = std::chrono::milliseconds(25);
    d3.delay_seed = 33;

    CostLedger delayed_ledger;
    const Transcript delayed =
        run_debate(trio(d1, d2, d3), kQ, kNumeric, opts, 5, delayed_ledger);
    CHECK(delayed == baseline);
    CHECK(delayed_ledger == baseline_ledger);

    for (int conc : {1, 2, 8}) {
        RunOptions narrow = opts;
        narrow.concurrency = conc;
        CostLedger l;
        CHECK(run_debate(trio(), kQ, kNumeric, narrow, 5, l) == baseline);
        CHECK(l == baseline_ledger);
    }
}

TEST_CASE("run_best_of_n samples one backend under distinct seeds") {
    auto b = mk("solo", kScriptAlts);
    CostLedger ledger;
    RunOptions opts;
    const auto utts = run_best_of_n(b, kQ, kNumeric, 8, opts, 31, ledger);
    REQUIRE(utts.size() == 8);
    CHECK(ledger.generation_calls == 8);

    CostLedger again;
    CHECK(run_best_of_n(b, kQ, kNumeric, 8, opts, 31, again) == utts);

    std::set<std::string> texts;
    for (const auto& u : utts) texts.insert(u.text);
    CHECK(texts.size() >= 2);  // distinct seeds actually vary the samples

    const auto cands = make_candidates(utts, kNumeric, 1, 0);
    for (std::size_t j = 0; j < cands.size(); ++j) {
        CHECK(cands[j].candidate_id == static_cast<int>(j));
        CHECK(cands[j].model_index == 0);
        REQUIRE(cands[j].answer.has_value());
    }
}

TEST_CASE("scoring plans collapse to round 1 and split per model view") {
    auto backends = trio();
    CostLedger ledger;
    RunOptions opts;
    opts.rounds = 2;
    const Transcript t = run_debate(backends, kQ, kNumeric, opts, 42, ledger);

    const ScoringPlan shared =
        make_scoring_plan(kQ, kNumeric, t, ScoringContext::shared);
    CHECK(shared.shared_context ==
          build_debate_prompt(kQ, kNumeric, t.turns[0], 2, std::nullopt));
    CHECK_FALSE(contains(shared.shared_context, "your previous answer"));

    const ScoringPlan per =
        make_scoring_plan(kQ, kNumeric, t, ScoringContext::per_model_view);
    REQUIRE(per.per_candidate.size() == 3);
    for (int j = 0; j < 3; ++j) {
        CHECK(per.per_candidate[j] ==
              build_debate_prompt(kQ, kNumeric, t.turns[0], 2, j));
        CHECK(contains(per.per_candidate[j],
                       "Agent " + std::to_string(j + 1) +
                           " (your previous answer):"));
    }

    RunOptions one;
    CostLedger l1;
    const Transcript t1 = run_debate(backends, kQ, kNumeric, one, 42, l1);
    const ScoringPlan collapsed_shared =
        make_scoring_plan(kQ, kNumeric, t1, ScoringContext::shared);
    const ScoringPlan collapsed_per =
        make_scoring_plan(kQ, kNumeric, t1, ScoringContext::per_model_view);
    const std::string round1 = build_round1_prompt(kQ, kNumeric);
    CHECK(collapsed_shared.shared_context == round1);
    for (const auto& ctx : collapsed_per.per_candidate) CHECK(ctx == round1);
}

TEST_CASE("score_candidates fills an N x M matrix and counts calls") {
    auto backends = trio();
    CostLedger ledger;
    RunOptions opts;
    opts.rounds = 2;
    const Transcript t = run_debate(backends, kQ, kNumeric, opts, 42, ledger);
    const auto cands = make_candidates(t.turns.back(), kNumeric, 2);
    const ScoringPlan plan =
        make_scoring_plan(kQ, kNumeric, t, ScoringContext::shared);

    const auto matrix = score_candidates(backends, cands, plan, std::nullopt,
                                         opts, ledger);
    CHECK(matrix.models() == 3);
    CHECK(matrix.columns() == 3);
    REQUIRE(matrix.complete());
    CHECK(ledger.scoring_calls == 9);
    CHECK(ledger.failed_scoring_calls == 0);

    // alpha scored its own candidate with probs {0.9, 0.8}.
    CHECK(matrix.entries[0][0]->avg_logprob ==
          doctest::Approx((std::log(0.9) + std::log(0.8)) / 2).epsilon(1e-12));
    CHECK(matrix.entries[0][0]->token_count == 2);
    // gamma scored beta's candidate with probs {0.6, 0.5}.
    CHECK(matrix.entries[2][1]->avg_logprob ==
          doctest::Approx((std::log(0.6) + std::log(0.5)) / 2).epsilon(1e-12));

    SUBCASE("per-model-view contexts also reach every backend") {
        CostLedger l2;
        const ScoringPlan per =
            make_scoring_plan(kQ, kNumeric, t, ScoringContext::per_model_view);
        const auto m2 =
            score_candidates(backends, cands, per, std::nullopt, opts, l2);
        CHECK(m2.complete());
        CHECK(l2.scoring_calls == 9);
    }
    SUBCASE("scoring failures leave holes and are tallied") {
        backend::MockOptions flaky;
        flaky.fail_first_scorings = 2;
        auto shaky = trio({}, flaky, {});
        CostLedger l3;
        const auto m3 =
            score_candidates(shaky, cands, plan, std::nullopt, opts, l3);
        CHECK_FALSE(m3.complete());
        CHECK(l3.scoring_calls == 7);
        CHECK(l3.failed_scoring_calls == 2);
    }
    SUBCASE("concurrency level does not change the matrix") {
        for (int conc : {1, 6}) {
            RunOptions narrow = opts;
            narrow.concurrency = conc;
            CostLedger l4;
            const auto m4 =
                score_candidates(backends, cands, plan, std::nullopt, narrow, l4);
            REQUIRE(m4.complete());
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    CHECK(m4.entries[i][j]->avg_logprob ==
                          matrix.entries[i][j]->avg_logprob);
                    CHECK(m4.entries[i][j]->token_count ==
                          matrix.entries[i][j]->token_count);
                }
        }
    }
}

TEST_CASE("two-model tie resolves through the scored matrix") {
    std::vector<std::shared_ptr<backend::Backend>> pair = {
        mk("alpha", kScriptA), mk("gamma", kScriptC)};
    CostLedger ledger;
    RunOptions opts;
    opts.rounds = 2;
    const Transcript t = run_debate(pair, kQ, kNumeric, opts, 42, ledger);
    const auto cands = make_candidates(t.turns.back(), kNumeric, 2);
    const auto vote = consensus::vote(cands);
    REQUIRE(vote.kind == consensus::VoteResult::Kind::tie);

    const ScoringPlan plan =
        make_scoring_plan(kQ, kNumeric, t, ScoringContext::shared);
    const auto matrix =
        score_candidates(pair, cands, plan, std::nullopt, opts, ledger);
    REQUIRE(matrix.complete());
    const auto decision = consensus::tie_break_metric(
        vote, cands, matrix, metrics::Metric::log_likelihood);
    // Candidate 0 ("15") carries the higher calibrated likelihood.
    CHECK(decision.chosen == 0);
    CHECK(decision.policy == consensus::Decision::Policy::metric);
}

TEST_CASE("distribution metrics ride along as aux values") {
    const char* dist_a = R"({
      "vocab_size": 4,
      "entries": [
        {"context_contains": ["What is 7 + 8?"],
         "scores": [{"completion": "#### 15", "token_probs": [0.5, 0.5],
                     "distributions": [[0.25,0.25,0.25,0.25],[0.25,0.25,0.25,0.25]]}]}
      ]})";
    const char* dist_b = R"({
      "vocab_size": 4,
      "entries": [
        {"context_contains": ["What is 7 + 8?"],
         "scores": [{"completion": "#### 15", "token_probs": [0.4, 0.6],
                     "distributions": [[0.4,0.3,0.2,0.1],[0.4,0.3,0.2,0.1]]}]}
      ]})";
    std::vector<std::shared_ptr<backend::Backend>> pair = {
        mk("a", dist_a, {}, true), mk("b", dist_b, {}, true)};
    const std::vector<Utterance> utts = {{"#### 15", {}, false}};
    const auto cands = make_candidates(utts, kNumeric, 1, 0);
    Transcript t;
    t.turns.push_back(utts);
    const ScoringPlan plan =
        make_scoring_plan(kQ, kNumeric, t, ScoringContext::shared);
    RunOptions opts;

    auto make_dist = [](std::vector<std::pair<std::int32_t, double>> probs) {
        return metrics::TokenDistribution::from_probs(std::move(probs), 4);
    };
    const std::vector<metrics::TokenDistribution> rows_a = {
        make_dist({{0, 0.25}, {1, 0.25}, {2, 0.25}, {3, 0.25}}),
        make_dist({{0, 0.25}, {1, 0.25}, {2, 0.25}, {3, 0.25}})};
    const std::vector<metrics::TokenDistribution> rows_b = {
        make_dist({{0, 0.4}, {1, 0.3}, {2, 0.2}, {3, 0.1}}),
        make_dist({{0, 0.4}, {1, 0.3}, {2, 0.2}, {3, 0.1}})};

    SUBCASE("entropy per scorer, calibrated to the cross-model mean") {
        CostLedger ledger;
        const auto m = score_candidates(pair, cands, plan,
                                        metrics::Metric::entropy, opts, ledger);
        REQUIRE(m.complete());
        REQUIRE(m.aux_metric == metrics::Metric::entropy);
        REQUIRE(m.aux_per_model.has_value());
        REQUIRE((*m.aux_per_model)[0].size() == 2);
        CHECK((*m.aux_per_model)[0][0] ==
              doctest::Approx(metrics::entropy(rows_a)).epsilon(1e-12));
        CHECK((*m.aux_per_model)[0][1] ==
              doctest::Approx(metrics::entropy(rows_b)).epsilon(1e-12));
        const auto cal = m.calibrated(0, metrics::Metric::entropy);
        CHECK(cal.value == doctest::Approx((metrics::entropy(rows_a) +
                                            metrics::entropy(rows_b)) /
                                           2)
                               .epsilon(1e-12));
    }
    SUBCASE("KL disagreement decomposes per model") {
        CostLedger ledger;
        const auto m = score_candidates(
            pair, cands, plan, metrics::Metric::kl_disagreement, opts, ledger);
        REQUIRE(m.complete());
        const std::vector<std::vector<metrics::TokenDistribution>> seqs = {
            rows_a, rows_b};
        const auto expected = metrics::kl_disagreement_per_model(seqs);
        REQUIRE((*m.aux_per_model)[0].size() == 2);
        CHECK((*m.aux_per_model)[0][0] == doctest::Approx(expected[0]).epsilon(1e-12));
        CHECK((*m.aux_per_model)[0][1] == doctest::Approx(expected[1]).epsilon(1e-12));
        const auto cal = m.calibrated(0, metrics::Metric::kl_disagreement);
        CHECK(cal.value ==
              doctest::Approx(metrics::kl_disagreement(seqs)).epsilon(1e-12));
    }
    SUBCASE("backends without full_distribution are rejected up front") {
        std::vector<std::shared_ptr<backend::Backend>> blind = {
            mk("a", dist_a, {}, true), mk("b", dist_b, {}, false)};
        CostLedger ledger;
        CHECK_THROWS_AS(score_candidates(blind, cands, plan,
                                         metrics::Metric::entropy, opts, ledger),
                        ConfigError);
    }
    SUBCASE("a scorer that returns no rows fails that pair") {
        const char* no_rows = R"({
          "entries": [
            {"context_contains": ["What is 7 + 8?"],
             "scores": [{"completion": "#### 15", "token_probs": [0.4, 0.6]}]}
          ]})";
        std::vector<std::shared_ptr<backend::Backend>> mixed = {
            mk("a", dist_a, {}, true), mk("b", no_rows, {}, true)};
        CostLedger ledger;
        const auto m = score_candidates(mixed, cands, plan,
                                        metrics::Metric::entropy, opts, ledger);
        CHECK_FALSE(m.complete());
        CHECK(ledger.failed_scoring_calls == 1);
        CHECK_THROWS_AS(m.calibrated(0, metrics::Metric::entropy), Error);
    }
}

TEST_CASE("nine-generation budget parity across ensemble shapes") {
    RunOptions three_rounds;
    three_rounds.rounds = 3;
    CostLedger debate_ledger;
    run_debate(trio(), kQ, kNumeric, three_rounds, 1, debate_ledger);
    CHECK(debate_ledger.generation_calls == 9);

    CostLedger bo9_ledger;
    RunOptions one;
    run_best_of_n(mk("solo", kScriptAlts), kQ, kNumeric, 9, one, 1, bo9_ledger);
    CHECK(bo9_ledger.generation_calls == 9);

    std::vector<std::shared_ptr<backend::Backend>> nine;
    for (int i = 0; i < 9; ++i)
        nine.push_back(mk("w" + std::to_string(i), kScriptAlts));
    CostLedger wide_ledger;
    run_debate(nine, kQ, kNumeric, one, 1, wide_ledger);
    CHECK(wide_ledger.generation_calls == 9);
}
