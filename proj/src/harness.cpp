#include "quorum/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace quorum::harness {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Seed streams. A question's base seed feeds the debate engine's per-round
// streams; the tie-break RNG gets its own stream so adding rounds never
// perturbs random tie-breaks.
constexpr std::uint64_t kQuestionStream = 0x5154;
constexpr std::uint64_t kTieBreakStream = 0x5442;

[[noreturn]] void bad(const std::string& ctx, const std::string& msg) {
    throw ConfigError(ctx + ": " + msg);
}

const json& req_field(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) bad(ctx, std::string("missing field '") + key + "'");
    return j.at(key);
}

std::string req_string(const json& j, const char* key, const std::string& ctx) {
    const json& v = req_field(j, key, ctx);
    if (!v.is_string()) bad(ctx, std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

std::string opt_string(const json& j, const char* key, const std::string& ctx,
                       std::string fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string())
        bad(ctx, std::string("field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
}

int opt_int(const json& j, const char* key, const std::string& ctx, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer())
        bad(ctx, std::string("field '") + key + "' must be an integer");
    return j.at(key).get<int>();
}

bool opt_bool(const json& j, const char* key, const std::string& ctx,
              bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean())
        bad(ctx, std::string("field '") + key + "' must be a boolean");
    return j.at(key).get<bool>();
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& ctx) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(known.begin(), known.end(), [&](const char* k) {
                return key == k;
            }) == known.end())
            bad(ctx, "unknown field '" + key + "'");
    }
}

// --- enum <-> name tables ---------------------------------------------------

const char* kind_name(answer::Kind k) {
    return k == answer::Kind::numeric ? "numeric" : "multiple_choice";
}

answer::Kind parse_kind(const std::string& s, const std::string& ctx) {
    if (s == "numeric") return answer::Kind::numeric;
    if (s == "multiple_choice") return answer::Kind::multiple_choice;
    bad(ctx, "task must be numeric|multiple_choice, got '" + s + "'");
}

const char* vote_kind_name(consensus::VoteResult::Kind k) {
    switch (k) {
        case consensus::VoteResult::Kind::majority: return "majority";
        case consensus::VoteResult::Kind::tie: return "tie";
        case consensus::VoteResult::Kind::all_abstain: return "all_abstain";
    }
    throw Error("unknown vote kind");
}

consensus::VoteResult::Kind parse_vote_kind(const std::string& s,
                                            const std::string& ctx) {
    if (s == "majority") return consensus::VoteResult::Kind::majority;
    if (s == "tie") return consensus::VoteResult::Kind::tie;
    if (s == "all_abstain") return consensus::VoteResult::Kind::all_abstain;
    bad(ctx, "vote kind must be majority|tie|all_abstain, got '" + s + "'");
}

const char* decision_policy_name(consensus::Decision::Policy p) {
    switch (p) {
        case consensus::Decision::Policy::metric: return "metric";
        case consensus::Decision::Policy::random: return "random";
        case consensus::Decision::Policy::oracle: return "oracle";
        case consensus::Decision::Policy::majority: return "majority";
    }
    throw Error("unknown decision policy");
}

consensus::Decision::Policy parse_decision_policy(const std::string& s,
                                                  const std::string& ctx) {
    if (s == "metric") return consensus::Decision::Policy::metric;
    if (s == "random") return consensus::Decision::Policy::random;
    if (s == "oracle") return consensus::Decision::Policy::oracle;
    if (s == "majority") return consensus::Decision::Policy::majority;
    bad(ctx, "decision policy must be metric|random|oracle|majority, got '" + s +
                 "'");
}

const char* aggregation_name(consensus::TieAggregation a) {
    return a == consensus::TieAggregation::best_candidate ? "best_candidate"
                                                          : "mean_over_candidates";
}

consensus::TieAggregation parse_aggregation(const std::string& s,
                                            const std::string& ctx) {
    if (s == "best_candidate") return consensus::TieAggregation::best_candidate;
    if (s == "mean_over_candidates")
        return consensus::TieAggregation::mean_over_candidates;
    bad(ctx, "aggregation must be best_candidate|mean_over_candidates, got '" + s +
                 "'");
}

const char* scoring_context_name(debate::ScoringContext c) {
    return c == debate::ScoringContext::shared ? "shared" : "per_model_view";
}

debate::ScoringContext parse_scoring_context(const std::string& s,
                                             const std::string& ctx) {
    if (s == "shared") return debate::ScoringContext::shared;
    if (s == "per_model_view") return debate::ScoringContext::per_model_view;
    bad(ctx, "scoring_context must be shared|per_model_view, got '" + s + "'");
}

metrics::Metric parse_metric_or_die(const std::string& s, const std::string& ctx) {
    if (auto m = metrics::parse_metric(s)) return *m;
    std::string names;
    for (metrics::Metric m : metrics::all_metrics()) {
        if (!names.empty()) names += '|';
        names += metrics::metric_name(m);
    }
    bad(ctx, "metric must be one of " + names + ", got '" + s + "'");
}

// --- datasets ---------------------------------------------------------------

bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c); });
}

QuestionRecord parse_gsm8k_line(const json& j, const std::string& ctx) {
    QuestionRecord rec;
    rec.question = req_string(j, "question", ctx);
    rec.task = answer::TaskKind::numeric();
    const std::string answer_text = req_string(j, "answer", ctx);
    const std::size_t marker = answer_text.rfind("####");
    if (marker == std::string::npos)
        bad(ctx, "gold answer must end with '#### <number>'");
    const auto gold = answer::extract_numeric(answer_text.substr(marker));
    if (!gold) bad(ctx, "no number after the '####' gold marker");
    rec.gold = *gold;
    return rec;
}

QuestionRecord parse_mcq_line(const json& j, const std::string& ctx) {
    QuestionRecord rec;
    rec.question = req_string(j, "question", ctx);
    const json& choices = req_field(j, "choices", ctx);
    if (!choices.is_array() || choices.size() < 2)
        bad(ctx, "choices must be an array of at least 2 strings");
    if (choices.size() > 26) bad(ctx, "at most 26 choices are supported");
    std::vector<answer::Choice> parsed;
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (!choices.at(i).is_string())
            bad(ctx, "choices[" + std::to_string(i) + "] must be a string");
        parsed.push_back({std::string(1, static_cast<char>('A' + i)),
                          choices.at(i).get<std::string>()});
    }
    const json& key = req_field(j, "answerKey", ctx);
    if (!key.is_number_integer())
        bad(ctx, "answerKey must be an integer (1-based index into choices)");
    const long long k = key.get<long long>();
    if (k < 1 || k > static_cast<long long>(parsed.size()))
        bad(ctx, "answerKey " + std::to_string(k) + " is out of range 1.." +
                     std::to_string(parsed.size()));
    const std::string label = parsed[static_cast<std::size_t>(k - 1)].label;
    rec.task = answer::TaskKind::multiple_choice(std::move(parsed));
    rec.gold = answer::CanonicalAnswer::choice(label, rec.task);
    return rec;
}

// --- serialization helpers --------------------------------------------------

json answer_or_null(const std::optional<answer::CanonicalAnswer>& a) {
    if (!a) return nullptr;
    return a->value;
}

ordered_json ledger_to_json(const debate::CostLedger& l) {
    ordered_json j;
    j["generation_calls"] = l.generation_calls;
    j["scoring_calls"] = l.scoring_calls;
    j["failed_generation_calls"] = l.failed_generation_calls;
    j["failed_scoring_calls"] = l.failed_scoring_calls;
    return j;
}

debate::CostLedger ledger_from_json(const json& j, const std::string& ctx) {
    if (!j.is_object()) bad(ctx, "ledger must be an object");
    debate::CostLedger l;
    l.generation_calls = req_field(j, "generation_calls", ctx).get<long long>();
    l.scoring_calls = req_field(j, "scoring_calls", ctx).get<long long>();
    l.failed_generation_calls =
        req_field(j, "failed_generation_calls", ctx).get<long long>();
    l.failed_scoring_calls =
        req_field(j, "failed_scoring_calls", ctx).get<long long>();
    return l;
}

ordered_json vote_to_json(const consensus::VoteResult& v) {
    ordered_json j;
    j["kind"] = vote_kind_name(v.kind);
    ordered_json answers = ordered_json::array();
    for (const auto& a : v.answers) answers.push_back(a.value);
    j["answers"] = std::move(answers);
    j["count"] = v.count;
    return j;
}

consensus::VoteResult vote_from_json(const json& j, answer::Kind kind,
                                     const std::string& ctx) {
    if (!j.is_object()) bad(ctx, "vote must be an object");
    consensus::VoteResult v;
    v.kind = parse_vote_kind(req_string(j, "kind", ctx), ctx);
    const json& answers = req_field(j, "answers", ctx);
    if (!answers.is_array()) bad(ctx, "vote answers must be an array");
    for (const auto& a : answers) {
        if (!a.is_string()) bad(ctx, "vote answers must be strings");
        v.answers.push_back(answer::CanonicalAnswer{a.get<std::string>(), kind});
    }
    v.count = opt_int(j, "count", ctx, 0);
    return v;
}

ordered_json decision_to_json(const consensus::Decision& d) {
    ordered_json j;
    j["chosen"] = d.chosen;
    j["policy"] = decision_policy_name(d.policy);
    ordered_json trace;
    if (d.trace.scores) {
        ordered_json scores = ordered_json::array();
        for (const auto& [cid, score] : *d.trace.scores) {
            ordered_json s;
            s["candidate_id"] = cid;
            s["metric"] = std::string(metrics::metric_name(score.metric));
            s["value"] = score.value;
            s["per_model"] = score.per_model;
            scores.push_back(std::move(s));
        }
        trace["scores"] = std::move(scores);
    } else {
        trace["scores"] = nullptr;
    }
    if (d.trace.rng_seed)
        trace["rng_seed"] = *d.trace.rng_seed;
    else
        trace["rng_seed"] = nullptr;
    trace["all_cases"] = d.trace.all_cases;
    trace["aggregation"] = aggregation_name(d.trace.aggregation);
    j["trace"] = std::move(trace);
    return j;
}

// The question-level vote is authoritative; the trace stores it by reference
// (it is always identical), so `vote` is passed back in here on load.
consensus::Decision decision_from_json(const json& j,
                                       const consensus::VoteResult& vote,
                                       const std::string& ctx) {
    if (!j.is_object()) bad(ctx, "decision must be an object");
    consensus::Decision d;
    d.chosen = req_field(j, "chosen", ctx).get<int>();
    d.policy = parse_decision_policy(req_string(j, "policy", ctx), ctx);
    d.trace.vote = vote;
    const json& trace = req_field(j, "trace", ctx);
    if (!trace.is_object()) bad(ctx, "trace must be an object");
    const json& scores = req_field(trace, "scores", ctx);
    if (!scores.is_null()) {
        if (!scores.is_array()) bad(ctx, "trace scores must be an array or null");
        std::vector<std::pair<int, metrics::CalibratedScore>> parsed;
        for (const auto& s : scores) {
            metrics::CalibratedScore score;
            score.metric = parse_metric_or_die(req_string(s, "metric", ctx), ctx);
            score.value = req_field(s, "value", ctx).get<double>();
            const json& per_model = req_field(s, "per_model", ctx);
            if (!per_model.is_array()) bad(ctx, "per_model must be an array");
            for (const auto& v : per_model) score.per_model.push_back(v.get<double>());
            parsed.emplace_back(req_field(s, "candidate_id", ctx).get<int>(),
                                std::move(score));
        }
        d.trace.scores = std::move(parsed);
    }
    const json& rng = req_field(trace, "rng_seed", ctx);
    if (!rng.is_null()) d.trace.rng_seed = rng.get<std::uint64_t>();
    d.trace.all_cases = opt_bool(trace, "all_cases", ctx, false);
    d.trace.aggregation =
        parse_aggregation(opt_string(trace, "aggregation", ctx, "best_candidate"),
                          ctx);
    return d;
}

ordered_json question_to_json(const QuestionOutcome& q) {
    ordered_json j;
    j["id"] = q.question_id;
    j["task"] = kind_name(q.task_kind);
    j["gold"] = q.gold.value;
    ordered_json cands = ordered_json::array();
    for (const auto& c : q.candidates) {
        ordered_json cj;
        cj["candidate_id"] = c.candidate_id;
        cj["model_index"] = c.model_index;
        cj["round"] = c.round;
        cj["answer"] = answer_or_null(c.answer);
        cands.push_back(std::move(cj));
    }
    j["candidates"] = std::move(cands);
    j["vote"] = vote_to_json(q.vote);
    j["decision"] = decision_to_json(q.decision);
    j["chosen_answer"] = answer_or_null(q.chosen_answer);
    j["correct"] = q.correct;
    j["oracle_hit"] = q.oracle_hit;
    j["partial"] = q.partial;
    j["ledger"] = ledger_to_json(q.ledger);
    return j;
}

QuestionOutcome question_from_json(const json& j, std::size_t index) {
    const std::string ctx = "report question " + std::to_string(index);
    if (!j.is_object()) bad(ctx, "must be an object");
    QuestionOutcome q;
    q.question_id = req_string(j, "id", ctx);
    q.task_kind = parse_kind(req_string(j, "task", ctx), ctx);
    q.gold = answer::CanonicalAnswer{req_string(j, "gold", ctx), q.task_kind};
    const json& cands = req_field(j, "candidates", ctx);
    if (!cands.is_array()) bad(ctx, "candidates must be an array");
    for (const auto& cj : cands) {
        consensus::Candidate c;
        c.candidate_id = req_field(cj, "candidate_id", ctx).get<int>();
        c.model_index = req_field(cj, "model_index", ctx).get<int>();
        c.round = req_field(cj, "round", ctx).get<int>();
        const json& a = req_field(cj, "answer", ctx);
        if (!a.is_null())
            c.answer = answer::CanonicalAnswer{a.get<std::string>(), q.task_kind};
        q.candidates.push_back(std::move(c));
    }
    q.vote = vote_from_json(req_field(j, "vote", ctx), q.task_kind, ctx);
    q.decision = decision_from_json(req_field(j, "decision", ctx), q.vote, ctx);
    const json& chosen = req_field(j, "chosen_answer", ctx);
    if (!chosen.is_null())
        q.chosen_answer =
            answer::CanonicalAnswer{chosen.get<std::string>(), q.task_kind};
    q.correct = opt_bool(j, "correct", ctx, false);
    q.oracle_hit = opt_bool(j, "oracle_hit", ctx, false);
    q.partial = opt_bool(j, "partial", ctx, false);
    q.ledger = ledger_from_json(req_field(j, "ledger", ctx), ctx);
    return q;
}

ordered_json summary_to_json(const Summary& s) {
    ordered_json j;
    j["questions"] = s.questions;
    j["correct"] = s.correct;
    j["majorities"] = s.majorities;
    j["ties"] = s.ties;
    j["all_abstain"] = s.all_abstain;
    j["oracle_hits"] = s.oracle_hits;
    j["partial_questions"] = s.partial_questions;
    j["accuracy"] = s.accuracy;
    j["upper_bound"] = s.upper_bound;
    j["tie_rate"] = s.tie_rate;
    j["ledger"] = ledger_to_json(s.ledger);
    return j;
}

Summary summary_from_json(const json& j) {
    const std::string ctx = "report summary";
    if (!j.is_object()) bad(ctx, "must be an object");
    Summary s;
    s.questions = opt_int(j, "questions", ctx, 0);
    s.correct = opt_int(j, "correct", ctx, 0);
    s.majorities = opt_int(j, "majorities", ctx, 0);
    s.ties = opt_int(j, "ties", ctx, 0);
    s.all_abstain = opt_int(j, "all_abstain", ctx, 0);
    s.oracle_hits = opt_int(j, "oracle_hits", ctx, 0);
    s.partial_questions = opt_int(j, "partial_questions", ctx, 0);
    s.accuracy = req_field(j, "accuracy", ctx).get<double>();
    s.upper_bound = req_field(j, "upper_bound", ctx).get<double>();
    s.tie_rate = req_field(j, "tie_rate", ctx).get<double>();
    s.ledger = ledger_from_json(req_field(j, "ledger", ctx), ctx);
    return s;
}

std::string iso8601_utc_now() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

const consensus::Candidate* find_candidate(
    const std::vector<consensus::Candidate>& candidates, int candidate_id) {
    for (const auto& c : candidates)
        if (c.candidate_id == candidate_id) return &c;
    return nullptr;
}

bool bears_tied_answer(const consensus::Candidate& c,
                       const consensus::VoteResult& vote) {
    if (!c.answer) return false;
    return std::any_of(vote.answers.begin(), vote.answers.end(),
                       [&](const answer::CanonicalAnswer& a) {
                           return answer::answers_equal(*c.answer, a);
                       });
}

std::optional<metrics::Metric> aux_for(metrics::Metric m) {
    if (metrics::requires_distribution(m)) return m;
    return std::nullopt;
}

// Selection under the configured policy; throws Error when scoring cannot
// complete (the caller degrades the question to partial).
consensus::Decision decide(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const QuestionRecord& q, const debate::Transcript& transcript,
    const QuestionOutcome& outcome, const RunConfig& config,
    const debate::RunOptions& ropts, std::uint64_t rng_seed,
    debate::CostLedger& ledger) {
    using consensus::TieBreakPolicy;
    const auto& cands = outcome.candidates;

    if (config.policy == RunPolicy::random)
        return consensus::select_final(cands, outcome.vote, TieBreakPolicy::random,
                                       nullptr, config.metric, rng_seed,
                                       config.aggregation);

    if (config.policy == RunPolicy::all_cases) {
        const auto plan = debate::make_scoring_plan(q.question, q.task, transcript,
                                                    config.scoring_context);
        const auto matrix = debate::score_candidates(backends, cands, plan,
                                                     aux_for(config.metric), ropts,
                                                     ledger);
        return consensus::apply_metric_all_cases(cands, matrix, config.metric);
    }

    // RunPolicy::metric: scores are consulted only to break a tie, and only
    // the candidates bearing tied answers are scored.
    if (outcome.vote.kind != consensus::VoteResult::Kind::tie)
        return consensus::select_final(cands, outcome.vote, TieBreakPolicy::metric,
                                       nullptr, config.metric, rng_seed,
                                       config.aggregation);

    const auto plan = debate::make_scoring_plan(q.question, q.task, transcript,
                                                config.scoring_context);
    std::vector<consensus::Candidate> tied;
    for (const auto& c : cands)
        if (bears_tied_answer(c, outcome.vote)) tied.push_back(c);

    debate::ScoringPlan subset;
    subset.mode = plan.mode;
    subset.shared_context = plan.shared_context;
    if (plan.mode == debate::ScoringContext::per_model_view)
        for (const auto& c : tied)
            subset.per_candidate.push_back(
                plan.per_candidate.at(static_cast<std::size_t>(c.candidate_id)));

    const auto matrix = debate::score_candidates(
        backends, tied, subset, aux_for(config.metric), ropts, ledger);
    return consensus::select_final(cands, outcome.vote, TieBreakPolicy::metric,
                                   &matrix, config.metric, rng_seed,
                                   config.aggregation);
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

std::string_view dataset_format_name(DatasetFormat f) {
    return f == DatasetFormat::gsm8k_jsonl ? "gsm8k_jsonl" : "mcq_jsonl";
}

std::optional<DatasetFormat> parse_dataset_format(std::string_view name) {
    if (name == "gsm8k_jsonl") return DatasetFormat::gsm8k_jsonl;
    if (name == "mcq_jsonl") return DatasetFormat::mcq_jsonl;
    return std::nullopt;
}

std::string_view run_policy_name(RunPolicy p) {
    switch (p) {
        case RunPolicy::metric: return "metric";
        case RunPolicy::random: return "random";
        case RunPolicy::all_cases: return "all_cases";
    }
    throw Error("unknown run policy");
}

std::optional<RunPolicy> parse_run_policy(std::string_view name) {
    if (name == "metric") return RunPolicy::metric;
    if (name == "random") return RunPolicy::random;
    if (name == "all_cases") return RunPolicy::all_cases;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<QuestionRecord> load_dataset(const std::string& path,
                                         DatasetFormat format) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset: " + path);
    std::vector<QuestionRecord> out;
    std::unordered_map<std::string, int> first_line_of_id;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        const std::string ctx = "dataset " + path + " line " + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            bad(ctx, std::string("JSON parse error: ") + e.what());
        }
        if (!j.is_object()) bad(ctx, "each line must be a JSON object");
        QuestionRecord rec;
        try {
            rec = format == DatasetFormat::gsm8k_jsonl ? parse_gsm8k_line(j, ctx)
                                                       : parse_mcq_line(j, ctx);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            bad(ctx, e.what());
        }
        rec.id = opt_string(j, "id", ctx, "q" + std::to_string(lineno));
        if (rec.id.empty()) bad(ctx, "id must be nonempty");
        const auto [it, inserted] = first_line_of_id.emplace(rec.id, lineno);
        if (!inserted)
            bad(ctx, "duplicate question id '" + rec.id + "' (first used on line " +
                         std::to_string(it->second) + ")");
        out.push_back(std::move(rec));
    }
    if (out.empty()) throw ConfigError("dataset " + path + ": no questions");
    return out;
}

// ---------------------------------------------------------------------------
// Run configuration

void RunConfig::validate() const {
    if (backends.empty())
        throw ConfigError("run config: at least one backend is required");
    for (const auto& d : backends) d.validate();
    for (std::size_t i = 0; i < backends.size(); ++i)
        for (std::size_t k = i + 1; k < backends.size(); ++k)
            if (backends[i].name == backends[k].name)
                throw ConfigError("run config: duplicate backend name '" +
                                  backends[i].name + "'");
    if (rounds < 1) throw ConfigError("run config: rounds must be >= 1");
    if (best_of < 1) throw ConfigError("run config: best_of must be >= 1");
    if (best_of > 1 && backends.size() != 1)
        throw ConfigError("run config: best_of > 1 requires exactly one backend");
    if (best_of > 1 && rounds != 1)
        throw ConfigError(
            "run config: best_of and multi-round debate are mutually exclusive");
    if (concurrency < 1) throw ConfigError("run config: concurrency must be >= 1");
    if (limit && *limit < 1) throw ConfigError("run config: limit must be >= 1");
    if (policy != RunPolicy::random) {
        for (const auto& d : backends) {
            if (!d.capabilities.teacher_forced_scoring)
                throw ConfigError("run config: policy '" +
                                  std::string(run_policy_name(policy)) +
                                  "' requires teacher-forced scoring, but backend '" +
                                  d.name + "' does not support it");
            if (metrics::requires_distribution(metric) &&
                !d.capabilities.full_distribution)
                throw ConfigError(
                    "run config: metric '" + std::string(metrics::metric_name(metric)) +
                    "' needs token distributions, but backend '" + d.name +
                    "' does not expose them");
        }
    }
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    const std::string ctx = "run config";
    if (!j.is_object()) bad(ctx, "must be a JSON object");
    reject_unknown_keys(j,
                        {"backends", "dataset", "rounds", "best_of", "concurrency",
                         "policy", "metric", "aggregation", "scoring_context",
                         "seed", "limit", "emit_timestamp"},
                        ctx);
    RunConfig c;
    const json& backends = req_field(j, "backends", ctx);
    if (!backends.is_array() || backends.empty())
        bad(ctx, "backends must be a nonempty array");
    for (const auto& b : backends)
        c.backends.push_back(backend::descriptor_from_json(b));
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        if (!d.is_object()) bad(ctx, "dataset must be an object");
        reject_unknown_keys(d, {"path", "format"}, ctx + " dataset");
        c.dataset_path = req_string(d, "path", ctx + " dataset");
        const std::string fmt = req_string(d, "format", ctx + " dataset");
        c.dataset_format = parse_dataset_format(fmt);
        if (!c.dataset_format)
            bad(ctx, "dataset format must be gsm8k_jsonl|mcq_jsonl, got '" + fmt +
                         "'");
    }
    c.rounds = opt_int(j, "rounds", ctx, 1);
    c.best_of = opt_int(j, "best_of", ctx, 1);
    c.concurrency = opt_int(j, "concurrency", ctx, 4);
    if (j.contains("policy")) {
        const std::string p = req_string(j, "policy", ctx);
        const auto parsed = parse_run_policy(p);
        if (!parsed)
            bad(ctx, "policy must be metric|random|all_cases, got '" + p + "'");
        c.policy = *parsed;
    }
    if (j.contains("metric"))
        c.metric = parse_metric_or_die(req_string(j, "metric", ctx), ctx);
    if (j.contains("aggregation"))
        c.aggregation = parse_aggregation(req_string(j, "aggregation", ctx), ctx);
    if (j.contains("scoring_context"))
        c.scoring_context =
            parse_scoring_context(req_string(j, "scoring_context", ctx), ctx);
    if (j.contains("seed")) {
        const json& s = j.at("seed");
        if (!s.is_number_integer() ||
            (!s.is_number_unsigned() && s.get<long long>() < 0))
            bad(ctx, "seed must be a nonnegative integer");
        c.seed = s.get<std::uint64_t>();
    }
    if (j.contains("limit")) {
        c.limit = opt_int(j, "limit", ctx, 1);
    }
    c.emit_timestamp = opt_bool(j, "emit_timestamp", ctx, false);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    RunConfig c = run_config_from_json(j);
    // Relative script / dataset paths are taken relative to the config file.
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();
    const auto resolve = [&](std::string& p) {
        if (p.empty()) return;
        std::filesystem::path fp(p);
        if (fp.is_relative()) p = (dir / fp).lexically_normal().string();
    };
    for (auto& d : c.backends)
        if (d.endpoint == "mock") resolve(d.script);
    resolve(c.dataset_path);
    return c;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
    ordered_json j;
    ordered_json backends = ordered_json::array();
    for (const auto& d : c.backends) backends.push_back(backend::descriptor_to_json(d));
    j["backends"] = std::move(backends);
    if (!c.dataset_path.empty() || c.dataset_format) {
        ordered_json d;
        d["path"] = c.dataset_path;
        if (c.dataset_format)
            d["format"] = std::string(dataset_format_name(*c.dataset_format));
        j["dataset"] = std::move(d);
    }
    j["rounds"] = c.rounds;
    j["best_of"] = c.best_of;
    j["concurrency"] = c.concurrency;
    j["policy"] = std::string(run_policy_name(c.policy));
    j["metric"] = std::string(metrics::metric_name(c.metric));
    j["aggregation"] = aggregation_name(c.aggregation);
    j["scoring_context"] = scoring_context_name(c.scoring_context);
    j["seed"] = c.seed;
    if (c.limit) j["limit"] = *c.limit;
    j["emit_timestamp"] = c.emit_timestamp;
    return j;
}

std::vector<std::shared_ptr<backend::Backend>> build_backends(
    const RunConfig& config) {
    std::vector<std::shared_ptr<backend::Backend>> out;
    out.reserve(config.backends.size());
    for (const auto& d : config.backends) out.push_back(backend::make_backend(d));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

RunReport evaluate(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const std::vector<QuestionRecord>& questions, const RunConfig& config) {
    config.validate();
    if (backends.size() != config.backends.size())
        throw ConfigError(
            "evaluate: backend instances do not line up with the configured "
            "backends");
    if (questions.empty()) throw ConfigError("evaluate: no questions");

    std::size_t count = questions.size();
    if (config.limit)
        count = std::min(count, static_cast<std::size_t>(*config.limit));

    RunReport report;
    report.config = config;
    const debate::RunOptions ropts{config.rounds, config.concurrency};

    for (std::size_t qi = 0; qi < count; ++qi) {
        const QuestionRecord& q = questions[qi];
        QuestionOutcome out;
        out.question_id = q.id;
        out.task_kind = q.task.kind;
        out.gold = q.gold;
        const std::uint64_t qbase =
            debate::derive_seed(config.seed, kQuestionStream, qi);
        const std::uint64_t rng_seed =
            debate::derive_seed(qbase, kTieBreakStream, 0);

        debate::Transcript transcript;
        std::optional<int> fixed_model;
        if (config.best_of > 1) {
            transcript.turns.push_back(
                debate::run_best_of_n(backends.front(), q.question, q.task,
                                      config.best_of, ropts, qbase, out.ledger));
            fixed_model = 0;
        } else {
            transcript = debate::run_debate(backends, q.question, q.task, ropts,
                                            qbase, out.ledger);
        }
        out.candidates =
            debate::make_candidates(transcript.turns.back(), q.task,
                                    static_cast<int>(transcript.rounds()),
                                    fixed_model);
        out.vote = consensus::vote(out.candidates);
        out.oracle_hit = consensus::oracle_upper_bound(out.candidates, q.gold);

        try {
            out.decision = decide(backends, q, transcript, out, config, ropts,
                                  rng_seed, out.ledger);
        } catch (const Error&) {
            out.partial = true;
            consensus::Decision d;
            d.chosen = consensus::kNoAnswer;
            d.policy = config.policy == RunPolicy::random
                           ? consensus::Decision::Policy::random
                           : consensus::Decision::Policy::metric;
            d.trace.vote = out.vote;
            d.trace.all_cases = config.policy == RunPolicy::all_cases;
            d.trace.aggregation = config.aggregation;
            out.decision = d;
        }
        if (out.ledger.failed_generation_calls > 0 ||
            out.ledger.failed_scoring_calls > 0)
            out.partial = true;

        if (out.decision.chosen != consensus::kNoAnswer) {
            const auto* chosen = find_candidate(out.candidates, out.decision.chosen);
            if (chosen && chosen->answer) {
                out.chosen_answer = chosen->answer;
                out.correct = answer::answers_equal(*chosen->answer, q.gold);
            }
        }

        Summary& s = report.summary;
        switch (out.vote.kind) {
            case consensus::VoteResult::Kind::majority: ++s.majorities; break;
            case consensus::VoteResult::Kind::tie: ++s.ties; break;
            case consensus::VoteResult::Kind::all_abstain: ++s.all_abstain; break;
        }
        if (out.correct) ++s.correct;
        if (out.oracle_hit) ++s.oracle_hits;
        if (out.partial) ++s.partial_questions;
        s.ledger += out.ledger;
        report.questions.push_back(std::move(out));
    }

    Summary& s = report.summary;
    s.questions = static_cast<int>(count);
    s.accuracy = static_cast<double>(s.correct) / static_cast<double>(count);
    s.upper_bound = static_cast<double>(s.oracle_hits) / static_cast<double>(count);
    s.tie_rate = static_cast<double>(s.ties) / static_cast<double>(count);
    if (config.emit_timestamp) report.timestamp = iso8601_utc_now();
    return report;
}

// ---------------------------------------------------------------------------
// Reports

bool operator==(const RunReport& a, const RunReport& b) {
    return report_to_json(a) == report_to_json(b);
}

nlohmann::ordered_json report_to_json(const RunReport& r) {
    ordered_json j;
    j["schema_version"] = r.schema_version;
    j["config"] = run_config_to_json(r.config);
    j["summary"] = summary_to_json(r.summary);
    ordered_json questions = ordered_json::array();
    for (const auto& q : r.questions) questions.push_back(question_to_json(q));
    j["questions"] = std::move(questions);
    if (r.timestamp) j["timestamp"] = *r.timestamp;
    return j;
}

RunReport report_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("report: must be a JSON object");
    if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
        throw ConfigError("report: missing schema_version");
    const int version = j.at("schema_version").get<int>();
    if (version != kReportSchemaVersion)
        throw ConfigError("report: unsupported schema version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kReportSchemaVersion) + ")");
    RunReport r;
    r.schema_version = version;
    r.config = run_config_from_json(req_field(j, "config", "report"));
    r.summary = summary_from_json(req_field(j, "summary", "report"));
    const json& questions = req_field(j, "questions", "report");
    if (!questions.is_array()) throw ConfigError("report: questions must be an array");
    for (std::size_t i = 0; i < questions.size(); ++i)
        r.questions.push_back(question_from_json(questions.at(i), i));
    if (j.contains("timestamp")) {
        if (!j.at("timestamp").is_string())
            throw ConfigError("report: timestamp must be a string");
        r.timestamp = j.at("timestamp").get<std::string>();
    }
    return r;
}

void write_report(const RunReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write report: " + path);
    out << report_to_json(r).dump(2) << '\n';
    if (!out) throw Error("failed while writing report: " + path);
}

RunReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open report: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("report parse error in " + path + ": " + e.what());
    }
    try {
        return report_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("report " + path + ": malformed field: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Histogram

void export_histogram(const RunReport& report, std::ostream& out) {
    out << "score\tcorrect\tquestion_id\tcandidate_id\n";
    for (const auto& q : report.questions) {
        if (!q.decision.trace.scores) continue;
        for (const auto& [cid, score] : *q.decision.trace.scores) {
            const auto* c = find_candidate(q.candidates, cid);
            const bool correct = c && c->answer && c->answer->kind == q.gold.kind &&
                                 answer::answers_equal(*c->answer, q.gold);
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", score.value);
            out << buf << '\t' << (correct ? 1 : 0) << '\t' << q.question_id << '\t'
                << cid << '\n';
        }
    }
}

void export_histogram(const RunReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write histogram: " + path);
    export_histogram(report, out);
    if (!out) throw Error("failed while writing histogram: " + path);
}

}  // namespace quorum::harness
