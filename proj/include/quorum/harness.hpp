// Dataset harness: load question sets from JSONL, drive the debate /
// best-of-n engine over them under a configured consensus policy, and
// produce a reproducible JSON report plus a per-candidate score histogram.
//
// Reports are deliberately self-contained for replay: every question stores
// its candidates (answers, not raw text), the vote, and the full decision
// trace, so consensus::replay() can recompute each chosen candidate from the
// file alone.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "quorum/answer.hpp"
#include "quorum/backend.hpp"
#include "quorum/consensus.hpp"
#include "quorum/debate.hpp"
#include "quorum/errors.hpp"
#include "quorum/metrics.hpp"

namespace quorum::harness {

// ---------------------------------------------------------------------------
// Datasets

enum class DatasetFormat {
    gsm8k_jsonl,  // {"id"?, "question", "answer"} with gold after "####"
    mcq_jsonl,    // {"id"?, "question", "choices": [...], "answerKey": 1..n}
};

std::string_view dataset_format_name(DatasetFormat f);
std::optional<DatasetFormat> parse_dataset_format(std::string_view name);

struct QuestionRecord {
    std::string id;  // explicit "id" field, else "q<line number>"
    std::string question;
    answer::TaskKind task;
    answer::CanonicalAnswer gold;
};

// Parse one JSONL dataset. Blank lines are skipped; malformed lines and
// duplicate ids raise ConfigError naming the 1-based line number. mcq
// answerKey is 1-based into choices, which are labeled "A", "B", ... in
// declaration order. Throws ConfigError when the file yields no questions.
std::vector<QuestionRecord> load_dataset(const std::string& path,
                                         DatasetFormat format);

// ---------------------------------------------------------------------------
// Run configuration

enum class RunPolicy {
    metric,     // majority wins; ties broken by the calibrated metric
    random,     // majority wins; ties broken by seeded uniform choice
    all_cases,  // diagnostic: ignore the vote, score every candidate
};

std::string_view run_policy_name(RunPolicy p);
std::optional<RunPolicy> parse_run_policy(std::string_view name);

struct RunConfig {
    std::vector<backend::BackendDescriptor> backends;
    std::string dataset_path;  // may be injected by the CLI after parsing
    std::optional<DatasetFormat> dataset_format;
    int rounds = 1;       // debate rounds K
    int best_of = 1;      // > 1 samples one backend n times (requires N == 1)
    int concurrency = 4;  // max in-flight backend calls per fan-out
    RunPolicy policy = RunPolicy::metric;
    metrics::Metric metric = metrics::Metric::log_likelihood;
    consensus::TieAggregation aggregation =
        consensus::TieAggregation::best_candidate;
    debate::ScoringContext scoring_context = debate::ScoringContext::shared;
    std::uint64_t seed = 0;
    std::optional<int> limit;    // evaluate at most this many questions
    bool emit_timestamp = false; // off by default to keep reports byte-stable

    void validate() const;  // throws ConfigError
};

// Parse a config object. Unknown keys are rejected. Backend entries use
// backend::descriptor_from_json (credentials enter only as api_key_env
// variable names). load_run_config additionally resolves relative script and
// dataset paths against the config file's directory.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Effective config echo: every field, defaults included.
nlohmann::ordered_json run_config_to_json(const RunConfig& c);

// Instantiate one backend per descriptor (mock or HTTP).
std::vector<std::shared_ptr<backend::Backend>> build_backends(
    const RunConfig& config);

// ---------------------------------------------------------------------------
// Results

struct QuestionOutcome {
    std::string question_id;
    answer::Kind task_kind = answer::Kind::numeric;
    answer::CanonicalAnswer gold;
    std::vector<consensus::Candidate> candidates;  // text dropped on serialize
    consensus::VoteResult vote;
    consensus::Decision decision;
    std::optional<answer::CanonicalAnswer> chosen_answer;
    bool correct = false;
    bool oracle_hit = false;  // some candidate matched gold
    bool partial = false;     // a backend call failed or selection raised
    debate::CostLedger ledger;
};

struct Summary {
    int questions = 0;
    int correct = 0;
    int majorities = 0;
    int ties = 0;
    int all_abstain = 0;
    int oracle_hits = 0;
    int partial_questions = 0;
    double accuracy = 0.0;     // correct / questions
    double upper_bound = 0.0;  // oracle_hits / questions
    double tie_rate = 0.0;     // ties / questions
    debate::CostLedger ledger; // totals over all questions

    friend bool operator==(const Summary& a, const Summary& b) = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct RunReport {
    int schema_version = kReportSchemaVersion;
    RunConfig config;  // effective configuration of the run
    std::vector<QuestionOutcome> questions;
    Summary summary;
    std::optional<std::string> timestamp;  // only with emit_timestamp

    // Structural equality over the serialized form.
    friend bool operator==(const RunReport& a, const RunReport& b);
};

// Run the configured pipeline over `questions` (after config.limit). The
// backend list must line up with config.backends; tests may substitute
// in-process mocks. Per-question work: generate (debate or best-of-n),
// extract + vote, score whatever the policy needs, select, tally. A backend
// failure degrades that question (partial = true, failures ledgered) instead
// of aborting the run.
RunReport evaluate(
    const std::vector<std::shared_ptr<backend::Backend>>& backends,
    const std::vector<QuestionRecord>& questions, const RunConfig& config);

// JSON round-trip. Candidate texts are not serialized; decision traces and
// votes are, so replay works from a loaded report. read_report raises
// ConfigError ("unsupported schema version ...") on a version mismatch.
nlohmann::ordered_json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);
void write_report(const RunReport& r, const std::string& path);
RunReport read_report(const std::string& path);

// One TSV row per scored candidate drawn from the decision traces:
//   score <tab> correct <tab> question_id <tab> candidate_id
// correct is 1 when that candidate's answer matches gold. The header row is
// always written, so a run without scored ties yields just the header.
void export_histogram(const RunReport& report, std::ostream& out);
void export_histogram(const RunReport& report, const std::string& path);

}  // namespace quorum::harness
