// Uniform client contract for generation and teacher-forced scoring across
// heterogeneous model backends: a live HTTP client speaking a
// completions-compatible wire protocol, and a fully deterministic scripted
// mock usable in-process or served over the same protocol.
#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "quorum/errors.hpp"
#include "quorum/metrics.hpp"

namespace quorum::backend {

struct Capabilities {
    bool token_logprobs = true;
    bool full_distribution = false;
    bool teacher_forced_scoring = true;
};

struct Sampling {
    double temperature = 1.0;  // >= 0
    int max_tokens = 256;      // > 0
    double top_p = 1.0;        // (0, 1]
};

// Base of logprob values on the wire; converted to natural log at this
// boundary so the metrics layer sees one base only.
enum class LogprobBase { natural, base10, base2 };

double to_natural(double logprob, LogprobBase base);

struct BackendDescriptor {
    std::string name;      // unique within a run
    std::string endpoint;  // http(s) URL, or "mock"
    std::string model_id;
    Capabilities capabilities;
    Sampling sampling;
    LogprobBase logprob_base = LogprobBase::natural;
    std::string api_key_env;  // env var NAME holding the key; never the key
    std::string script;       // script path, mock endpoints only
    int context_window = 8192;

    // Client robustness knobs (transport/5xx only; 4xx fails fast).
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{250};
    std::chrono::milliseconds generate_timeout{120000};
    std::chrono::milliseconds scoring_timeout{60000};

    void validate() const;  // throws ConfigError
};

// Parse one backend object from config JSON (see data/samples for the shape).
BackendDescriptor descriptor_from_json(const nlohmann::json& j);

// Inverse of descriptor_from_json; emits every effective field.
nlohmann::ordered_json descriptor_to_json(const BackendDescriptor& d);

enum class FinishReason { stop, length, error };

std::string finish_reason_name(FinishReason r);

struct Generation {
    std::string text;
    std::optional<metrics::TokenScoreSeq> token_scores;
    std::optional<std::vector<metrics::TokenDistribution>> distributions;
    FinishReason finish_reason = FinishReason::stop;

    friend bool operator==(const Generation& a, const Generation& b);
};

struct ScoringRequest {
    std::string context;     // prompt x, plus debate context X when K > 1
    std::string completion;  // candidate text; scored region excludes context
    std::string scored_by;   // backend name, for ledgers and error messages
};

struct ScoringResult {
    metrics::TokenScoreSeq token_scores;  // completion tokens only
    int token_count = 0;                  // under the scoring model's tokenizer
    // Per-token next-token distributions, when the backend exposes them.
    std::optional<std::vector<metrics::TokenDistribution>> distributions;

    friend bool operator==(const ScoringResult& a, const ScoringResult& b);
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual const BackendDescriptor& descriptor() const = 0;

    // Deterministic on mocks given (prompt, seed). Throws TransportError
    // after retries, Error on empty prompt.
    virtual Generation generate(const std::string& prompt,
                                std::optional<std::uint64_t> seed) = 0;

    // Teacher-forced per-token logprobs of `completion` conditioned on
    // `context`. Throws ScoringUnsupportedError without the capability,
    // Error("empty completion"), ContextOverflowError, UnscriptedError.
    virtual ScoringResult score_completion(const ScoringRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

// Deterministic behavior table. An entry matches a request when every
// context_contains needle appears in the prompt/context; entries are tried in
// order, first match wins. A generation seed selects among alternatives via
// seed % alternatives. Scoring matches the completion string exactly
// (in-process) or as the longest scripted suffix of the echoed prompt (wire).
struct ScriptTable {
    struct GenerationAlt {
        std::string text;
        std::vector<double> token_probs;  // each in (0, 1]; may be empty
        // Optional per-token distribution rows over [0, vocab_size).
        std::vector<std::vector<double>> distributions;
        FinishReason finish_reason = FinishReason::stop;
    };

    struct Score {
        std::string completion;
        std::vector<double> token_probs;  // nonempty, each in (0, 1]
        std::vector<std::vector<double>> distributions;  // optional rows
    };

    struct Entry {
        std::vector<std::string> context_contains;  // all must appear
        std::vector<GenerationAlt> generations;
        std::vector<Score> scores;
    };

    std::int32_t vocab_size = 0;  // > 0 iff any distributions present
    std::vector<Entry> entries;
    std::optional<Entry> fallback;  // used when no entry matches

    // Validation: probabilities in (0, 1], distribution rows of length
    // vocab_size summing to 1 +/- 1e-9. Throws ScriptError.
    void validate() const;

    static ScriptTable parse(const nlohmann::json& j);
    static ScriptTable load(const std::string& path);

    const Entry* match(const std::string& context) const;
};

struct MockOptions {
    // Deterministic failure injection: the first n calls of each kind throw
    // TransportError (after which calls succeed), emulating a flaky network.
    int fail_first_generations = 0;
    int fail_first_scorings = 0;
    // Uniform random per-call sleep in [0, max_delay], for order-independence
    // tests. Does not affect returned values.
    std::chrono::milliseconds max_delay{0};
    std::uint64_t delay_seed = 0;
};

// In-process mock honoring generate/score_completion exactly per script.
std::shared_ptr<Backend> mock_from_script(BackendDescriptor descriptor,
                                          ScriptTable script,
                                          MockOptions options = {});

// Serves the wire protocol backed by a script. port = 0 picks a free port;
// port() reports the bound one. Shuts down cleanly on destruction or stop().
// MockOptions failure injection maps to 500 responses, for retry tests.
class MockServer {
public:
    MockServer(ScriptTable script, int port, MockOptions options = {});
    ~MockServer();
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    int port() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Live client for the completions-compatible protocol. Scoring uses
// echo=true, max_tokens=0 and slices the completion region out of the echoed
// logprob arrays by byte offset.
std::shared_ptr<Backend> http_backend(BackendDescriptor descriptor);

// Dispatch on descriptor.endpoint: "mock" loads descriptor.script, otherwise
// an HTTP client is built.
std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor);

}  // namespace quorum::backend
