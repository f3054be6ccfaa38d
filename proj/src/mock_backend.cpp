#include <cmath>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "quorum/backend.hpp"

#include "backend_internal.hpp"

namespace quorum::backend {

namespace {

using nlohmann::json;

class MockBackend final : public Backend {
public:
    MockBackend(BackendDescriptor descriptor, ScriptTable script,
                MockOptions options)
        : descriptor_(std::move(descriptor)),
          script_(std::move(script)),
          options_(options),
          gen_failures_left_(options.fail_first_generations),
          score_failures_left_(options.fail_first_scorings),
          delay_rng_(options.delay_seed) {
        descriptor_.validate();
        script_.validate();
    }

    const BackendDescriptor& descriptor() const override { return descriptor_; }

    Generation generate(const std::string& prompt,
                        std::optional<std::uint64_t> seed) override {
        if (prompt.empty()) throw Error("empty prompt");
        if (detail::generate_overflows(descriptor_, prompt.size()))
            throw ContextOverflowError("prompt plus max_tokens exceeds the " +
                                       std::to_string(descriptor_.context_window) +
                                       "-token context window of backend '" +
                                       descriptor_.name + "'");
        maybe_fail(gen_failures_left_);
        maybe_delay();
        const ScriptTable::Entry* entry = script_.match(prompt);
        if (entry == nullptr || entry->generations.empty())
            throw UnscriptedError("unscripted prompt for backend '" +
                                  descriptor_.name + "'");
        const auto& alt =
            entry->generations[seed.value_or(0) % entry->generations.size()];
        Generation out;
        out.text = alt.text;
        out.finish_reason = alt.finish_reason;
        if (descriptor_.capabilities.token_logprobs && !alt.token_probs.empty()) {
            std::vector<double> lps;
            lps.reserve(alt.token_probs.size());
            for (double p : alt.token_probs) lps.push_back(std::log(p));
            out.token_scores = metrics::TokenScoreSeq::from_logprobs(std::move(lps));
        }
        if (descriptor_.capabilities.full_distribution &&
            !alt.distributions.empty()) {
            std::vector<metrics::TokenDistribution> dists;
            dists.reserve(alt.distributions.size());
            for (const auto& row : alt.distributions)
                dists.push_back(detail::dist_from_row(row, script_.vocab_size));
            out.distributions = std::move(dists);
        }
        return out;
    }

    ScoringResult score_completion(const ScoringRequest& req) override {
        if (!descriptor_.capabilities.teacher_forced_scoring)
            throw ScoringUnsupportedError(
                "teacher-forced scoring unsupported by backend '" +
                descriptor_.name + "'");
        if (req.completion.empty()) throw Error("empty completion");
        if (detail::scoring_overflows(descriptor_, req.context.size(),
                                      req.completion.size()))
            throw ContextOverflowError("context plus completion exceeds the " +
                                       std::to_string(descriptor_.context_window) +
                                       "-token context window of backend '" +
                                       descriptor_.name + "'");
        maybe_fail(score_failures_left_);
        maybe_delay();
        // Match against the concatenation, exactly what the wire path sends as
        // the echoed prompt, so both paths select the same script entry.
        const std::string full = req.context + req.completion;
        const ScriptTable::Entry* entry = script_.match(full);
        if (entry == nullptr)
            throw UnscriptedError("unscripted scoring context for backend '" +
                                  descriptor_.name + "'");
        for (const auto& score : entry->scores) {
            if (score.completion != req.completion) continue;
            std::vector<double> lps;
            lps.reserve(score.token_probs.size());
            for (double p : score.token_probs) lps.push_back(std::log(p));
            std::optional<std::vector<metrics::TokenDistribution>> dists;
            if (descriptor_.capabilities.full_distribution &&
                !score.distributions.empty()) {
                std::vector<metrics::TokenDistribution> rows;
                rows.reserve(score.distributions.size());
                for (const auto& row : score.distributions)
                    rows.push_back(detail::dist_from_row(row, script_.vocab_size));
                dists = std::move(rows);
            }
            return ScoringResult{
                metrics::TokenScoreSeq::from_logprobs(std::move(lps)),
                static_cast<int>(score.token_probs.size()), std::move(dists)};
        }
        throw UnscriptedError("unscripted completion for backend '" +
                              descriptor_.name + "'");
    }

private:
    void maybe_fail(int& counter) {
        std::lock_guard<std::mutex> lock(mu_);
        if (counter > 0) {
            --counter;
            throw TransportError("injected transport failure on backend '" +
                                 descriptor_.name + "'");
        }
    }

    void maybe_delay() {
        if (options_.max_delay.count() <= 0) return;
        std::chrono::milliseconds d{0};
        {
            std::lock_guard<std::mutex> lock(mu_);
            std::uniform_int_distribution<std::int64_t> dist(
                0, options_.max_delay.count());
            d = std::chrono::milliseconds(dist(delay_rng_));
        }
        if (d.count() > 0) std::this_thread::sleep_for(d);
    }

    BackendDescriptor descriptor_;
    ScriptTable script_;
    MockOptions options_;
    std::mutex mu_;
    int gen_failures_left_;
    int score_failures_left_;
    std::mt19937_64 delay_rng_;
};

json error_body(const std::string& message, const std::string& code) {
    return json{{"error", {{"message", message}, {"code", code}}}};
}

struct WireReply {
    int status = 200;
    json body;
};

// Core of the wire protocol: one completions request against a script table.
// Scoring mode is echo=true with max_tokens=0; the completion region is
// reported through text_offset so clients can slice it out by byte offset.
WireReply handle_completions(const ScriptTable& script, const json& req) {
    if (!req.is_object() || !req.contains("prompt") ||
        !req.at("prompt").is_string())
        return {400, error_body("request must carry a string prompt",
                                "bad_request")};
    const std::string prompt = req.at("prompt").get<std::string>();
    int max_tokens = 16;
    if (req.contains("max_tokens") && req.at("max_tokens").is_number_integer())
        max_tokens = req.at("max_tokens").get<int>();
    const bool echo = req.contains("echo") && req.at("echo").is_boolean() &&
                      req.at("echo").get<bool>();
    const bool want_logprobs =
        req.contains("logprobs") && req.at("logprobs").is_number_integer() &&
        req.at("logprobs").get<int>() > 0;
    std::optional<std::uint64_t> seed;
    if (req.contains("seed") && req.at("seed").is_number_unsigned())
        seed = req.at("seed").get<std::uint64_t>();

    const ScriptTable::Entry* entry = script.match(prompt);

    json choice;
    std::size_t completion_tokens = 0;
    if (echo && max_tokens == 0) {
        if (entry == nullptr)
            return {422, error_body("no script entry matches the prompt",
                                    "unscripted")};
        const ScriptTable::Score* best = nullptr;
        for (const auto& score : entry->scores)
            if (prompt.size() >= score.completion.size() &&
                prompt.ends_with(score.completion) &&
                (best == nullptr ||
                 score.completion.size() > best->completion.size()))
                best = &score;
        if (best == nullptr)
            return {422,
                    error_body("no scripted completion matches the prompt tail",
                               "unscripted")};
        const std::size_t boundary = prompt.size() - best->completion.size();
        json tokens = json::array();
        json token_logprobs = json::array();
        json text_offset = json::array();
        json top_logprobs = json::array();
        json top_probs = json::array();
        if (boundary > 0) {
            // The echoed context arrives as one pseudo-token with no logprob,
            // mirroring the null first entry of real echo responses.
            tokens.push_back(prompt.substr(0, boundary));
            token_logprobs.push_back(nullptr);
            text_offset.push_back(0);
            top_logprobs.push_back(nullptr);
            top_probs.push_back(nullptr);
        }
        const auto pieces =
            detail::chunk_text(best->completion, best->token_probs.size(),
                               boundary);
        for (std::size_t t = 0; t < pieces.size(); ++t) {
            tokens.push_back(pieces[t].first);
            token_logprobs.push_back(std::log(best->token_probs[t]));
            text_offset.push_back(pieces[t].second);
            if (!best->distributions.empty()) {
                json row_lp = json::object();
                json row_p = json::object();
                const auto& row = best->distributions[t];
                for (std::size_t id = 0; id < row.size(); ++id) {
                    if (row[id] <= 0.0) continue;
                    const std::string tok = "t" + std::to_string(id);
                    row_lp[tok] = std::log(row[id]);
                    row_p[tok] = row[id];
                }
                top_logprobs.push_back(std::move(row_lp));
                top_probs.push_back(std::move(row_p));
            } else {
                top_logprobs.push_back(nullptr);
                top_probs.push_back(nullptr);
            }
        }
        json logprobs = {{"tokens", std::move(tokens)},
                         {"token_logprobs", std::move(token_logprobs)},
                         {"text_offset", std::move(text_offset)}};
        if (!best->distributions.empty()) {
            logprobs["top_logprobs"] = std::move(top_logprobs);
            // Extension: exact probabilities alongside the standard log form,
            // so mock-served distributions survive the wire bit-for-bit.
            logprobs["top_probs"] = std::move(top_probs);
            logprobs["vocab_size"] = script.vocab_size;
        } else {
            logprobs["top_logprobs"] = nullptr;
        }
        completion_tokens = 0;
        choice = {{"text", prompt},
                  {"index", 0},
                  {"finish_reason", "length"},
                  {"logprobs", std::move(logprobs)}};
    } else {
        if (entry == nullptr || entry->generations.empty())
            return {422, error_body("no scripted generation matches the prompt",
                                    "unscripted")};
        const auto& alt =
            entry->generations[seed.value_or(0) % entry->generations.size()];
        json logprobs = nullptr;
        if (want_logprobs && !alt.token_probs.empty()) {
            json tokens = json::array();
            json token_logprobs = json::array();
            json text_offset = json::array();
            json top_logprobs = json::array();
            json top_probs = json::array();
            const auto pieces = detail::chunk_text(
                alt.text, alt.token_probs.size(), prompt.size());
            for (std::size_t t = 0; t < pieces.size(); ++t) {
                tokens.push_back(pieces[t].first);
                token_logprobs.push_back(std::log(alt.token_probs[t]));
                text_offset.push_back(pieces[t].second);
                if (!alt.distributions.empty()) {
                    json row_lp = json::object();
                    json row_p = json::object();
                    const auto& row = alt.distributions[t];
                    for (std::size_t id = 0; id < row.size(); ++id) {
                        if (row[id] <= 0.0) continue;
                        const std::string tok = "t" + std::to_string(id);
                        row_lp[tok] = std::log(row[id]);
                        row_p[tok] = row[id];
                    }
                    top_logprobs.push_back(std::move(row_lp));
                    top_probs.push_back(std::move(row_p));
                } else {
                    top_logprobs.push_back(nullptr);
                    top_probs.push_back(nullptr);
                }
            }
            logprobs = {{"tokens", std::move(tokens)},
                        {"token_logprobs", std::move(token_logprobs)},
                        {"text_offset", std::move(text_offset)}};
            if (!alt.distributions.empty()) {
                logprobs["top_logprobs"] = std::move(top_logprobs);
                logprobs["top_probs"] = std::move(top_probs);
                logprobs["vocab_size"] = script.vocab_size;
            } else {
                logprobs["top_logprobs"] = nullptr;
            }
        }
        completion_tokens = alt.token_probs.size();
        choice = {{"text", alt.text},
                  {"index", 0},
                  {"finish_reason", finish_reason_name(alt.finish_reason)},
                  {"logprobs", std::move(logprobs)}};
    }

    const std::size_t prompt_tokens = detail::estimate_tokens(prompt.size());
    json body = {{"id", "cmpl-mock"},
                 {"object", "text_completion"},
                 {"model", req.contains("model") && req.at("model").is_string()
                               ? req.at("model").get<std::string>()
                               : std::string("mock")},
                 {"choices", json::array({std::move(choice)})},
                 {"usage",
                  {{"prompt_tokens", prompt_tokens},
                   {"completion_tokens", completion_tokens},
                   {"total_tokens", prompt_tokens + completion_tokens}}}};
    return {200, std::move(body)};
}

}  // namespace

std::shared_ptr<Backend> mock_from_script(BackendDescriptor descriptor,
                                          ScriptTable script,
                                          MockOptions options) {
    return std::make_shared<MockBackend>(std::move(descriptor),
                                         std::move(script), options);
}

struct MockServer::Impl {
    ScriptTable script;
    MockOptions options;
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::mutex mu;
    int gen_failures_left = 0;
    int score_failures_left = 0;
    std::mt19937_64 delay_rng{0};
};

MockServer::MockServer(ScriptTable script, int port, MockOptions options)
    : impl_(std::make_unique<Impl>()) {
    impl_->script = std::move(script);
    impl_->script.validate();
    impl_->options = options;
    impl_->gen_failures_left = options.fail_first_generations;
    impl_->score_failures_left = options.fail_first_scorings;
    impl_->delay_rng.seed(options.delay_seed);

    Impl* impl = impl_.get();
    impl->server.Post(
        "/v1/completions",
        [impl](const httplib::Request& req, httplib::Response& res) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::parse_error&) {
                res.status = 400;
                res.set_content(
                    error_body("request body is not valid JSON", "bad_request")
                        .dump(),
                    "application/json");
                return;
            }
            const bool is_scoring =
                body.is_object() && body.value("echo", false) &&
                body.value("max_tokens", 16) == 0;
            std::chrono::milliseconds delay{0};
            {
                std::lock_guard<std::mutex> lock(impl->mu);
                int& left = is_scoring ? impl->score_failures_left
                                       : impl->gen_failures_left;
                if (left > 0) {
                    --left;
                    res.status = 500;
                    res.set_content(
                        error_body("injected server failure", "internal").dump(),
                        "application/json");
                    return;
                }
                if (impl->options.max_delay.count() > 0) {
                    std::uniform_int_distribution<std::int64_t> dist(
                        0, impl->options.max_delay.count());
                    delay = std::chrono::milliseconds(dist(impl->delay_rng));
                }
            }
            if (delay.count() > 0) std::this_thread::sleep_for(delay);
            WireReply reply = handle_completions(impl->script, body);
            res.status = reply.status;
            res.set_content(reply.body.dump(), "application/json");
        });

    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
        if (impl_->port <= 0)
            throw TransportError("mock server: cannot bind an ephemeral port");
    } else {
        if (!impl_->server.bind_to_port("127.0.0.1", port))
            throw TransportError("mock server: cannot bind port " +
                                 std::to_string(port));
        impl_->port = port;
    }
    impl_->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

MockServer::~MockServer() { stop(); }

int MockServer::port() const { return impl_->port; }

void MockServer::stop() {
    if (impl_ && impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
}

std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor) {
    descriptor.validate();
    if (descriptor.endpoint == "mock") {
        if (descriptor.script.empty())
            throw ConfigError("backend config: mock backend '" + descriptor.name +
                              "' needs a script path");
        return mock_from_script(descriptor, ScriptTable::load(descriptor.script));
    }
    return http_backend(descriptor);
}

}  // namespace quorum::backend
