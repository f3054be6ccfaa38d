#include <cmath>
#include <cstdlib>
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

FinishReason parse_finish_reason(const json& choice) {
    if (!choice.contains("finish_reason") || choice.at("finish_reason").is_null())
        return FinishReason::stop;
    if (!choice.at("finish_reason").is_string()) return FinishReason::error;
    const std::string name = choice.at("finish_reason").get<std::string>();
    if (name == "stop") return FinishReason::stop;
    if (name == "length") return FinishReason::length;
    return FinishReason::error;
}

// Token strings in distribution rows are "t<id>"; anything else means the
// remote cannot supply an alignable token-id space.
std::optional<std::int32_t> parse_token_id(const std::string& token) {
    if (token.size() < 2 || token[0] != 't') return std::nullopt;
    std::int32_t id = 0;
    for (std::size_t i = 1; i < token.size(); ++i) {
        if (token[i] < '0' || token[i] > '9') return std::nullopt;
        id = id * 10 + (token[i] - '0');
        if (id < 0) return std::nullopt;
    }
    return id;
}

// Distribution rows for the tokens at `indices`. Prefers the exact-probability
// "top_probs" extension; falls back to exponentiating "top_logprobs". Returns
// nullopt when any needed row is missing -- distributions are all-or-nothing.
std::optional<std::vector<metrics::TokenDistribution>> parse_distributions(
    const json& logprobs, const std::vector<std::size_t>& indices,
    LogprobBase base) {
    const json* rows = nullptr;
    bool exact = false;
    if (logprobs.contains("top_probs") && logprobs.at("top_probs").is_array()) {
        rows = &logprobs.at("top_probs");
        exact = true;
    } else if (logprobs.contains("top_logprobs") &&
               logprobs.at("top_logprobs").is_array()) {
        rows = &logprobs.at("top_logprobs");
    } else {
        return std::nullopt;
    }
    std::vector<std::vector<std::pair<std::int32_t, double>>> parsed;
    parsed.reserve(indices.size());
    std::int32_t max_id = -1;
    for (std::size_t idx : indices) {
        if (idx >= rows->size() || !rows->at(idx).is_object())
            return std::nullopt;
        std::vector<std::pair<std::int32_t, double>> pairs;
        for (const auto& [token, value] : rows->at(idx).items()) {
            const auto id = parse_token_id(token);
            if (!id)
                throw ProtocolError(
                    "distribution token '" + token +
                    "' does not carry an alignable token id");
            if (!value.is_number())
                throw ProtocolError("distribution value for '" + token +
                                    "' is not a number");
            const double v = value.get<double>();
            pairs.emplace_back(*id,
                               exact ? v : std::exp(to_natural(v, base)));
            max_id = std::max(max_id, *id);
        }
        if (pairs.empty()) return std::nullopt;
        parsed.push_back(std::move(pairs));
    }
    std::int32_t vocab = 0;
    if (logprobs.contains("vocab_size") &&
        logprobs.at("vocab_size").is_number_integer())
        vocab = logprobs.at("vocab_size").get<std::int32_t>();
    if (vocab <= max_id) vocab = max_id + 1;
    std::vector<metrics::TokenDistribution> out;
    out.reserve(parsed.size());
    try {
        for (auto& pairs : parsed)
            out.push_back(
                metrics::TokenDistribution::from_probs(std::move(pairs), vocab));
    } catch (const Error& e) {
        throw ProtocolError(std::string("invalid distribution in response: ") +
                            e.what());
    }
    return out;
}

class HttpBackend final : public Backend {
public:
    explicit HttpBackend(BackendDescriptor descriptor)
        : descriptor_(std::move(descriptor)) {
        descriptor_.validate();
        base_url_ = descriptor_.endpoint;
        while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
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
        json body = {{"model", descriptor_.model_id},
                     {"prompt", prompt},
                     {"max_tokens", descriptor_.sampling.max_tokens},
                     {"temperature", descriptor_.sampling.temperature},
                     {"top_p", descriptor_.sampling.top_p}};
        if (descriptor_.capabilities.token_logprobs ||
            descriptor_.capabilities.full_distribution)
            body["logprobs"] = descriptor_.capabilities.full_distribution ? 100 : 1;
        if (seed) body["seed"] = *seed;
        const json resp = post(body, descriptor_.generate_timeout);

        const json& choice = first_choice(resp);
        Generation out;
        if (!choice.contains("text") || !choice.at("text").is_string())
            throw ProtocolError("completion response lacks a text field");
        out.text = choice.at("text").get<std::string>();
        out.finish_reason = parse_finish_reason(choice);
        if (choice.contains("logprobs") && choice.at("logprobs").is_object()) {
            const json& lp = choice.at("logprobs");
            if (lp.contains("token_logprobs") &&
                lp.at("token_logprobs").is_array() &&
                !lp.at("token_logprobs").empty()) {
                std::vector<double> lps;
                std::vector<std::size_t> indices;
                lps.reserve(lp.at("token_logprobs").size());
                for (std::size_t i = 0; i < lp.at("token_logprobs").size(); ++i) {
                    const json& v = lp.at("token_logprobs").at(i);
                    if (!v.is_number())
                        throw ProtocolError(
                            "null token logprob in a generation response");
                    lps.push_back(
                        to_natural(v.get<double>(), descriptor_.logprob_base));
                    indices.push_back(i);
                }
                if (descriptor_.capabilities.token_logprobs) {
                    try {
                        out.token_scores =
                            metrics::TokenScoreSeq::from_logprobs(std::move(lps));
                    } catch (const Error& e) {
                        throw ProtocolError(
                            std::string("invalid logprobs in response: ") +
                            e.what());
                    }
                }
                if (descriptor_.capabilities.full_distribution)
                    out.distributions = parse_distributions(
                        lp, indices, descriptor_.logprob_base);
            }
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
        json body = {{"model", descriptor_.model_id},
                     {"prompt", req.context + req.completion},
                     {"max_tokens", 0},
                     {"echo", true},
                     {"temperature", descriptor_.sampling.temperature},
                     {"top_p", descriptor_.sampling.top_p},
                     {"logprobs",
                      descriptor_.capabilities.full_distribution ? 100 : 1}};
        const json resp = post(body, descriptor_.scoring_timeout);

        const json& choice = first_choice(resp);
        if (!choice.contains("logprobs") || !choice.at("logprobs").is_object())
            throw ProtocolError("echo scoring response lacks logprobs");
        const json& lp = choice.at("logprobs");
        for (const char* field : {"token_logprobs", "text_offset"})
            if (!lp.contains(field) || !lp.at(field).is_array())
                throw ProtocolError(std::string("echo scoring response lacks ") +
                                    field);
        const json& token_logprobs = lp.at("token_logprobs");
        const json& text_offset = lp.at("text_offset");
        if (token_logprobs.size() != text_offset.size())
            throw ProtocolError(
                "echo scoring response has misaligned logprob arrays");

        // The completion region is everything at or past the context's byte
        // length; the context itself echoes back with lower offsets.
        std::vector<double> lps;
        std::vector<std::size_t> indices;
        for (std::size_t i = 0; i < token_logprobs.size(); ++i) {
            const json& off = text_offset.at(i);
            if (!off.is_number_integer())
                throw ProtocolError("non-integer text_offset in echo response");
            if (off.get<long long>() <
                static_cast<long long>(req.context.size()))
                continue;
            const json& v = token_logprobs.at(i);
            if (!v.is_number())
                throw ProtocolError(
                    "null token logprob inside the completion region");
            lps.push_back(to_natural(v.get<double>(), descriptor_.logprob_base));
            indices.push_back(i);
        }
        if (lps.empty())
            throw ProtocolError("echo response contains no completion tokens");
        const int token_count = static_cast<int>(lps.size());
        std::optional<metrics::TokenScoreSeq> scores;
        try {
            scores = metrics::TokenScoreSeq::from_logprobs(std::move(lps));
        } catch (const Error& e) {
            throw ProtocolError(std::string("invalid logprobs in response: ") +
                                e.what());
        }
        std::optional<std::vector<metrics::TokenDistribution>> dists;
        if (descriptor_.capabilities.full_distribution)
            dists = parse_distributions(lp, indices, descriptor_.logprob_base);
        return ScoringResult{std::move(*scores), token_count, std::move(dists)};
    }

private:
    static const json& first_choice(const json& resp) {
        if (!resp.is_object() || !resp.contains("choices") ||
            !resp.at("choices").is_array() || resp.at("choices").empty())
            throw ProtocolError("completion response has no choices");
        return resp.at("choices").at(0);
    }

    httplib::Headers auth_headers() const {
        httplib::Headers headers;
        if (!descriptor_.api_key_env.empty()) {
            const char* key = std::getenv(descriptor_.api_key_env.c_str());
            if (key == nullptr || *key == '\0')
                throw ConfigError("environment variable '" +
                                  descriptor_.api_key_env +
                                  "' named by backend '" + descriptor_.name +
                                  "' is not set");
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        return headers;
    }

    json post(const json& body, std::chrono::milliseconds timeout) {
        const httplib::Headers headers = auth_headers();
        const std::string payload = body.dump();
        std::string last_failure = "no attempt made";
        for (int attempt = 1; attempt <= descriptor_.max_attempts; ++attempt) {
            if (attempt > 1) {
                const auto backoff = descriptor_.backoff_base *
                                     (1LL << (attempt - 2));
                if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
            }
            // A fresh client per call keeps concurrent fan-out safe.
            httplib::Client client(base_url_);
            client.set_connection_timeout(timeout);
            client.set_read_timeout(timeout);
            client.set_write_timeout(timeout);
            auto result = client.Post("/v1/completions", headers, payload,
                                      "application/json");
            if (!result) {
                last_failure = "transport failure contacting '" + base_url_ +
                               "': " + httplib::to_string(result.error());
                continue;
            }
            if (result->status >= 500) {
                last_failure = "server error " + std::to_string(result->status) +
                               " from '" + base_url_ + "'";
                continue;
            }
            if (result->status >= 200 && result->status < 300) {
                try {
                    return json::parse(result->body);
                } catch (const json::parse_error&) {
                    throw ProtocolError("response body is not valid JSON",
                                        result->status);
                }
            }
            throw_for_client_error(result->status, result->body);
        }
        throw TransportError("backend '" + descriptor_.name + "': giving up after " +
                             std::to_string(descriptor_.max_attempts) +
                             " attempts: " + last_failure);
    }

    [[noreturn]] void throw_for_client_error(int status,
                                             const std::string& body) const {
        std::string message = "backend '" + descriptor_.name +
                              "' rejected the request with status " +
                              std::to_string(status);
        std::string code;
        try {
            const json e = json::parse(body);
            if (e.is_object() && e.contains("error") &&
                e.at("error").is_object()) {
                const json& err = e.at("error");
                if (err.contains("message") && err.at("message").is_string())
                    message = err.at("message").get<std::string>();
                if (err.contains("code") && err.at("code").is_string())
                    code = err.at("code").get<std::string>();
            }
        } catch (const json::parse_error&) {
            // Non-JSON error bodies fall through to the generic message.
        }
        if (code == "unscripted") throw UnscriptedError(message);
        if (code == "context_overflow") throw ContextOverflowError(message);
        throw ProtocolError(message, status);
    }

    BackendDescriptor descriptor_;
    std::string base_url_;
};

}  // namespace

std::shared_ptr<Backend> http_backend(BackendDescriptor descriptor) {
    return std::make_shared<HttpBackend>(std::move(descriptor));
}

}  // namespace quorum::backend
