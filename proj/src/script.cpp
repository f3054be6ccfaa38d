#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "quorum/backend.hpp"

namespace quorum::backend {

namespace {

using nlohmann::json;

bool env_var_name_ok(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
               (c >= '0' && c <= '9') || c == '_';
    });
}

[[noreturn]] void bad_field(const std::string& where, const std::string& what) {
    throw ConfigError("backend config: " + where + " " + what);
}

std::string req_string(const json& j, const std::string& key) {
    if (!j.contains(key)) bad_field(key, "is required");
    if (!j.at(key).is_string()) bad_field(key, "must be a string");
    return j.at(key).get<std::string>();
}

std::string opt_string(const json& j, const std::string& key,
                       const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) bad_field(key, "must be a string");
    return j.at(key).get<std::string>();
}

int opt_int(const json& j, const std::string& key, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) bad_field(key, "must be an integer");
    return j.at(key).get<int>();
}

double opt_double(const json& j, const std::string& key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) bad_field(key, "must be a number");
    return j.at(key).get<double>();
}

bool opt_bool(const json& j, const std::string& key, bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) bad_field(key, "must be a boolean");
    return j.at(key).get<bool>();
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("backend config: unknown field '" + key + "' in " +
                              where);
    }
}

FinishReason parse_finish_reason(const std::string& s, const std::string& where) {
    if (s == "stop") return FinishReason::stop;
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    throw ScriptError("script: " + where + ": unknown finish_reason '" + s + "'");
}

std::vector<double> parse_prob_list(const json& j, const std::string& where) {
    if (!j.is_array())
        throw ScriptError("script: " + where + ": token_probs must be an array");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number())
            throw ScriptError("script: " + where +
                              ": token_probs entries must be numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

std::vector<std::vector<double>> parse_dist_rows(const json& j,
                                                 const std::string& where) {
    if (!j.is_array())
        throw ScriptError("script: " + where + ": distributions must be an array");
    std::vector<std::vector<double>> rows;
    rows.reserve(j.size());
    for (const auto& row : j) {
        if (!row.is_array())
            throw ScriptError("script: " + where +
                              ": each distribution row must be an array");
        std::vector<double> r;
        r.reserve(row.size());
        for (const auto& v : row) {
            if (!v.is_number())
                throw ScriptError("script: " + where +
                                  ": distribution entries must be numbers");
            r.push_back(v.get<double>());
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

ScriptTable::Entry parse_entry(const json& j, const std::string& where) {
    if (!j.is_object())
        throw ScriptError("script: " + where + " must be an object");
    ScriptTable::Entry entry;
    if (j.contains("context_contains")) {
        const json& cc = j.at("context_contains");
        if (cc.is_string()) {
            entry.context_contains.push_back(cc.get<std::string>());
        } else if (cc.is_array()) {
            for (const auto& v : cc) {
                if (!v.is_string())
                    throw ScriptError("script: " + where +
                                      ": context_contains must hold strings");
                entry.context_contains.push_back(v.get<std::string>());
            }
        } else {
            throw ScriptError("script: " + where +
                              ": context_contains must be a string or array");
        }
    }
    if (j.contains("generations")) {
        const json& gens = j.at("generations");
        if (!gens.is_array())
            throw ScriptError("script: " + where + ": generations must be an array");
        for (std::size_t g = 0; g < gens.size(); ++g) {
            const std::string gw = where + ": generation " + std::to_string(g);
            const json& gj = gens.at(g);
            if (!gj.is_object())
                throw ScriptError("script: " + gw + " must be an object");
            ScriptTable::GenerationAlt alt;
            if (!gj.contains("text") || !gj.at("text").is_string())
                throw ScriptError("script: " + gw + ": text must be a string");
            alt.text = gj.at("text").get<std::string>();
            if (gj.contains("token_probs"))
                alt.token_probs = parse_prob_list(gj.at("token_probs"), gw);
            if (gj.contains("distributions"))
                alt.distributions = parse_dist_rows(gj.at("distributions"), gw);
            if (gj.contains("finish_reason")) {
                if (!gj.at("finish_reason").is_string())
                    throw ScriptError("script: " + gw +
                                      ": finish_reason must be a string");
                alt.finish_reason =
                    parse_finish_reason(gj.at("finish_reason").get<std::string>(), gw);
            }
            entry.generations.push_back(std::move(alt));
        }
    }
    if (j.contains("scores")) {
        const json& scores = j.at("scores");
        if (!scores.is_array())
            throw ScriptError("script: " + where + ": scores must be an array");
        for (std::size_t s = 0; s < scores.size(); ++s) {
            const std::string sw = where + ": score " + std::to_string(s);
            const json& sj = scores.at(s);
            if (!sj.is_object())
                throw ScriptError("script: " + sw + " must be an object");
            ScriptTable::Score score;
            if (!sj.contains("completion") || !sj.at("completion").is_string())
                throw ScriptError("script: " + sw + ": completion must be a string");
            score.completion = sj.at("completion").get<std::string>();
            if (!sj.contains("token_probs"))
                throw ScriptError("script: " + sw + ": token_probs is required");
            score.token_probs = parse_prob_list(sj.at("token_probs"), sw);
            if (sj.contains("distributions"))
                score.distributions = parse_dist_rows(sj.at("distributions"), sw);
            entry.scores.push_back(std::move(score));
        }
    }
    return entry;
}

void check_probs(const std::vector<double>& probs, const std::string& where) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (!std::isfinite(p) || p <= 0.0 || p > 1.0)
            throw ScriptError("script: " + where + ": token probability " +
                              std::to_string(i) + " out of (0, 1]");
    }
}

void check_dists(const std::vector<std::vector<double>>& rows,
                 std::size_t token_count, std::int32_t vocab_size,
                 const std::string& where) {
    if (rows.empty()) return;
    if (vocab_size <= 0)
        throw ScriptError(
            "script: vocab_size must be > 0 when distributions are present");
    if (rows.size() != token_count)
        throw ScriptError("script: " + where +
                          ": distribution rows must match the token count");
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::string rw = where + ": distribution row " + std::to_string(r);
        if (rows[r].size() != static_cast<std::size_t>(vocab_size))
            throw ScriptError("script: " + rw + " must have vocab_size entries");
        double sum = 0.0;
        for (double v : rows[r]) {
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw ScriptError("script: " + rw + ": entry out of [0, 1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ScriptError("script: " + rw + " must sum to 1 (got " +
                              std::to_string(sum) + ")");
    }
}

void validate_entry(const ScriptTable::Entry& entry, std::int32_t vocab_size,
                    const std::string& where) {
    for (std::size_t g = 0; g < entry.generations.size(); ++g) {
        const auto& alt = entry.generations[g];
        const std::string gw = where + ": generation " + std::to_string(g);
        check_probs(alt.token_probs, gw);
        check_dists(alt.distributions, alt.token_probs.size(), vocab_size, gw);
    }
    std::set<std::string> seen;
    for (std::size_t s = 0; s < entry.scores.size(); ++s) {
        const auto& score = entry.scores[s];
        const std::string sw = where + ": score " + std::to_string(s);
        if (score.completion.empty())
            throw ScriptError("script: " + sw + ": empty scripted completion");
        if (!seen.insert(score.completion).second)
            throw ScriptError("script: " + sw + ": duplicate scripted completion");
        if (score.token_probs.empty())
            throw ScriptError("script: " + sw +
                              ": scripted score needs at least one token");
        check_probs(score.token_probs, sw);
        check_dists(score.distributions, score.token_probs.size(), vocab_size, sw);
    }
}

}  // namespace

double to_natural(double logprob, LogprobBase base) {
    switch (base) {
        case LogprobBase::natural: return logprob;
        case LogprobBase::base10: return logprob * std::log(10.0);
        case LogprobBase::base2: return logprob * std::log(2.0);
    }
    throw Error("unknown logprob base");
}

std::string finish_reason_name(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    throw Error("unknown finish reason");
}

void BackendDescriptor::validate() const {
    if (name.empty()) throw ConfigError("backend config: name must be nonempty");
    if (endpoint.empty())
        throw ConfigError("backend config: endpoint must be nonempty");
    if (model_id.empty())
        throw ConfigError("backend config: model_id must be nonempty");
    if (!(sampling.temperature >= 0.0))
        throw ConfigError("backend config: sampling.temperature must be >= 0");
    if (sampling.max_tokens <= 0)
        throw ConfigError("backend config: sampling.max_tokens must be > 0");
    if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0))
        throw ConfigError("backend config: sampling.top_p must be in (0, 1]");
    if (context_window <= 0)
        throw ConfigError("backend config: context_window must be > 0");
    if (max_attempts < 1)
        throw ConfigError("backend config: max_attempts must be >= 1");
    if (backoff_base.count() < 0)
        throw ConfigError("backend config: backoff_base_ms must be >= 0");
    if (generate_timeout.count() <= 0 || scoring_timeout.count() <= 0)
        throw ConfigError("backend config: timeouts must be > 0");
    if (!env_var_name_ok(api_key_env))
        throw ConfigError(
            "backend config: api_key_env must be an environment variable NAME "
            "(letters, digits, underscore), never a credential value");
}

BackendDescriptor descriptor_from_json(const nlohmann::json& j) {
    if (!j.is_object())
        throw ConfigError("backend config: each backend must be an object");
    reject_unknown_keys(j,
                        {"name", "endpoint", "model_id", "capabilities", "sampling",
                         "logprob_base", "api_key_env", "script", "context_window",
                         "max_attempts", "backoff_base_ms", "generate_timeout_ms",
                         "scoring_timeout_ms"},
                        "backend");
    BackendDescriptor d;
    d.name = req_string(j, "name");
    d.endpoint = req_string(j, "endpoint");
    d.model_id = opt_string(j, "model_id", d.name);
    if (j.contains("capabilities")) {
        const json& c = j.at("capabilities");
        if (!c.is_object()) bad_field("capabilities", "must be an object");
        reject_unknown_keys(
            c, {"token_logprobs", "full_distribution", "teacher_forced_scoring"},
            "capabilities");
        d.capabilities.token_logprobs = opt_bool(c, "token_logprobs", true);
        d.capabilities.full_distribution = opt_bool(c, "full_distribution", false);
        d.capabilities.teacher_forced_scoring =
            opt_bool(c, "teacher_forced_scoring", true);
    }
    if (j.contains("sampling")) {
        const json& s = j.at("sampling");
        if (!s.is_object()) bad_field("sampling", "must be an object");
        reject_unknown_keys(s, {"temperature", "max_tokens", "top_p"}, "sampling");
        d.sampling.temperature = opt_double(s, "temperature", 1.0);
        d.sampling.max_tokens = opt_int(s, "max_tokens", 256);
        d.sampling.top_p = opt_double(s, "top_p", 1.0);
    }
    const std::string base = opt_string(j, "logprob_base", "natural");
    if (base == "natural") {
        d.logprob_base = LogprobBase::natural;
    } else if (base == "base10") {
        d.logprob_base = LogprobBase::base10;
    } else if (base == "base2") {
        d.logprob_base = LogprobBase::base2;
    } else {
        throw ConfigError("backend config: logprob_base must be one of "
                          "natural|base10|base2, got '" + base + "'");
    }
    d.api_key_env = opt_string(j, "api_key_env", "");
    d.script = opt_string(j, "script", "");
    d.context_window = opt_int(j, "context_window", 8192);
    d.max_attempts = opt_int(j, "max_attempts", 3);
    d.backoff_base = std::chrono::milliseconds(opt_int(j, "backoff_base_ms", 250));
    d.generate_timeout =
        std::chrono::milliseconds(opt_int(j, "generate_timeout_ms", 120000));
    d.scoring_timeout =
        std::chrono::milliseconds(opt_int(j, "scoring_timeout_ms", 60000));
    d.validate();
    return d;
}

nlohmann::ordered_json descriptor_to_json(const BackendDescriptor& d) {
    const char* base = "natural";
    if (d.logprob_base == LogprobBase::base10) base = "base10";
    if (d.logprob_base == LogprobBase::base2) base = "base2";
    nlohmann::ordered_json j;
    j["name"] = d.name;
    j["endpoint"] = d.endpoint;
    j["model_id"] = d.model_id;
    j["capabilities"] = {{"token_logprobs", d.capabilities.token_logprobs},
                         {"full_distribution", d.capabilities.full_distribution},
                         {"teacher_forced_scoring",
                          d.capabilities.teacher_forced_scoring}};
    j["sampling"] = {{"temperature", d.sampling.temperature},
                     {"max_tokens", d.sampling.max_tokens},
                     {"top_p", d.sampling.top_p}};
    j["logprob_base"] = base;
    if (!d.api_key_env.empty()) j["api_key_env"] = d.api_key_env;
    if (!d.script.empty()) j["script"] = d.script;
    j["context_window"] = d.context_window;
    j["max_attempts"] = d.max_attempts;
    j["backoff_base_ms"] = static_cast<int>(d.backoff_base.count());
    j["generate_timeout_ms"] = static_cast<int>(d.generate_timeout.count());
    j["scoring_timeout_ms"] = static_cast<int>(d.scoring_timeout.count());
    return j;
}

bool operator==(const Generation& a, const Generation& b) {
    if (a.text != b.text || a.finish_reason != b.finish_reason) return false;
    if (a.token_scores.has_value() != b.token_scores.has_value()) return false;
    if (a.token_scores) {
        const auto sa = a.token_scores->logprobs();
        const auto sb = b.token_scores->logprobs();
        if (!std::equal(sa.begin(), sa.end(), sb.begin(), sb.end())) return false;
    }
    if (a.distributions.has_value() != b.distributions.has_value()) return false;
    if (a.distributions) {
        if (a.distributions->size() != b.distributions->size()) return false;
        for (std::size_t i = 0; i < a.distributions->size(); ++i) {
            const auto& da = (*a.distributions)[i];
            const auto& db = (*b.distributions)[i];
            if (da.vocab_size() != db.vocab_size()) return false;
            const auto ea = da.entries();
            const auto eb = db.entries();
            if (!std::equal(ea.begin(), ea.end(), eb.begin(), eb.end()))
                return false;
        }
    }
    return true;
}

bool operator==(const ScoringResult& a, const ScoringResult& b) {
    Generation ga{"", a.token_scores, a.distributions, FinishReason::stop};
    Generation gb{"", b.token_scores, b.distributions, FinishReason::stop};
    return a.token_count == b.token_count && ga == gb;
}

void ScriptTable::validate() const {
    if (vocab_size < 0) throw ScriptError("script: vocab_size must be >= 0");
    for (std::size_t e = 0; e < entries.size(); ++e)
        validate_entry(entries[e], vocab_size, "entry " + std::to_string(e));
    if (fallback) validate_entry(*fallback, vocab_size, "fallback");
}

ScriptTable ScriptTable::parse(const nlohmann::json& j) {
    if (!j.is_object()) throw ScriptError("script root must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "vocab_size" && key != "entries" && key != "fallback")
            throw ScriptError("script: unknown field '" + key + "'");
    }
    ScriptTable table;
    if (j.contains("vocab_size")) {
        if (!j.at("vocab_size").is_number_integer())
            throw ScriptError("script: vocab_size must be an integer");
        table.vocab_size = j.at("vocab_size").get<std::int32_t>();
    }
    if (j.contains("entries")) {
        const json& entries = j.at("entries");
        if (!entries.is_array())
            throw ScriptError("script: entries must be an array");
        for (std::size_t e = 0; e < entries.size(); ++e)
            table.entries.push_back(
                parse_entry(entries.at(e), "entry " + std::to_string(e)));
    }
    if (j.contains("fallback"))
        table.fallback = parse_entry(j.at("fallback"), "fallback");
    table.validate();
    return table;
}

ScriptTable ScriptTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScriptError("cannot open script file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ScriptError("script parse error in " + path + ": " + e.what());
    }
    return parse(j);
}

const ScriptTable::Entry* ScriptTable::match(const std::string& context) const {
    for (const Entry& entry : entries) {
        const bool all_found = std::all_of(
            entry.context_contains.begin(), entry.context_contains.end(),
            [&](const std::string& needle) {
                return context.find(needle) != std::string::npos;
            });
        if (all_found) return &entry;
    }
    return fallback ? &*fallback : nullptr;
}

}  // namespace quorum::backend
