// quorum: consensus over an ensemble of completion backends.
//
// Subcommands:
//   run              evaluate a dataset (debate or best-of-n, vote, tie-break)
//   score            teacher-force one completion on every backend
//   histogram        export scored-candidate TSV rows from a report
//   mock-serve       serve a mock script over the completions wire protocol
//   validate-config  check a config: parse, capabilities, one scoring probe
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure (backend or
// IO), 3 failed --assert check.
#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "quorum/harness.hpp"

namespace {

using namespace quorum;
using nlohmann::json;
using nlohmann::ordered_json;

volatile std::sig_atomic_t g_stop = 0;

void handle_signal(int) { g_stop = 1; }

std::string slurp(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string joined_metric_names() {
    std::string names;
    for (metrics::Metric m : metrics::all_metrics()) {
        if (!names.empty()) names += '|';
        names += metrics::metric_name(m);
    }
    return names;
}

// --- `run --assert` expressions --------------------------------------------

struct Assertion {
    std::string text;  // as typed
    std::string name;  // acc | ub | ties | gen | score
    std::string op;
    double rhs = 0.0;
};

Assertion parse_assertion(const std::string& expr) {
    static const char* kOps[] = {">=", "<=", "==", "!=", ">", "<"};
    for (const char* op : kOps) {
        const std::size_t pos = expr.find(op);
        if (pos == std::string::npos) continue;
        Assertion a;
        a.text = expr;
        a.name = trim(expr.substr(0, pos));
        a.op = op;
        const std::string rhs = trim(expr.substr(pos + std::strlen(op)));
        try {
            std::size_t used = 0;
            a.rhs = std::stod(rhs, &used);
            if (used != rhs.size()) throw std::invalid_argument(rhs);
        } catch (const std::exception&) {
            throw ConfigError("assertion '" + expr +
                              "': right-hand side must be a number");
        }
        if (a.name != "acc" && a.name != "ub" && a.name != "ties" &&
            a.name != "gen" && a.name != "score")
            throw ConfigError("assertion '" + expr +
                              "': left-hand side must be acc|ub|ties|gen|score");
        return a;
    }
    throw ConfigError("assertion '" + expr +
                      "' has no comparison operator (>=, <=, ==, !=, >, <)");
}

double summary_value(const harness::Summary& s, const std::string& name) {
    if (name == "acc") return s.accuracy;
    if (name == "ub") return s.upper_bound;
    if (name == "ties") return s.tie_rate;
    if (name == "gen") return static_cast<double>(s.ledger.generation_calls);
    if (name == "score") return static_cast<double>(s.ledger.scoring_calls);
    throw Error("unknown summary value: " + name);
}

bool assertion_holds(const Assertion& a, double actual) {
    constexpr double kEps = 1e-9;  // equality comparisons tolerate FP noise
    if (a.op == "==") return std::fabs(actual - a.rhs) <= kEps;
    if (a.op == "!=") return std::fabs(actual - a.rhs) > kEps;
    if (a.op == ">=") return actual >= a.rhs - kEps;
    if (a.op == "<=") return actual <= a.rhs + kEps;
    if (a.op == ">") return actual > a.rhs;
    if (a.op == "<") return actual < a.rhs;
    throw Error("unknown comparison: " + a.op);
}

// --- run -------------------------------------------------------------------

struct RunFlags {
    std::string config_path;
    std::string dataset;
    std::string dataset_format;
    std::string mode;
    int rounds = 0;
    int best_of = 0;
    std::string policy;
    std::string metric;
    std::string aggregation;
    std::string scoring_context;
    std::uint64_t seed = 0;
    int limit = 0;
    int concurrency = 0;
    bool emit_timestamp = false;
    std::string out_path;
    std::vector<std::string> asserts;
};

int cmd_run(const CLI::App& cmd, const RunFlags& f) {
    harness::RunConfig cfg = harness::load_run_config(f.config_path);

    if (cmd.count("--dataset")) cfg.dataset_path = f.dataset;
    if (cmd.count("--dataset-format")) {
        const auto parsed = harness::parse_dataset_format(f.dataset_format);
        if (!parsed)
            throw ConfigError("dataset format must be gsm8k_jsonl|mcq_jsonl, got '" +
                              f.dataset_format + "'");
        cfg.dataset_format = parsed;
    }
    if (cmd.count("--rounds")) cfg.rounds = f.rounds;
    if (cmd.count("--best-of")) cfg.best_of = f.best_of;
    if (cmd.count("--mode")) {
        if (f.mode == "debate") {
            if (cfg.best_of > 1)
                throw ConfigError("mode 'debate' is incompatible with best_of > 1");
        } else if (f.mode == "best-of-n") {
            if (cfg.best_of < 2)
                throw ConfigError(
                    "mode 'best-of-n' requires --best-of >= 2 (or best_of in the "
                    "config)");
        } else {
            throw ConfigError("mode must be debate|best-of-n, got '" + f.mode + "'");
        }
    }
    if (cmd.count("--policy")) {
        const auto parsed = harness::parse_run_policy(f.policy);
        if (!parsed)
            throw ConfigError("policy must be metric|random|all_cases, got '" +
                              f.policy + "'");
        cfg.policy = *parsed;
    }
    if (cmd.count("--metric")) {
        const auto parsed = metrics::parse_metric(f.metric);
        if (!parsed)
            throw ConfigError("metric must be one of " + joined_metric_names() +
                              ", got '" + f.metric + "'");
        cfg.metric = *parsed;
    }
    if (cmd.count("--aggregation")) {
        if (f.aggregation == "best_candidate")
            cfg.aggregation = consensus::TieAggregation::best_candidate;
        else if (f.aggregation == "mean_over_candidates")
            cfg.aggregation = consensus::TieAggregation::mean_over_candidates;
        else
            throw ConfigError(
                "aggregation must be best_candidate|mean_over_candidates, got '" +
                f.aggregation + "'");
    }
    if (cmd.count("--scoring-context")) {
        if (f.scoring_context == "shared")
            cfg.scoring_context = debate::ScoringContext::shared;
        else if (f.scoring_context == "per_model_view")
            cfg.scoring_context = debate::ScoringContext::per_model_view;
        else
            throw ConfigError("scoring context must be shared|per_model_view, got '" +
                              f.scoring_context + "'");
    }
    if (cmd.count("--seed")) cfg.seed = f.seed;
    if (cmd.count("--limit")) cfg.limit = f.limit;
    if (cmd.count("--concurrency")) cfg.concurrency = f.concurrency;
    if (cmd.count("--emit-timestamp")) cfg.emit_timestamp = f.emit_timestamp;

    std::vector<Assertion> assertions;
    for (const std::string& expr : f.asserts)
        assertions.push_back(parse_assertion(expr));

    cfg.validate();
    if (cfg.dataset_path.empty() || !cfg.dataset_format)
        throw ConfigError(
            "no dataset: pass --dataset/--dataset-format or set dataset.path and "
            "dataset.format in the config");

    const auto questions =
        harness::load_dataset(cfg.dataset_path, *cfg.dataset_format);
    const auto backends = harness::build_backends(cfg);
    const harness::RunReport report = harness::evaluate(backends, questions, cfg);

    if (!f.out_path.empty()) harness::write_report(report, f.out_path);

    const harness::Summary& s = report.summary;
    std::printf("acc=%.3f ub=%.3f ties=%.3f gen=%lld score=%lld\n", s.accuracy,
                s.upper_bound, s.tie_rate, s.ledger.generation_calls,
                s.ledger.scoring_calls);
    if (s.partial_questions > 0)
        std::fprintf(stderr, "warning: %d question(s) have partial results\n",
                     s.partial_questions);

    int failed = 0;
    for (const Assertion& a : assertions) {
        const double actual = summary_value(s, a.name);
        if (!assertion_holds(a, actual)) {
            std::fprintf(stderr, "assertion failed: %s (actual %s=%.6f)\n",
                         a.text.c_str(), a.name.c_str(), actual);
            ++failed;
        }
    }
    return failed > 0 ? 3 : 0;
}

// --- score -----------------------------------------------------------------

struct ScoreFlags {
    std::string config_path;
    std::string context_file;
    std::string completion_file;
    std::string metric;
    std::string format = "text";
};

int cmd_score(const CLI::App& cmd, const ScoreFlags& f) {
    if (f.format != "text" && f.format != "json")
        throw ConfigError("format must be text|json, got '" + f.format + "'");
    const std::string context = slurp(f.context_file, "context file");
    const std::string completion = slurp(f.completion_file, "completion file");
    if (completion.empty()) throw ConfigError("completion file is empty");

    harness::RunConfig cfg = harness::load_run_config(f.config_path);
    metrics::Metric metric = cfg.metric;
    if (cmd.count("--metric")) {
        const auto parsed = metrics::parse_metric(f.metric);
        if (!parsed)
            throw ConfigError("metric must be one of " + joined_metric_names() +
                              ", got '" + f.metric + "'");
        metric = *parsed;
    }
    for (const auto& d : cfg.backends) {
        if (!d.capabilities.teacher_forced_scoring)
            throw ConfigError("backend '" + d.name +
                              "' does not support teacher-forced scoring");
        if (metrics::requires_distribution(metric) &&
            !d.capabilities.full_distribution)
            throw ConfigError("metric '" +
                              std::string(metrics::metric_name(metric)) +
                              "' needs token distributions, but backend '" + d.name +
                              "' does not expose them");
    }

    const auto backends = harness::build_backends(cfg);
    std::vector<double> avg_logprobs, values;
    std::vector<int> token_counts;
    std::vector<std::vector<metrics::TokenDistribution>> dists;
    for (std::size_t i = 0; i < backends.size(); ++i) {
        const auto& name = cfg.backends[i].name;
        const backend::ScoringResult r =
            backends[i]->score_completion({context, completion, name});
        avg_logprobs.push_back(metrics::avg_log_likelihood(r.token_scores));
        token_counts.push_back(r.token_count);
        if (metrics::requires_distribution(metric)) {
            if (!r.distributions)
                throw ProtocolError("backend '" + name +
                                    "' returned no token distributions");
            dists.push_back(*r.distributions);
        }
        switch (metric) {
            case metrics::Metric::log_likelihood:
                values.push_back(avg_logprobs.back());
                break;
            case metrics::Metric::perplexity:
                values.push_back(metrics::perplexity(r.token_scores));
                break;
            case metrics::Metric::entropy:
                values.push_back(metrics::entropy(dists.back()));
                break;
            case metrics::Metric::gini:
                values.push_back(metrics::gini(dists.back()));
                break;
            case metrics::Metric::self_certainty:
                values.push_back(metrics::self_certainty(dists.back()));
                break;
            case metrics::Metric::kl_disagreement:
                break;  // needs every model; filled below
        }
    }
    if (metric == metrics::Metric::kl_disagreement)
        values = metrics::kl_disagreement_per_model(dists);

    const metrics::CalibratedScore calibrated = metrics::calibrate(values, metric);

    if (f.format == "json") {
        ordered_json out;
        out["metric"] = std::string(metrics::metric_name(metric));
        ordered_json per_model = ordered_json::array();
        for (std::size_t i = 0; i < backends.size(); ++i)
            per_model.push_back({{"backend", cfg.backends[i].name},
                                 {"avg_logprob", avg_logprobs[i]},
                                 {"token_count", token_counts[i]},
                                 {"value", values[i]}});
        out["per_model"] = std::move(per_model);
        out["calibrated"] = calibrated.value;
        std::cout << out.dump(2) << '\n';
    } else {
        for (std::size_t i = 0; i < backends.size(); ++i)
            std::printf("model=%s avg_logprob=%.17g tokens=%d value=%.17g\n",
                        cfg.backends[i].name.c_str(), avg_logprobs[i],
                        token_counts[i], values[i]);
        std::printf("calibrated=%.17g metric=%s\n", calibrated.value,
                    std::string(metrics::metric_name(metric)).c_str());
    }
    return 0;
}

// --- histogram -------------------------------------------------------------

int cmd_histogram(const std::string& report_path, const std::string& out_path) {
    const harness::RunReport report = harness::read_report(report_path);
    if (out_path.empty()) {
        harness::export_histogram(report, std::cout);
    } else {
        harness::export_histogram(report, out_path);
    }
    return 0;
}

// --- mock-serve ------------------------------------------------------------

int cmd_mock_serve(const std::string& script_path, int port) {
    backend::ScriptTable table = backend::ScriptTable::load(script_path);
    backend::MockServer server(std::move(table), port);
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "serving mock completions on http://127.0.0.1:" << server.port()
              << "/v1/completions" << std::endl;
    while (!g_stop)
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    std::cout << "stopped" << std::endl;
    return 0;
}

// --- validate-config -------------------------------------------------------

int cmd_validate_config(const std::string& config_path) {
    const harness::RunConfig cfg = harness::load_run_config(config_path);
    if (!cfg.dataset_path.empty() && cfg.dataset_format)
        harness::load_dataset(cfg.dataset_path, *cfg.dataset_format);
    const auto backends = harness::build_backends(cfg);

    // Reachability: one teacher-forced scoring probe of a 1-token completion
    // per scoring-capable backend; never a generation call. A well-formed
    // "unscripted" or overflow refusal still proves the backend answers.
    long long probes = 0;
    for (std::size_t i = 0; i < backends.size(); ++i) {
        const auto& d = cfg.backends[i];
        if (!d.capabilities.teacher_forced_scoring) {
            std::cout << "backend '" << d.name
                      << "': skipped probe (no teacher-forced scoring)\n";
            continue;
        }
        std::string status;
        ++probes;
        try {
            const backend::ScoringResult r =
                backends[i]->score_completion({"validate-config probe", "1", d.name});
            status = "ok (scored 1-token probe, " + std::to_string(r.token_count) +
                     " token)";
        } catch (const UnscriptedError&) {
            status = "ok (reachable; probe completion not scripted)";
        } catch (const ContextOverflowError&) {
            status = "ok (reachable; context window too small for the probe)";
        }
        std::cout << "backend '" << d.name << "': " << status << '\n';
    }
    std::cout << "config ok: " << cfg.backends.size() << " backend(s), policy="
              << harness::run_policy_name(cfg.policy)
              << ", metric=" << metrics::metric_name(cfg.metric)
              << "; probe scoring calls issued: " << probes << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "quorum: best-of-N / multi-round debate over an ensemble of completion "
        "backends, with majority voting and calibrated tie-breaking"};
    app.require_subcommand(1);

    const std::string metric_help =
        "tie-break metric: " + joined_metric_names();

    RunFlags rf;
    CLI::App* run = app.add_subcommand(
        "run", "evaluate a dataset under the configured ensemble and policy");
    run->add_option("--config", rf.config_path, "run config JSON")->required();
    run->add_option("--dataset", rf.dataset, "dataset JSONL path (overrides config)");
    run->add_option("--dataset-format", rf.dataset_format,
                    "dataset format: gsm8k_jsonl|mcq_jsonl");
    run->add_option("--mode", rf.mode, "mode: debate|best-of-n");
    run->add_option("--rounds", rf.rounds, "debate rounds K (>= 1)");
    run->add_option("--best-of", rf.best_of,
                    "samples n from a single backend (mode best-of-n)");
    run->add_option("--policy", rf.policy,
                    "selection policy: metric|random|all_cases");
    run->add_option("--metric", rf.metric, metric_help);
    run->add_option("--aggregation", rf.aggregation,
                    "tied-answer aggregation: best_candidate|mean_over_candidates");
    run->add_option("--scoring-context", rf.scoring_context,
                    "scoring context: shared|per_model_view");
    run->add_option("--seed", rf.seed, "master seed");
    run->add_option("--limit", rf.limit, "evaluate only the first N questions");
    run->add_option("--concurrency", rf.concurrency,
                    "max in-flight backend calls per fan-out");
    run->add_flag("--emit-timestamp", rf.emit_timestamp,
                  "stamp the report with the wall-clock time (not byte-stable)");
    run->add_option("--out", rf.out_path, "write the run report JSON here");
    run->add_option("--assert", rf.asserts,
                    "check 'name op value' after the run, e.g. acc>=0.9; names: "
                    "acc|ub|ties|gen|score; exit 3 on failure (repeatable)");

    ScoreFlags sf;
    CLI::App* score = app.add_subcommand(
        "score", "teacher-force one completion on every backend and calibrate");
    score->add_option("--config", sf.config_path, "run config JSON")->required();
    score->add_option("--context-file", sf.context_file,
                      "file holding the conditioning context")
        ->required();
    score->add_option("--completion-file", sf.completion_file,
                      "file holding the completion to score")
        ->required();
    score->add_option("--metric", sf.metric, metric_help);
    score->add_option("--format", sf.format, "output format: text|json");

    std::string hist_report, hist_out;
    CLI::App* hist = app.add_subcommand(
        "histogram", "export score/correctness TSV rows from a run report");
    hist->add_option("--report", hist_report, "run report JSON")->required();
    hist->add_option("--out", hist_out, "output TSV path (default: stdout)");

    std::string serve_script;
    int serve_port = 8080;
    CLI::App* serve = app.add_subcommand(
        "mock-serve",
        "serve a mock script over the completions wire protocol until SIGINT");
    serve->add_option("--script", serve_script, "mock script JSON")->required();
    serve->add_option("--port", serve_port,
                      "listen port on 127.0.0.1 (0 picks a free port)");

    std::string validate_config_path;
    CLI::App* validate = app.add_subcommand(
        "validate-config",
        "parse a config, check capabilities, and probe each backend");
    validate->add_option("--config", validate_config_path, "run config JSON")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (run->parsed()) return cmd_run(*run, rf);
        if (score->parsed()) return cmd_score(*score, sf);
        if (hist->parsed()) return cmd_histogram(hist_report, hist_out);
        if (serve->parsed()) return cmd_mock_serve(serve_script, serve_port);
        if (validate->parsed()) return cmd_validate_config(validate_config_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const ScriptError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
