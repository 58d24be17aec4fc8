// quite: command-line front end for the rewrite engine.
//
//   quite rewrite --sql q.sql --dsn "$QUITE_DSN" [--mode mock --script s.json] [--no-hints]
//   quite bench --workload dir/ --dsn ... [--csv out.csv]
//   quite kb build --in raw/ --out corpus.jsonl [--docs docs_points.jsonl]
//   quite kb query --corpus corpus.jsonl "text"
//   quite hints analyze --sql q.sql --dsn ...
//
// Exit status: 0 success (including a safe fallback to the original query),
// 1 database connection failure, 2 invalid input or usage.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "quite/bench.hpp"
#include "quite/config.hpp"
#include "quite/corrector.hpp"
#include "quite/db.hpp"
#include "quite/fsm.hpp"
#include "quite/hints.hpp"
#include "quite/kb.hpp"
#include "quite/llm.hpp"
#include "quite/pipeline.hpp"
#include "quite/prompts.hpp"
#include "quite/sql.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConnection = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::optional<std::string> dsn;
    std::string mode = "live";
    std::string script;
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    std::optional<std::string> reasoning_model;
    std::string transcript;
    bool verbose = false;
};

std::string read_file(const std::string& path) {
    if (path == "-") {
        std::stringstream ss;
        ss << std::cin.rdbuf();
        return ss.str();
    }
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write " + path);
    out << text;
}

quite::config::Settings settings_for(const Common& c) {
    if (c.config_path.empty()) return {};
    return quite::config::Settings::load(c.config_path);
}

std::string require_dsn(const Common& c, const quite::config::Settings& s) {
    auto dsn = s.resolve("db.dsn", c.dsn, "QUITE_DSN");
    if (!dsn || dsn->empty()) throw UsageError("no database given: pass --dsn, set QUITE_DSN or db.dsn in the config file");
    return *dsn;
}

std::unique_ptr<quite::db::PgDatabase> connect(const Common& c, const quite::config::Settings& s) {
    auto cfg = quite::db::DbConfig::from_dsn(require_dsn(c, s));
    cfg.statement_timeout = quite::db::Seconds(s.get_double("db.statement_timeout_s", 300.0));
    return std::make_unique<quite::db::PgDatabase>(cfg);
}

struct Llm {
    std::shared_ptr<quite::llm::Provider> provider;
    std::shared_ptr<quite::llm::Transcript> transcript = std::make_shared<quite::llm::Transcript>();
    std::unique_ptr<quite::llm::Binding> reasoning, rewrite, assistant, decision, hints, kb;

    quite::fsm::AgentBindings agents() const { return {reasoning.get(), rewrite.get(), assistant.get(), decision.get()}; }
};

std::unique_ptr<Llm> make_llm(const Common& c, const quite::config::Settings& s) {
    auto out = std::make_unique<Llm>();
    quite::llm::ProviderConfig base;
    if (c.mode == "mock") {
        const auto script = c.script.empty() ? s.get("llm.script").value_or("") : c.script;
        if (script.empty()) throw UsageError("--mode mock needs --script");
        out->provider = std::make_shared<quite::llm::ScriptedMock>(quite::llm::ScriptedMock::from_file(script));
        base.model_name = "scripted-mock";
    } else if (c.mode == "live") {
        base = quite::llm::config_from_environment();
        if (auto v = s.resolve("llm.endpoint", c.endpoint, nullptr)) base.endpoint = *v;
        if (base.endpoint.empty()) throw UsageError("live mode needs an endpoint: --endpoint or QUITE_LLM_ENDPOINT");
        if (auto m = s.resolve("llm.model", c.model, "QUITE_LLM_MODEL")) base.model_name = *m;
        if (auto k = s.get("llm.api_key"); k && base.api_key.empty()) base.api_key = *k;
        if (base.model_name.empty()) throw UsageError("live mode needs a model: --model or QUITE_LLM_MODEL");
        base.temperature = s.get_double("llm.temperature", 0.0);
        base.max_output_tokens = s.get_int("llm.max_output_tokens", base.max_output_tokens);
        base.max_retries = s.get_int("llm.max_retries", base.max_retries);
        base.timeout = std::chrono::milliseconds(static_cast<long>(s.get_double("llm.timeout_s", 300.0) * 1000));
        out->provider = std::make_shared<quite::llm::HttpChatClient>();
    } else {
        throw UsageError("--mode must be live or mock");
    }
    auto reasoning_cfg = base;
    if (auto m = s.resolve("llm.reasoning_model", c.reasoning_model, "QUITE_LLM_REASONING_MODEL"))
        reasoning_cfg.model_name = *m;
    auto bind = [&](const char* agent, const quite::llm::ProviderConfig& cfg) {
        return std::make_unique<quite::llm::Binding>(agent, out->provider, cfg, out->transcript);
    };
    out->reasoning = bind("reasoning", reasoning_cfg);
    out->rewrite = bind("rewrite", base);
    out->assistant = bind("assistant", base);
    out->decision = bind("decision", base);
    out->hints = bind("hints", base);
    out->kb = bind("kb", base);
    return out;
}

quite::kb::Corpus load_corpus(const quite::config::Settings& s, const std::string& flag) {
    const auto path = !flag.empty() ? flag : s.get("kb.corpus").value_or("");
    if (path.empty()) return {};
    return quite::kb::Corpus::load_jsonl(path);
}

quite::pipeline::Options options_for(const quite::config::Settings& s, bool no_hints) {
    quite::pipeline::Options o;
    o.fsm.max_iterations = s.get_int("fsm.max_iterations", 2);
    o.fsm.kb_k = static_cast<std::size_t>(s.get_int("kb.k", 3));
    o.fsm.mdp.discount = s.get_double("mdp.discount", 1.0);
    o.inject_hints = !no_hints && s.get_bool("hints.enabled", true);
    o.analyze.small_cte_rows = s.get_double("hints.small_cte_rows", 1000.0);
    o.select.compat_no_materialize = s.get_bool("hints.compat_no_materialize", true);
    o.select.oracle_gate = s.get_bool("hints.oracle_gate", true);
    return o;
}

quite::corrector::CorrectorConfig corrector_config(const quite::config::Settings& s) {
    quite::corrector::CorrectorConfig c;
    c.k_max = s.get_int("corrector.k_max", 3);
    c.budget = quite::db::Seconds(s.get_double("corrector.budget_s", 60.0));
    c.max_llm_iterations = s.get_int("corrector.max_iterations", 5);
    c.oracle_gate = s.get_bool("corrector.oracle_gate", true);
    return c;
}

std::shared_ptr<quite::corrector::ExternalVerifier> verifier_for(const quite::config::Settings& s) {
    if (auto cmd = s.get("corrector.verifier"); cmd && !cmd->empty())
        return std::make_shared<quite::corrector::SubprocessVerifier>(*cmd);
    return std::make_shared<quite::corrector::AlwaysUnknown>();
}

void add_common(CLI::App* cmd, Common& c, bool with_db) {
    cmd->add_option("--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    if (with_db) cmd->add_option("--dsn", c.dsn, "libpq connection string (or QUITE_DSN)");
    cmd->add_option("--mode", c.mode, "LLM provider: live or mock")->check(CLI::IsMember({"live", "mock"}));
    cmd->add_option("--script", c.script, "scripted responses for --mode mock");
    cmd->add_option("--endpoint", c.endpoint, "chat-completions URL (or QUITE_LLM_ENDPOINT)");
    cmd->add_option("--model", c.model, "model name (or QUITE_LLM_MODEL)");
    cmd->add_option("--reasoning-model", c.reasoning_model, "model for the reasoning agent");
    cmd->add_option("--transcript", c.transcript, "write every prompt and response here (JSON lines)");
    cmd->add_flag("-v,--verbose", c.verbose, "debug logging");
}

struct RewriteArgs {
    std::string sql_path;
    std::string query;
    std::string out;
    std::string report;
    std::string corpus;
    bool no_hints = false;
};

int cmd_rewrite(const Common& c, const RewriteArgs& a) {
    const auto s = settings_for(c);
    const std::string text = !a.query.empty() ? a.query : (!a.sql_path.empty() ? read_file(a.sql_path) : "");
    if (quite::sql::normalize_whitespace(text).empty()) throw UsageError("no SQL given: pass --sql FILE or --query TEXT");
    const quite::SqlQuery q(text);

    auto database = connect(c, s);
    auto llm = make_llm(c, s);
    const auto corpus = load_corpus(s, a.corpus);
    const quite::corrector::Corrector corrector(database.get(), verifier_for(s), corrector_config(s));
    const quite::fsm::Dependencies deps{llm->agents(), &corrector, &corpus, database.get()};

    auto result = quite::pipeline::rewrite(q, deps, llm->hints.get(), options_for(s, a.no_hints));

    std::string transcript = c.transcript;
    if (transcript.empty() && !a.report.empty()) transcript = a.report + ".transcript.jsonl";
    if (!transcript.empty()) llm->transcript->write_jsonl(transcript);
    if (!a.report.empty()) write_text(a.report, quite::pipeline::to_json(result, transcript).dump(2) + "\n");

    const std::string final_text = result.final_sql.text() + "\n";
    if (!a.out.empty())
        write_text(a.out, final_text);
    else
        std::cout << final_text;

    if (result.run.trace.failed) {
        spdlog::error("rewrite aborted: {}", result.run.trace.failure);
        return result.run.trace.failure.rfind("database", 0) == 0 ? kExitConnection : kExitOk;
    }
    return kExitOk;
}

struct BenchArgs {
    std::string workload;
    std::string csv;
    std::string corpus;
    std::string summary;
    bool no_hints = false;
    int warmups = 1;
    int runs = 3;
    double cap = 300.0;
};

int cmd_bench(const Common& c, const BenchArgs& a) {
    const auto s = settings_for(c);
    auto database = connect(c, s);
    auto llm = make_llm(c, s);
    const auto corpus = load_corpus(s, a.corpus);
    const quite::corrector::Corrector corrector(database.get(), verifier_for(s), corrector_config(s));
    const quite::fsm::Dependencies deps{llm->agents(), &corrector, &corpus, database.get()};
    const auto options = options_for(s, a.no_hints);

    const auto workload = quite::bench::load_workload(a.workload);
    if (workload.empty()) throw UsageError("no .sql files in " + a.workload);

    auto rewriter = [&](const quite::bench::WorkloadQuery& wq) {
        auto r = quite::pipeline::rewrite(wq.sql, deps, llm->hints.get(), options);
        if (r.run.trace.failed) throw std::runtime_error(r.run.trace.failure);
        return r.final_sql;
    };
    const auto records = quite::bench::run(workload, *database, rewriter,
                                           {a.warmups, a.runs, quite::db::Seconds(a.cap)});
    if (!a.csv.empty()) quite::bench::write_csv(a.csv, records);
    const auto summary = quite::bench::format_summary(quite::bench::summarize(records));
    if (!a.summary.empty()) write_text(a.summary, summary);
    for (const auto& r : records)
        std::cout << fmt::format("{:<24} orig {:.6f}s  rewrite {:.6f}s  eq={} improved={} {}\n", r.query_id,
                                 r.orig_mean_s, r.rw_mean_s, r.equivalent, r.improved, r.note);
    std::cout << summary;
    if (!c.transcript.empty()) llm->transcript->write_jsonl(c.transcript);
    return kExitOk;
}

struct KbBuildArgs {
    std::string in;
    std::string out;
    std::string docs;
    bool offline = false;
};

int cmd_kb_build(const Common& c, const KbBuildArgs& a) {
    const auto s = settings_for(c);
    std::unique_ptr<Llm> llm;
    if (!a.offline) llm = make_llm(c, s);
    quite::kb::HashingEmbedder embedder;
    std::optional<quite::kb::DocPointIndex> docs;
    if (!a.docs.empty()) docs = quite::kb::DocPointIndex::load_jsonl(a.docs, embedder);
    auto report = quite::kb::build_corpus(a.in, docs ? &*docs : nullptr, embedder, llm ? llm->kb.get() : nullptr);
    report.corpus.save_jsonl(a.out);
    std::cout << fmt::format("{} entries written to {}\n", report.corpus.size(), a.out);
    for (auto cat : quite::kb::kAllCategories) {
        const auto n = std::count_if(report.corpus.entries().begin(), report.corpus.entries().end(),
                                     [&](const quite::kb::KbEntry& e) { return e.category == cat; });
        std::cout << fmt::format("  {:<26} {}\n", quite::kb::to_string(cat), n);
    }
    for (const auto& r : report.skipped) std::cout << fmt::format("skipped {}: {}\n", r.unit_id, r.reason);
    for (const auto& r : report.dropped) std::cout << fmt::format("dropped {}: {}\n", r.unit_id, r.reason);
    if (llm && !c.transcript.empty()) llm->transcript->write_jsonl(c.transcript);
    return kExitOk;
}

struct KbQueryArgs {
    std::string corpus;
    std::string text;
    std::size_t k = 3;
    std::string category;
    bool json = false;
};

int cmd_kb_query(const KbQueryArgs& a) {
    const auto corpus = quite::kb::Corpus::load_jsonl(a.corpus);
    std::optional<quite::kb::Category> cat;
    if (!a.category.empty()) {
        cat = quite::kb::category_from_string(a.category);
        if (!cat) throw UsageError("unknown category " + a.category);
    }
    const auto hits = corpus.retrieve(a.text, a.k, cat);
    if (a.json) {
        auto arr = nlohmann::json::array();
        for (const auto& h : hits) arr.push_back({{"id", h.entry.id}, {"score", h.score}, {"entry", quite::kb::to_json(h.entry)}});
        std::cout << arr.dump(2) << "\n";
        return kExitOk;
    }
    for (const auto& h : hits) {
        std::cout << fmt::format("{:.6f}  {}  [{}]  {}\n", h.score, h.entry.id, quite::kb::to_string(h.entry.category),
                                 h.entry.question.text);
    }
    return kExitOk;
}

struct HintsArgs {
    std::string sql_path;
    std::string query;
    bool heuristic = false;
    bool no_oracle = false;
};

int cmd_hints_analyze(const Common& c, const HintsArgs& a) {
    const auto s = settings_for(c);
    const std::string text = !a.query.empty() ? a.query : (!a.sql_path.empty() ? read_file(a.sql_path) : "");
    if (quite::sql::normalize_whitespace(text).empty()) throw UsageError("no SQL given: pass --sql FILE or --query TEXT");
    const quite::SqlQuery q(text);
    auto database = connect(c, s);
    std::unique_ptr<Llm> llm;
    if (!a.heuristic) llm = make_llm(c, s);

    const auto capability = database->probe_hint_capability();
    std::cout << "hint extension: " << capability.detail << "\n";
    const auto plan = database->explain(q).plan;
    quite::db::StatsSnapshot stats;
    try {
        stats = database->snapshot_stats(quite::sql::analyze(q.text()).base_tables());
    } catch (const quite::db::ConnectionError&) {
        throw;
    } catch (const std::exception& e) {
        spdlog::debug("no statistics: {}", e.what());
    }
    auto opts = options_for(s, false);
    opts.select.oracle_gate = opts.select.oracle_gate && !a.no_oracle;
    const auto suggestions = quite::hints::analyze_plan(q, plan, stats, llm ? llm->hints.get() : nullptr, opts.analyze);
    std::cout << fmt::format("{} suggestion(s)\n", suggestions.size());
    for (const auto& sg : suggestions) std::cout << fmt::format("  {}  <- {}\n", sg.hint.render(), sg.issue);
    const auto sel = quite::hints::select_hints(suggestions, q, *database, opts.select);
    for (const auto& d : sel.dropped) std::cout << fmt::format("  dropped {}: {}\n", d.hint.render(), d.reason);
    std::cout << sel.hinted.text() << "\n";
    if (llm && !c.transcript.empty()) llm->transcript->write_jsonl(c.transcript);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quite: LLM-agent SQL rewriting with optimizer hints"};
    app.require_subcommand(1);

    Common common;
    RewriteArgs rw;
    auto* rewrite = app.add_subcommand("rewrite", "rewrite one query");
    add_common(rewrite, common, true);
    rewrite->add_option("--sql", rw.sql_path, "file with the query ('-' for stdin)");
    rewrite->add_option("--query", rw.query, "the query text");
    rewrite->add_option("--out", rw.out, "write the final SQL here instead of stdout");
    rewrite->add_option("--report", rw.report, "write the JSON report here");
    rewrite->add_option("--kb", rw.corpus, "knowledge-base corpus (JSON lines)");
    rewrite->add_flag("--no-hints", rw.no_hints, "skip hint injection");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "benchmark a workload directory");
    add_common(bench, common, true);
    bench->add_option("--workload", ba.workload, "directory of .sql files")->required()->check(CLI::ExistingDirectory);
    bench->add_option("--csv", ba.csv, "per-query CSV output");
    bench->add_option("--summary", ba.summary, "summary output");
    bench->add_option("--kb", ba.corpus, "knowledge-base corpus (JSON lines)");
    bench->add_option("--warmups", ba.warmups, "unmeasured runs per query")->check(CLI::NonNegativeNumber);
    bench->add_option("--runs", ba.runs, "measured runs per query")->check(CLI::PositiveNumber);
    bench->add_option("--cap", ba.cap, "per-run timeout in seconds")->check(CLI::PositiveNumber);
    bench->add_flag("--no-hints", ba.no_hints, "skip hint injection");

    auto* kb = app.add_subcommand("kb", "knowledge base");
    kb->require_subcommand(1);
    KbBuildArgs kbb;
    auto* kb_build = kb->add_subcommand("build", "ingest, filter, enhance and classify raw Q&A units");
    add_common(kb_build, common, false);
    kb_build->add_option("--in", kbb.in, "directory of raw units")->required()->check(CLI::ExistingDirectory);
    kb_build->add_option("--out", kbb.out, "corpus output (JSON lines)")->required();
    kb_build->add_option("--docs", kbb.docs, "documentation points (JSON lines)")->check(CLI::ExistingFile);
    kb_build->add_flag("--offline", kbb.offline, "no LLM: net-likes filtering and keyword classification");
    KbQueryArgs kbq;
    auto* kb_query = kb->add_subcommand("query", "BM25 retrieval");
    kb_query->add_option("--corpus", kbq.corpus, "corpus (JSON lines)")->required()->check(CLI::ExistingFile);
    kb_query->add_option("-k", kbq.k, "number of entries")->check(CLI::PositiveNumber);
    kb_query->add_option("--category", kbq.category, "restrict to one category");
    kb_query->add_flag("--json", kbq.json, "JSON output");
    kb_query->add_option("text", kbq.text, "query text")->required();

    auto* hints = app.add_subcommand("hints", "optimizer hints");
    hints->require_subcommand(1);
    HintsArgs ha;
    auto* analyze = hints->add_subcommand("analyze", "suggest and select hints for a query");
    add_common(analyze, common, true);
    analyze->add_option("--sql", ha.sql_path, "file with the query ('-' for stdin)");
    analyze->add_option("--query", ha.query, "the query text");
    analyze->add_flag("--heuristic", ha.heuristic, "judge the plan with built-in rules instead of the LLM");
    analyze->add_flag("--no-oracle", ha.no_oracle, "skip the result comparison of the hinted query");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return kExitUsage;
    }

    spdlog::set_level(common.verbose ? spdlog::level::debug : spdlog::level::warn);
    spdlog::set_default_logger(spdlog::default_logger()->clone("quite"));

    try {
        if (rewrite->parsed()) return cmd_rewrite(common, rw);
        if (bench->parsed()) return cmd_bench(common, ba);
        if (kb_build->parsed()) return cmd_kb_build(common, kbb);
        if (kb_query->parsed()) return cmd_kb_query(kbq);
        if (analyze->parsed()) return cmd_hints_analyze(common, ha);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        for (auto* sub : {rewrite, bench, kb_build, kb_query, analyze})
            if (sub->parsed()) std::cerr << sub->help();
        return kExitUsage;
    } catch (const quite::config::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const quite::PreconditionViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const quite::db::ConnectionError& e) {
        std::cerr << "error: cannot reach the database: " << e.what() << "\n";
        return kExitConnection;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
