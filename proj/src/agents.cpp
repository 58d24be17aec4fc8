#include "quite/agents.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "quite/prompts.hpp"
#include "quite/sql.hpp"

namespace quite::agents {

namespace {

std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(a, b - a + 1));
}

bool same_text(const SqlQuery& a, const SqlQuery& b) {
    return sql::normalize_whitespace(a.text()) == sql::normalize_whitespace(b.text());
}

// "Step 2: predicate_pushdown" or "Step 2 - Predicate pushdown".
const std::regex& step_re() {
    static const std::regex re(R"((?:^|\n)[ \t*#>-]*step\s*\d+\s*[:.)-]\s*([^\n]*))", std::regex::icase);
    return re;
}

const std::regex& score_re() {
    static const std::regex re(R"(expected\s+cost\s+reduction\s*[:=]\s*(-?[0-9]+(?:\.[0-9]+)?))", std::regex::icase);
    return re;
}

void annotate(ChainNode& node, std::string_view prose) {
    const std::string text(prose);
    std::smatch m;
    if (std::regex_search(text, m, step_re())) {
        std::string head = trim(m[1].str());
        std::string key;
        for (char c : head) {
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_')
                key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            else if (c == ' ' || c == '-')
                key += '_';
            else
                break;
        }
        while (!key.empty() && key.back() == '_') key.pop_back();
        if (auto kind = refinement_kind_from_string(key)) {
            node.kind = *kind;
        } else {
            node.kind = RefinementKind::other;
            node.label = head.empty() ? "unlabelled step" : head;
        }
    } else {
        node.label = "unlabelled step";
    }
    if (std::regex_search(text, m, score_re())) node.self_score = std::stod(m[1].str());
    node.proposal_text = trim(prose);
}

ReasoningChain parse_text(std::string_view text) {
    ReasoningChain chain;
    std::size_t pos = 0;
    std::size_t prose_start = 0;
    while (true) {
        const auto open = text.find("```", pos);
        if (open == std::string_view::npos) break;
        const auto line_end = text.find('\n', open);
        if (line_end == std::string_view::npos) break;
        const auto close = text.find("```", line_end);
        if (close == std::string_view::npos) break;
        const std::string tag = sql::to_lower(text.substr(open + 3, line_end - open - 3));
        const bool sql_like = trim(tag).empty() || tag.find("sql") != std::string::npos ||
                              tag.find("postgres") != std::string::npos;
        if (sql_like) {
            const std::string fenced = "```sql\n" + std::string(text.substr(line_end + 1, close - line_end - 1)) + "\n```";
            auto found = llm::extract_sql(fenced);
            ChainNode node;
            annotate(node, text.substr(prose_start, open - prose_start));
            if (!found.empty()) node.sql_candidate = found.front();
            chain.nodes.push_back(std::move(node));
            prose_start = close + 3;
        }
        pos = close + 3;
    }
    if (chain.candidate_count() == 0) {
        for (auto& q : llm::extract_sql(text)) {
            ChainNode node;
            annotate(node, "");
            node.sql_candidate = q;
            chain.nodes.push_back(std::move(node));
        }
    }
    return chain;
}

std::string format_cost(const std::optional<CostEstimate>& c) {
    return c ? fmt::format("{:.2f}", c->total_cost) : std::string("n/a");
}

}  // namespace

std::size_t ReasoningChain::candidate_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const ChainNode& n) { return n.sql_candidate.has_value(); }));
}

ReasoningChain parse_chain(std::string_view trace) {
    const auto split = llm::split_reasoning(trace);
    ReasoningChain chain = parse_text(split.answer);
    if (chain.candidate_count() == 0 && split.has_boundary) chain = parse_text(split.thinking);
    chain.raw_trace = std::string(trace);
    return chain;
}

ReasoningChain reasoning_generate(const SqlQuery& q0, const db::StatsSnapshot& stats, const db::PlanTree& plan,
                                  const membuf::MemoryBuffer& buffer, int iteration, const llm::Binding& llm) {
    membuf::MemoryBuffer visible = buffer;
    if (iteration == 0) visible.erase(membuf::SliceKind::retrieved_knowledge);
    const std::string memory = visible.render(membuf::AgentRole::reasoning);

    const std::string prompt =
        prompts::fill("reasoning", {{"query", q0.text()},
                                    {"plan", plan.summary()},
                                    {"stats", stats.summary()},
                                    {"memory", memory.empty() ? std::string() : "\n## Shared memory\n" + memory + "\n"}});

    ReasoningChain chain = parse_chain(llm.ask("", prompt));
    chain.prompt = prompt;
    if (chain.candidate_count() > 0) return chain;

    spdlog::info("reasoning trace carried no SQL candidate; regenerating once");
    const std::string retry = prompt +
                              "\nYour previous answer contained no rewritten query. Give at least one step with a "
                              "```sql fenced block.\n";
    chain = parse_chain(llm.ask("", retry));
    chain.prompt = retry;
    chain.attempts = 2;
    if (chain.candidate_count() == 0) throw EmptyChain("reasoning trace carried no SQL candidate after one retry");
    return chain;
}

kb::Category category_for(RefinementKind kind, std::string_view description, const SqlQuery& sql) {
    switch (kind) {
        case RefinementKind::join_reorder: return kb::Category::join_optimization;
        case RefinementKind::constant_fold: return kb::Category::constant_folding;
        case RefinementKind::predicate_pushdown:
        case RefinementKind::predicate_simplify: return kb::Category::predicate_simplification;
        case RefinementKind::cte_conversion:
        case RefinementKind::subquery_flatten: return kb::Category::other;
        case RefinementKind::redundant_elim:
        case RefinementKind::other: break;
    }
    kb::KbEntry probe;
    probe.question = {std::string(description), sql.text()};
    return kb::classify_heuristic(probe);
}

std::optional<std::size_t> select_candidate(const std::vector<RewriteProposal>& proposals) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        const auto& p = proposals[i];
        if (!p.cost) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = proposals[*best];
        if (p.cost->total_cost < b.cost->total_cost) {
            best = i;
        } else if (p.cost->total_cost == b.cost->total_cost) {
            const double ps = p.self_score.value_or(-1e300);
            const double bs = b.self_score.value_or(-1e300);
            if (ps > bs) best = i;
        }
    }
    return best;
}

std::string render_proposals(const std::vector<RewriteProposal>& proposals) {
    if (proposals.empty()) return "(none)";
    std::ostringstream out;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        const auto& p = proposals[i];
        const auto kind = p.action.kind == RefinementKind::other && !p.action.label.empty()
                              ? p.action.label
                              : std::string(to_string(p.action.kind));
        std::string desc = p.action.description;
        if (desc.size() > 300) desc = desc.substr(0, 300) + "...";
        out << fmt::format("{}. [{}] {} (EXPLAIN cost {}, expected reward {:.2f})\n", i + 1, kb::to_string(p.category),
                           kind, format_cost(p.cost), p.expected_reward);
        if (!desc.empty()) out << "   " << desc << "\n";
    }
    return out.str();
}

RewriteResult rewrite_select_and_enhance(const SqlQuery& original, const CostEstimate& original_cost,
                                         const ReasoningChain& chain, db::Database& db, const llm::Binding& llm,
                                         const MdpConfig& mdp) {
    if (chain.candidate_count() == 0) throw PreconditionViolation("rewrite agent needs a chain with SQL candidates");

    std::vector<RewriteProposal> proposals;
    std::vector<double> step_rewards;
    double previous = original_cost.total_cost;
    for (const auto& node : chain.nodes) {
        if (!node.sql_candidate) continue;
        RewriteProposal p{category_for(node.kind, node.proposal_text, *node.sql_candidate),
                          RefinementAction{node.kind, node.label, node.proposal_text, *node.sql_candidate},
                          0.0,
                          std::nullopt,
                          node.self_score};
        try {
            p.cost = db.explain(*node.sql_candidate).cost;
        } catch (const db::ConnectionError&) {
            throw;
        } catch (const db::DbError& e) {
            spdlog::info("candidate rejected by EXPLAIN: {}", e.what());
        }
        if (p.cost) {
            step_rewards.push_back(reward(CostEstimate{previous, 0.0, CostSource::explain}, *p.cost).value);
            previous = p.cost->total_cost;
            p.expected_reward = discounted_return(step_rewards, mdp.discount);
        }
        proposals.push_back(std::move(p));
    }

    const auto best = select_candidate(proposals);
    if (!best) {
        return {original, original, std::move(proposals), true, "every candidate failed EXPLAIN"};
    }
    const SqlQuery selected = proposals[*best].action.resulting_sql;

    const std::string response = llm.ask(
        "", prompts::fill("rewrite_enhance",
                          {{"original", original.text()}, {"candidate", selected.text()},
                           {"proposals", render_proposals(proposals)}}));
    auto found = llm::extract_sql(response);
    if (found.empty()) {
        return {selected, selected, std::move(proposals), false, "enhancement returned no SQL; keeping the candidate"};
    }
    const SqlQuery enhanced = found.front();
    if (same_text(enhanced, selected)) {
        return {selected, selected, std::move(proposals), true, "enhancement judged the candidate well-optimized"};
    }

    RewriteProposal extra{category_for(RefinementKind::other, response, enhanced),
                          RefinementAction{RefinementKind::other, "enhancement", trim(llm::split_reasoning(response).answer),
                                           enhanced},
                          0.0,
                          std::nullopt,
                          std::nullopt};
    try {
        extra.cost = db.explain(enhanced).cost;
        extra.expected_reward = reward(original_cost, *extra.cost).value;
    } catch (const db::ConnectionError&) {
        throw;
    } catch (const db::DbError&) {
    }
    proposals.push_back(std::move(extra));
    return {selected, enhanced, std::move(proposals), false, "enhancement changed the candidate"};
}

AssistantResult assistant_verify(const SqlQuery& original, const SqlQuery& candidate,
                                 const corrector::Corrector& corrector, const llm::Binding& llm) {
    SqlQuery checked = candidate;
    int repairs = 0;
    if (!corrector.check_syntax(candidate).ok) {
        try {
            auto fixed = corrector.repair_syntax(candidate, llm);
            checked = fixed.query;
            repairs = fixed.attempts_used;
        } catch (const corrector::RepairFailed& e) {
            throw AbortIteration(fmt::format("syntax repair failed after {} attempt(s): {}", e.attempts_used(),
                                             e.last_error()));
        }
    }
    return {corrector.verify_equivalence(original, checked, &llm), repairs};
}

namespace {

std::map<std::string, int> node_type_counts(const db::PlanTree& plan) {
    std::map<std::string, int> counts;
    for (const auto* n : plan.nodes()) ++counts[n->node_type];
    return counts;
}

std::string describe_counts(const std::map<std::string, int>& counts) {
    std::string out;
    for (const auto& [type, n] : counts) {
        if (!out.empty()) out += ", ";
        out += n == 1 ? type : fmt::format("{} x{}", type, n);
    }
    return out.empty() ? "empty plan" : out;
}

int subplan_count(const db::PlanTree& plan) {
    int n = 0;
    for (const auto* node : plan.nodes())
        if (node->subplan_name && node->subplan_name->rfind("SubPlan", 0) == 0) ++n;
    return n;
}

struct Footprint {
    int operators = 0;
    double bytes = 0.0;
};

Footprint memory_footprint(const db::PlanTree& plan) {
    Footprint f;
    for (const auto* n : plan.nodes()) {
        if (n->kind == db::OperatorKind::sort || n->kind == db::OperatorKind::hash ||
            n->kind == db::OperatorKind::materialize) {
            ++f.operators;
            f.bytes += n->plan_rows * n->plan_width;
        }
    }
    return f;
}

}  // namespace

DecisionReport draft_report(const db::ExplainResult& before, const db::ExplainResult& after) {
    DecisionReport r;
    r.cost_changes.before = before.cost;
    r.cost_changes.after = after.cost;
    r.cost_changes.delta = reward(before.cost, after.cost).value;

    const auto cb = node_type_counts(before.plan);
    const auto ca = node_type_counts(after.plan);
    std::string plan_text;
    if (cb == ca) {
        plan_text = "same operator mix";
    } else {
        plan_text = fmt::format("operators before: {}; after: {}", describe_counts(cb), describe_counts(ca));
    }
    const int sb = subplan_count(before.plan);
    const int sa = subplan_count(after.plan);
    if (sb != sa) plan_text += fmt::format("; correlated subplans {} -> {}", sb, sa);
    r.plan_characteristics = plan_text;

    const auto fb = memory_footprint(before.plan);
    const auto fa = memory_footprint(after.plan);
    if (fb.operators == 0 && fa.operators == 0) {
        r.resource_utilization = "none observed";
    } else {
        r.resource_utilization = fmt::format(
            "sort/hash/materialize operators {} -> {}, estimated working set {:.0f} -> {:.0f} bytes", fb.operators,
            fa.operators, fb.bytes, fa.bytes);
    }
    return r;
}

static std::string without_verdict(const std::string& rendered) {
    const auto cut = rendered.rfind("\nVERDICT:");
    return cut == std::string::npos ? rendered : rendered.substr(0, cut);
}

std::string render_knowledge(const std::vector<kb::Scored>& entries) {
    if (entries.empty()) return "(no matching knowledge)";
    std::ostringstream out;
    for (const auto& s : entries) {
        const auto& e = s.entry;
        out << fmt::format("- [{}] {} (BM25 {:.3f})\n  Q: {}\n  A: {}\n  SQL: {}\n", kb::to_string(e.category), e.id,
                           s.score, e.question.text, e.answer.text, e.answer.sql);
    }
    return out.str();
}

DecisionResult decision_judge(const SqlQuery& original, const SqlQuery& candidate, const db::ExplainResult& before,
                              const db::ExplainResult& after, const llm::Binding& llm, const kb::Corpus& kb,
                              membuf::MemoryBuffer& buffer, int iteration,
                              const std::vector<RewriteProposal>& proposals, std::size_t k) {
    DecisionResult out;
    out.report = draft_report(before, after);

    const std::string memory = buffer.render(membuf::AgentRole::decision);
    out.raw_response = llm.ask(
        "", prompts::fill("decision", {{"original", original.text()},
                                       {"candidate", candidate.text()},
                                       {"report", without_verdict(out.report.render())},
                                       {"plan_before", before.plan.summary()},
                                       {"plan_after", after.plan.summary()},
                                       {"memory", memory.empty() ? std::string() : "\n## Shared memory\n" + memory + "\n"}}));

    if (auto v = llm::tagged_line(out.raw_response, "PLAN CHARACTERISTICS"); v && !v->empty())
        out.report.plan_characteristics = *v;
    if (auto v = llm::tagged_line(out.raw_response, "RESOURCE UTILIZATION"); v && !v->empty())
        out.report.resource_utilization =
            out.report.resource_utilization == "none observed" ? *v : out.report.resource_utilization + "; " + *v;
    if (auto v = llm::tagged_line(out.raw_response, "OTHER IMPROVEMENTS"); v && !v->empty())
        out.report.other_improvements = *v;

    const auto verdict = sql::to_upper(trim(llm::tagged_line(out.raw_response, "VERDICT").value_or("")));
    out.verdict = verdict.rfind("TRUE", 0) == 0 || verdict.rfind("YES", 0) == 0 || verdict.rfind("ACCEPT", 0) == 0;
    out.report.verdict = out.verdict;
    if (out.verdict) return out;

    out.retrieved = kb.retrieve(out.report.render() + "\n" + candidate.text(), k);
    buffer.put(membuf::SliceKind::query_info,
               fmt::format("Original query:\n{}\n\nRejected candidate (iteration {}):\n{}", original.text(), iteration,
                           candidate.text()),
               iteration);
    buffer.put(membuf::SliceKind::decision_report, out.report.render(), iteration);
    if (!proposals.empty()) buffer.put(membuf::SliceKind::rewrite_proposals, render_proposals(proposals), iteration);
    buffer.put(membuf::SliceKind::retrieved_knowledge, render_knowledge(out.retrieved), iteration);
    return out;
}

}  // namespace quite::agents
