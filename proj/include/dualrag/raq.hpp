#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <utility>
#include <vector>

#include "dualrag/core.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/llm.hpp"
#include "dualrag/prompts.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

struct PlanItem {
    EntityKey entity;
    std::vector<std::string> queries;
};

struct SynonymLink {
    std::string new_alias;
    std::string prior_canonical;
};

struct EntityQueryPlan {
    int iteration = 0;
    std::vector<PlanItem> items;
    std::vector<SynonymLink> synonym_links;
};

struct AnswerResult {
    std::string answer_text;
    bool forced = false;
};

// Each reasoning-side call also surfaces the rendered prompt and the raw
// model text; trajectory records keep them so training data can be derived
// from a trace without replaying it.
struct ReasonOutcome {
    ReasoningStep step;
    std::string prompt;
    std::string raw;
};

struct PlanOutcome {
    EntityQueryPlan plan;
    std::string prompt;
    std::string raw;
};

struct AnswerOutcome {
    AnswerResult answer;
    std::string prompt;
    std::string raw;
};

inline constexpr const char* kMarkerReprompt =
    "Your reply must end with one of the two markers.";

// Splits a reply into (rationale, flag). The reply must end with one of the
// two terminal markers; the flag is true for the retrieval marker. The
// rationale is everything before the marker, trimmed.
inline std::pair<std::string, bool> parse_reasoner_output(const std::string& text) {
    std::string t = trim(text);
    bool flag;
    size_t marker_len;
    if (ends_with(t, kRetrievalMarker)) {
        flag = true;
        marker_len = std::string(kRetrievalMarker).size();
    } else if (ends_with(t, kCompletedMarker)) {
        flag = false;
        marker_len = std::string(kCompletedMarker).size();
    } else {
        throw ParseError("reply does not end with a terminal marker", text);
    }
    std::string rationale = trim(t.substr(0, t.size() - marker_len));
    return {rationale, flag};
}

namespace detail {

// Issues the call, and on a parse failure reissues it once with the
// instruction line appended to the prompt. The retry keeps the same tag, so
// scripted runs replay deterministically.
template <typename Parse>
auto complete_with_reprompt(LlmSession& session, Role role, const SlotMap& slots,
                            const std::string& tag, const std::string& instruction, Parse parse,
                            std::string& prompt_out, std::string& raw_out) {
    prompt_out = session.prompts->render(role, slots);
    raw_out = session.complete_rendered(prompt_out, tag);
    try {
        return parse(raw_out);
    } catch (const ParseError&) {
        std::string reprompt = prompt_out + "\n\n" + instruction;
        raw_out = session.complete_rendered(reprompt, tag);
        return parse(raw_out);  // second failure propagates
    }
}

}  // namespace detail

// One Reasoner call: advances the rationale and decides whether retrieval is
// needed. `knowledge` is the rendered outline (or its ablation substitute).
inline ReasonOutcome reason_step_with_knowledge(LlmSession& session, const std::string& knowledge,
                                                const Question& question,
                                                const ReasoningHistory& history) {
    if (!history.valid()) throw Error("reasoning history has non-contiguous iterations");
    int iteration = history.next_iteration();
    SlotMap slots = {{"knowledge", knowledge},
                     {"question", question.text},
                     {"reasoning_history", render_reasoning_history(history)}};
    std::string tag = make_tag(Role::reasoner, question.id, iteration);

    ReasonOutcome out;
    auto parsed = detail::complete_with_reprompt(
        session, Role::reasoner, slots, tag, kMarkerReprompt,
        [](const std::string& raw) { return parse_reasoner_output(raw); }, out.prompt, out.raw);
    out.step = ReasoningStep{iteration, parsed.first, parsed.second};
    return out;
}

inline ReasonOutcome reason_step(LlmSession& session, const KnowledgeOutline& outline,
                                 const Question& question, const ReasoningHistory& history) {
    return reason_step_with_knowledge(session, render_outline(outline), question, history);
}

namespace detail {

// Parses one "(<n>) <Entity>: [<q1>, <q2>, ...]" line. Returns false when the
// line is not in that shape (prose lines are skipped by the caller).
inline bool parse_plan_line(const std::string& line, PlanItem& item) {
    std::string t = trim(line);
    if (t.size() < 2 || t[0] != '(') return false;
    size_t close = t.find(')');
    if (close == std::string::npos) return false;
    for (size_t i = 1; i < close; ++i) {
        if (!std::isdigit(static_cast<unsigned char>(t[i]))) return false;
    }
    if (close == 1) return false;
    size_t bracket_open = t.find('[', close);
    size_t bracket_close = t.rfind(']');
    if (bracket_open == std::string::npos || bracket_close == std::string::npos ||
        bracket_close < bracket_open) {
        return false;
    }
    std::string entity = trim(t.substr(close + 1, bracket_open - close - 1));
    while (!entity.empty() && entity.back() == ':') {
        entity.pop_back();
        entity = trim(entity);
    }
    if (entity.empty()) return false;

    std::vector<std::string> queries;
    std::vector<std::string> seen_folded;
    std::string inner = t.substr(bracket_open + 1, bracket_close - bracket_open - 1);
    size_t start = 0;
    while (start <= inner.size()) {
        size_t comma = inner.find(',', start);
        std::string piece =
            trim(comma == std::string::npos ? inner.substr(start) : inner.substr(start, comma - start));
        if (!piece.empty()) {
            std::string folded = lower(piece);
            if (std::find(seen_folded.begin(), seen_folded.end(), folded) == seen_folded.end()) {
                seen_folded.push_back(folded);
                queries.push_back(piece);
            }
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    item.entity = make_entity(entity);
    item.queries = std::move(queries);
    return true;
}

}  // namespace detail

// Parses the Entity Identifier reply: numbered entity lines plus optional
// "SAME-AS: <new> = <prior>" synonym declarations. Entity lines with an empty
// query list are dropped. ParseError when no entity line is recognized at
// all; a reply whose every entity ends up query-less yields an empty item
// list (the caller raises EmptyPlan).
inline EntityQueryPlan parse_entity_plan(const std::string& text, int iteration) {
    EntityQueryPlan plan;
    plan.iteration = iteration;
    bool any_entity_line = false;
    for (const auto& raw_line : split_lines(text)) {
        std::string line = trim(raw_line);
        if (line.empty()) continue;
        if (line.rfind("SAME-AS:", 0) == 0) {
            std::string rest = trim(line.substr(8));
            size_t eq = rest.find('=');
            if (eq == std::string::npos) continue;
            std::string new_alias = trim(rest.substr(0, eq));
            std::string prior = trim(rest.substr(eq + 1));
            if (!new_alias.empty() && !prior.empty()) {
                plan.synonym_links.push_back({new_alias, prior});
            }
            continue;
        }
        PlanItem item;
        if (detail::parse_plan_line(line, item)) {
            any_entity_line = true;
            if (!item.queries.empty()) plan.items.push_back(std::move(item));
        }
    }
    if (!any_entity_line) {
        throw ParseError("no entity lines of the form \"(n) Entity: [q1, q2]\" found", text);
    }
    return plan;
}

inline constexpr const char* kPlanReprompt =
    "List each entity on its own line as \"(<n>) <Entity>: [<query>, <query>]\".";

inline std::string render_known_entities(const KnowledgeOutline& outline) {
    if (outline.empty()) return "(none)";
    return join(outline.entity_names(), ", ");
}

// One Entity Identifier call. `step` is the retrieval-triggering step r^t;
// the rendered history includes it.
inline PlanOutcome identify_entities_with_knowledge(LlmSession& session,
                                                    const std::string& knowledge,
                                                    const std::string& known_entities,
                                                    const Question& question,
                                                    const ReasoningHistory& history) {
    if (history.steps.empty() || !history.steps.back().needs_retrieval) {
        throw Error("entity identification requires a retrieval-triggering step");
    }
    int iteration = history.steps.back().iteration;
    SlotMap slots = {{"entity", known_entities},
                     {"knowledge", knowledge},
                     {"question", question.text},
                     {"reasoning_history", render_reasoning_history(history)}};
    std::string tag = make_tag(Role::entity_identifier, question.id, iteration);

    PlanOutcome out;
    out.plan = detail::complete_with_reprompt(
        session, Role::entity_identifier, slots, tag, kPlanReprompt,
        [iteration](const std::string& raw) { return parse_entity_plan(raw, iteration); },
        out.prompt, out.raw);
    if (out.plan.items.empty()) {
        throw EmptyPlan("entity identifier produced zero entities with queries");
    }
    return out;
}

inline PlanOutcome identify_entities(LlmSession& session, const KnowledgeOutline& outline,
                                     const Question& question, const ReasoningHistory& history) {
    return identify_entities_with_knowledge(session, render_outline(outline),
                                            render_known_entities(outline), question, history);
}

// Final answer call over K^T and the full history. The answer is the first
// non-empty line of the trimmed reply.
inline AnswerOutcome generate_answer_with_knowledge(LlmSession& session,
                                                    const std::string& knowledge,
                                                    const Question& question,
                                                    const ReasoningHistory& history, bool forced) {
    int iteration = history.steps.empty() ? 1 : history.steps.back().iteration;
    SlotMap slots = {{"knowledge", knowledge},
                     {"question", question.text},
                     {"reasoning_history", render_reasoning_history(history)}};
    std::string tag = make_tag(Role::answerer, question.id, iteration);

    AnswerOutcome out;
    out.prompt = session.prompts->render(Role::answerer, slots);
    out.raw = session.complete_rendered(out.prompt, tag);
    std::string answer;
    for (const auto& line : split_lines(trim(out.raw))) {
        std::string t = trim(line);
        if (!t.empty()) {
            answer = t;
            break;
        }
    }
    if (answer.empty()) throw ParseError("answerer reply is empty", out.raw);
    out.answer = AnswerResult{answer, forced};
    return out;
}

inline AnswerOutcome generate_answer(LlmSession& session, const KnowledgeOutline& outline,
                                     const Question& question, const ReasoningHistory& history,
                                     bool forced) {
    return generate_answer_with_knowledge(session, render_outline(outline), question, history,
                                          forced);
}

}  // namespace dualrag
