#pragma once

#include <string>
#include <vector>

#include "dualrag/core.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/llm.hpp"
#include "dualrag/prompts.hpp"
#include "dualrag/raq.hpp"
#include "dualrag/retrieval.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

struct FragmentOutcome {
    KnowledgeFragment fragment;
    std::string prompt;
    std::string raw;
};

inline constexpr const char* kSourcesReprompt =
    "End your summary with a line \"SOURCES: <title or id>, ...\" naming the documents you "
    "used, or reply with the single word IRRELEVANT.";

namespace detail {

// Resolves one SOURCES token against the reranked documents by id or title
// (case-insensitive). Unknown tokens are dropped: the summarizer sometimes
// cites loosely, and provenance only counts when it maps to real evidence.
inline const Document* resolve_source(const std::string& token, const std::vector<Document>& docs) {
    for (const auto& doc : docs) {
        if (doc.id == token) return &doc;
    }
    for (const auto& doc : docs) {
        if (iequals(doc.title, token)) return &doc;
    }
    return nullptr;
}

struct ParsedSummary {
    std::string text;
    std::vector<std::string> source_doc_ids;
    bool irrelevant = false;
};

inline ParsedSummary parse_summary(const std::string& raw, const std::vector<Document>& docs) {
    std::string t = trim(raw);
    if (iequals(t, kIrrelevantSentinel)) {
        return {"", {}, true};
    }
    auto lines = split_lines(t);
    int sources_line = -1;
    for (int i = static_cast<int>(lines.size()) - 1; i >= 0; --i) {
        std::string line = trim(lines[i]);
        if (line.empty()) continue;
        if (line.rfind(kSourcesPrefix, 0) == 0) sources_line = i;
        break;  // only the final non-empty line counts as provenance
    }
    if (sources_line < 0) {
        throw ParseError("summary lacks a SOURCES line and is not IRRELEVANT", raw);
    }

    ParsedSummary parsed;
    std::string source_list = trim(trim(lines[sources_line]).substr(std::string(kSourcesPrefix).size()));
    std::vector<std::string> seen;
    for (const auto& token : split(source_list, ",")) {
        std::string name = trim(token);
        if (name.empty()) continue;
        const Document* doc = resolve_source(name, docs);
        if (!doc) continue;
        if (std::find(seen.begin(), seen.end(), doc->id) == seen.end()) {
            seen.push_back(doc->id);
            parsed.source_doc_ids.push_back(doc->id);
        }
    }
    std::vector<std::string> body(lines.begin(), lines.begin() + sources_line);
    parsed.text = trim(join(body, "\n"));
    if (parsed.text.empty()) {
        throw ParseError("summary has a SOURCES line but no summary text", raw);
    }
    return parsed;
}

}  // namespace detail

// One Knowledge Summarizer call for an entity and its reranked documents.
// The reply is a summary ending with a "SOURCES:" provenance line, or the
// sentinel word IRRELEVANT when the documents do not help; the sentinel
// becomes a fixed no-information fragment so the outline stays honest about
// retrieval failure.
inline FragmentOutcome summarize_entity(LlmSession& session, const Question& question,
                                        const ReasoningHistory& history, const EntityKey& entity,
                                        const std::vector<Document>& docs) {
    if (docs.empty()) {
        throw NoEvidence("no documents to summarize for entity \"" + entity.canonical + "\"");
    }
    if (history.steps.empty()) throw Error("summarize_entity requires a reasoning step");
    int iteration = history.steps.back().iteration;
    SlotMap slots = {{"question", question.text},
                     {"reasoning_history", render_reasoning_history(history)},
                     {"entity", entity.canonical},
                     {"retrieved_docs", render_documents(docs)}};
    std::string tag = make_tag(Role::knowledge_summarizer, question.id, iteration, entity.canonical);

    FragmentOutcome out;
    auto parsed = detail::complete_with_reprompt(
        session, Role::knowledge_summarizer, slots, tag, kSourcesReprompt,
        [&docs](const std::string& raw) { return detail::parse_summary(raw, docs); }, out.prompt,
        out.raw);

    out.fragment.entity = entity;
    out.fragment.iteration = iteration;
    if (parsed.irrelevant) {
        out.fragment.text = "No relevant information found for " + entity.canonical + ".";
    } else {
        out.fragment.text = parsed.text;
        out.fragment.source_doc_ids = parsed.source_doc_ids;
    }
    return out;
}

// K^t = K^{t-1} with this round's fragments merged in, one per bundle entity,
// in bundle (plan) order. Synonym links recorded by the plan are applied
// first so a renamed entity lands on its existing outline entry. Links whose
// prior entity is not in the outline yet are skipped.
inline KnowledgeOutline aggregate(KnowledgeOutline outline, const RetrievalBundle& bundle,
                                  const std::vector<KnowledgeFragment>& fragments,
                                  const std::vector<SynonymLink>& links = {}) {
    for (const auto& link : links) {
        if (outline.find(link.prior_canonical)) {
            outline = link_synonym(std::move(outline), make_entity(link.new_alias),
                                   link.prior_canonical);
        }
    }
    for (const auto& entity : bundle.per_entity) {
        for (const auto& fragment : fragments) {
            if (iequals(fragment.entity.canonical, entity.canonical)) {
                outline = merge_fragment(std::move(outline), fragment);
                break;
            }
        }
    }
    return outline;
}

}  // namespace dualrag
