#pragma once

#include <json.hpp>

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dualrag/errors.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

struct Question {
    std::string id;
    std::string text;
    std::vector<std::string> gold_answers;
    std::set<std::string> gold_support_doc_ids;
};

struct Document {
    std::string id;
    std::string title;
    std::string text;
    double score = 0.0;
};

// Entity identity is case-insensitive exact match over the alias set.
struct EntityKey {
    std::string canonical;
    std::vector<std::string> aliases;  // always contains canonical

    bool matches(std::string_view name) const {
        for (const auto& a : aliases) {
            if (iequals(a, name)) return true;
        }
        return false;
    }
};

inline EntityKey make_entity(std::string canonical) {
    EntityKey key;
    key.aliases.push_back(canonical);
    key.canonical = std::move(canonical);
    return key;
}

struct KnowledgeFragment {
    EntityKey entity;
    std::string text;
    int iteration = 1;
    std::vector<std::string> source_doc_ids;
};

struct OutlineEntry {
    EntityKey key;
    std::vector<KnowledgeFragment> fragments;  // ascending by iteration
};

// Entity-keyed store of accumulated knowledge, insertion-ordered by first
// appearance. At most one fragment per entity per iteration.
struct KnowledgeOutline {
    std::vector<OutlineEntry> entries;

    const OutlineEntry* find(std::string_view name) const {
        for (const auto& e : entries) {
            if (e.key.matches(name)) return &e;
        }
        return nullptr;
    }

    bool empty() const { return entries.empty(); }
    size_t size() const { return entries.size(); }

    std::vector<std::string> entity_names() const {
        std::vector<std::string> names;
        names.reserve(entries.size());
        for (const auto& e : entries) names.push_back(e.key.canonical);
        return names;
    }
};

struct ReasoningStep {
    int iteration = 1;
    std::string rationale;
    bool needs_retrieval = false;
};

struct ReasoningHistory {
    std::vector<ReasoningStep> steps;

    // Iterations must run 1..n without gaps.
    bool valid() const {
        for (size_t i = 0; i < steps.size(); ++i) {
            if (steps[i].iteration != static_cast<int>(i) + 1) return false;
        }
        return true;
    }

    int next_iteration() const { return static_cast<int>(steps.size()) + 1; }
};

struct RunConfig {
    int max_iterations = 5;
    int recall_k = 50;
    int rerank_k = 10;
    bool ablation_no_r = false;
    bool ablation_no_ei = false;
    bool ablation_no_ko = false;
    double temperature = 0.0;
    int max_tokens = 1024;

    void validate() const {
        if (max_iterations < 1) throw Error("max_iterations must be >= 1");
        if (recall_k < 1) throw Error("recall_k must be >= 1");
        if (rerank_k < 1) throw Error("rerank_k must be >= 1");
        if (rerank_k > recall_k) throw Error("rerank_k must be <= recall_k");
        if (temperature < 0) throw Error("temperature must be >= 0");
    }
};

inline constexpr const char* kEmptyOutlineText = "No knowledge collected yet.";

// K^t(e) = K^{t-1}(e) + {k_e}; other entities untouched, new entities
// appended in first-appearance order. Pure: the input outline is unchanged.
inline KnowledgeOutline merge_fragment(KnowledgeOutline outline, KnowledgeFragment fragment) {
    if (fragment.iteration < 1) throw Error("fragment iteration must be >= 1");
    if (trim(fragment.text).empty()) throw Error("fragment text must be non-empty");

    for (auto& entry : outline.entries) {
        bool hit = entry.key.matches(fragment.entity.canonical);
        if (!hit) {
            for (const auto& alias : fragment.entity.aliases) {
                if (entry.key.matches(alias)) { hit = true; break; }
            }
        }
        if (!hit) continue;
        for (const auto& f : entry.fragments) {
            if (f.iteration == fragment.iteration) {
                throw DuplicateIteration("entity \"" + entry.key.canonical +
                                         "\" already has a fragment for iteration " +
                                         std::to_string(fragment.iteration));
            }
            if (f.iteration > fragment.iteration) {
                throw Error("fragment iteration regresses for entity \"" +
                            entry.key.canonical + "\"");
            }
        }
        entry.fragments.push_back(std::move(fragment));
        return outline;
    }

    OutlineEntry entry;
    entry.key = fragment.entity;
    if (entry.key.aliases.empty()) entry.key.aliases.push_back(entry.key.canonical);
    entry.fragments.push_back(std::move(fragment));
    outline.entries.push_back(std::move(entry));
    return outline;
}

// Attaches new_entity's names as aliases of an existing entry. No new entry
// is created; later fragments addressed to any alias land under the prior
// canonical.
inline KnowledgeOutline link_synonym(KnowledgeOutline outline, const EntityKey& new_entity,
                                     const std::string& prior_canonical) {
    OutlineEntry* target = nullptr;
    for (auto& entry : outline.entries) {
        if (entry.key.matches(prior_canonical)) { target = &entry; break; }
    }
    if (!target) throw UnknownEntity("no outline entity named \"" + prior_canonical + "\"");

    auto add = [&](const std::string& alias) {
        if (!target->key.matches(alias)) target->key.aliases.push_back(alias);
    };
    add(new_entity.canonical);
    for (const auto& a : new_entity.aliases) add(a);
    return outline;
}

// Deterministic text form fed to the Reasoner prompt: one section per entity
// in insertion order, fragments one per line in iteration order.
inline std::string render_outline(const KnowledgeOutline& outline) {
    if (outline.empty()) return kEmptyOutlineText;
    std::vector<std::string> sections;
    sections.reserve(outline.entries.size());
    for (const auto& entry : outline.entries) {
        std::string section = "## " + entry.key.canonical;
        for (const auto& frag : entry.fragments) {
            section += "\n- " + frag.text;
        }
        sections.push_back(std::move(section));
    }
    return join(sections, "\n\n");
}

// --- JSON forms used by trajectory logs ---

inline nlohmann::json entity_to_json(const EntityKey& key) {
    auto aliases = key.aliases;
    std::sort(aliases.begin(), aliases.end(),
              [](const std::string& a, const std::string& b) { return lower(a) < lower(b); });
    return {{"canonical", key.canonical}, {"aliases", aliases}};
}

inline EntityKey entity_from_json(const nlohmann::json& j) {
    EntityKey key;
    key.canonical = j.at("canonical").get<std::string>();
    for (const auto& a : j.at("aliases")) {
        std::string alias = a.get<std::string>();
        if (!key.matches(alias)) key.aliases.push_back(std::move(alias));
    }
    if (!key.matches(key.canonical)) key.aliases.push_back(key.canonical);
    return key;
}

inline nlohmann::json outline_to_json(const KnowledgeOutline& outline) {
    nlohmann::json entities = nlohmann::json::array();
    for (const auto& entry : outline.entries) {
        nlohmann::json fragments = nlohmann::json::array();
        for (const auto& frag : entry.fragments) {
            fragments.push_back({{"text", frag.text},
                                 {"iteration", frag.iteration},
                                 {"source_doc_ids", frag.source_doc_ids}});
        }
        nlohmann::json e = entity_to_json(entry.key);
        e["fragments"] = std::move(fragments);
        entities.push_back(std::move(e));
    }
    return {{"entities", std::move(entities)}};
}

inline KnowledgeOutline outline_from_json(const nlohmann::json& j) {
    KnowledgeOutline outline;
    for (const auto& e : j.at("entities")) {
        OutlineEntry entry;
        entry.key = entity_from_json(e);
        for (const auto& f : e.at("fragments")) {
            KnowledgeFragment frag;
            frag.entity = entry.key;
            frag.text = f.at("text").get<std::string>();
            frag.iteration = f.at("iteration").get<int>();
            frag.source_doc_ids = f.at("source_doc_ids").get<std::vector<std::string>>();
            entry.fragments.push_back(std::move(frag));
        }
        outline.entries.push_back(std::move(entry));
    }
    return outline;
}

}  // namespace dualrag
