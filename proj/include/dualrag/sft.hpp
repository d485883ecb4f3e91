#pragma once

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dualrag/errors.hpp"
#include "dualrag/orchestrator.hpp"
#include "dualrag/prompts.hpp"
#include "dualrag/raq.hpp"
#include "dualrag/retrieval.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

enum class Capability { kReasoner, kEntityIdentifier, kKnowledgeSummarizer };

inline const char* capability_name(Capability c) {
    switch (c) {
        case Capability::kReasoner: return "reasoner";
        case Capability::kEntityIdentifier: return "entity_identifier";
        case Capability::kKnowledgeSummarizer: return "knowledge_summarizer";
    }
    return "unknown";
}

inline Capability capability_from_name(const std::string& name) {
    if (name == "reasoner") return Capability::kReasoner;
    if (name == "entity_identifier") return Capability::kEntityIdentifier;
    if (name == "knowledge_summarizer") return Capability::kKnowledgeSummarizer;
    throw FormatError("unknown capability: " + name);
}

struct SftRecord {
    Capability capability = Capability::kReasoner;
    std::string prompt;  // the exact rendered prompt from the trajectory
    std::string target;
    std::string question_id;
    int iteration = 1;
};

// Text-pair similarity in [0, 1]; score(a, a) = 1 and score is symmetric.
class SimilarityScorer {
public:
    virtual ~SimilarityScorer() = default;
    virtual double score(const std::string& a, const std::string& b) const = 0;
};

// Default scorer: Jaccard over lowercased alphanumeric tokens.
class JaccardScorer : public SimilarityScorer {
public:
    double score(const std::string& a, const std::string& b) const override {
        auto ta = tokenize(a);
        auto tb = tokenize(b);
        std::set<std::string> sa(ta.begin(), ta.end());
        std::set<std::string> sb(tb.begin(), tb.end());
        if (sa.empty() && sb.empty()) return 1.0;
        if (sa.empty() || sb.empty()) return 0.0;
        size_t inter = 0;
        for (const auto& t : sa) inter += sb.count(t);
        return static_cast<double>(inter) /
               static_cast<double>(sa.size() + sb.size() - inter);
    }
};

inline constexpr double kDedupThreshold = 0.8;

// Redundancy removal over a plan: entities whose names score >= threshold
// against an earlier entity are merged into it (queries appended), then
// within each entity a query scoring >= threshold against any kept query is
// dropped. Comparisons always run against kept items only, which makes the
// operation idempotent.
inline EntityQueryPlan dedup_plan(const EntityQueryPlan& plan, const SimilarityScorer& scorer,
                                  double threshold = kDedupThreshold) {
    EntityQueryPlan out;
    out.iteration = plan.iteration;
    out.synonym_links = plan.synonym_links;
    for (const auto& item : plan.items) {
        PlanItem* merged = nullptr;
        for (auto& kept : out.items) {
            if (scorer.score(kept.entity.canonical, item.entity.canonical) >= threshold) {
                merged = &kept;
                break;
            }
        }
        if (merged) {
            merged->queries.insert(merged->queries.end(), item.queries.begin(),
                                   item.queries.end());
        } else {
            out.items.push_back(item);
        }
    }
    for (auto& item : out.items) {
        std::vector<std::string> kept;
        for (const auto& query : item.queries) {
            bool duplicate = false;
            for (const auto& k : kept) {
                if (scorer.score(k, query) >= threshold) {
                    duplicate = true;
                    break;
                }
            }
            if (!duplicate) kept.push_back(query);
        }
        item.queries = std::move(kept);
    }
    return out;
}

// Renders a plan back into the Entity Identifier reply format.
inline std::string serialize_plan(const EntityQueryPlan& plan) {
    std::vector<std::string> lines;
    for (size_t i = 0; i < plan.items.size(); ++i) {
        const auto& item = plan.items[i];
        lines.push_back("(" + std::to_string(i + 1) + ") " + item.entity.canonical + ": [" +
                        join(item.queries, ", ") + "]");
    }
    for (const auto& link : plan.synonym_links) {
        lines.push_back("SAME-AS: " + link.new_alias + " = " + link.prior_canonical);
    }
    return join(lines, "\n");
}

// One record per reasoning step: the rendered prompt against the raw teacher
// reply, marker included. Failed trajectories contribute nothing.
inline std::vector<SftRecord> derive_reasoner_records(const TrajectoryRecord& traj) {
    std::vector<SftRecord> records;
    if (traj.failed) return records;
    for (const auto& step : traj.steps) {
        records.push_back({Capability::kReasoner, step.reasoner_prompt, trim(step.reasoner_raw),
                           traj.question.id, step.step.iteration});
    }
    return records;
}

// One record per retrieval-triggered step: target is the plan re-serialized
// after entity merging and query dedup. Steps without a recorded plan prompt
// (the query-passthrough ablation) contribute nothing.
inline std::vector<SftRecord> derive_ei_records(const TrajectoryRecord& traj,
                                                const SimilarityScorer& scorer,
                                                double threshold = kDedupThreshold) {
    std::vector<SftRecord> records;
    if (traj.failed) return records;
    for (const auto& step : traj.steps) {
        if (!step.has_plan || step.plan_prompt.empty()) continue;
        EntityQueryPlan deduped = dedup_plan(step.plan, scorer, threshold);
        records.push_back({Capability::kEntityIdentifier, step.plan_prompt,
                           serialize_plan(deduped), traj.question.id, step.step.iteration});
    }
    return records;
}

// One record per summarizer call: the target keeps the fragment text when any
// cited source is a gold supporting document, otherwise it is rewritten to
// the rejection sentinel. Questions without gold support ids yield nothing
// (there is no membership signal to label against).
inline std::vector<SftRecord> derive_ks_records(const TrajectoryRecord& traj,
                                                const Question& question) {
    std::vector<SftRecord> records;
    if (traj.failed || question.gold_support_doc_ids.empty()) return records;
    for (const auto& step : traj.steps) {
        for (size_t i = 0; i < step.fragments.size() && i < step.ks_calls.size(); ++i) {
            const auto& fragment = step.fragments[i];
            bool supported = std::any_of(
                fragment.source_doc_ids.begin(), fragment.source_doc_ids.end(),
                [&question](const std::string& id) {
                    return question.gold_support_doc_ids.count(id) > 0;
                });
            records.push_back({Capability::kKnowledgeSummarizer, step.ks_calls[i].prompt,
                               supported ? fragment.text : std::string(kIrrelevantSentinel),
                               traj.question.id, step.step.iteration});
        }
    }
    return records;
}

struct SftSummary {
    int reasoner = 0;
    int entity_identifier = 0;
    int knowledge_summarizer = 0;

    int sum() const { return reasoner + entity_identifier + knowledge_summarizer; }

    void count(Capability c) {
        switch (c) {
            case Capability::kReasoner: ++reasoner; break;
            case Capability::kEntityIdentifier: ++entity_identifier; break;
            case Capability::kKnowledgeSummarizer: ++knowledge_summarizer; break;
        }
    }
};

inline std::vector<SftRecord> derive_all(const std::vector<TrajectoryRecord>& trajectories,
                                         const SimilarityScorer& scorer,
                                         double threshold = kDedupThreshold) {
    std::vector<SftRecord> records;
    for (const auto& traj : trajectories) {
        auto append = [&records](std::vector<SftRecord> part) {
            records.insert(records.end(), std::make_move_iterator(part.begin()),
                           std::make_move_iterator(part.end()));
        };
        append(derive_reasoner_records(traj));
        append(derive_ei_records(traj, scorer, threshold));
        append(derive_ks_records(traj, traj.question));
    }
    return records;
}

inline nlohmann::json sft_record_to_json(const SftRecord& r) {
    return {{"capability", capability_name(r.capability)},
            {"prompt", r.prompt},
            {"target", r.target},
            {"meta", {{"question_id", r.question_id}, {"iteration", r.iteration}}}};
}

inline SftRecord sft_record_from_json(const nlohmann::json& j) {
    SftRecord r;
    r.capability = capability_from_name(j.at("capability").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.question_id = j.at("meta").at("question_id").get<std::string>();
    r.iteration = j.at("meta").at("iteration").get<int>();
    return r;
}

inline SftSummary export_jsonl(const std::vector<SftRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write SFT file: " + path);
    SftSummary summary;
    for (const auto& record : records) {
        out << sft_record_to_json(record).dump() << "\n";
        summary.count(record.capability);
    }
    return summary;
}

inline std::vector<SftRecord> load_sft_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open SFT file: " + path);
    std::vector<SftRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw FormatError("SFT line " + std::to_string(line_no) + " is not valid JSON");
        }
        records.push_back(sft_record_from_json(j));
    }
    return records;
}

}  // namespace dualrag
