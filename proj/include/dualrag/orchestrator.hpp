#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dualrag/core.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/llm.hpp"
#include "dualrag/pka.hpp"
#include "dualrag/prompts.hpp"
#include "dualrag/raq.hpp"
#include "dualrag/retrieval.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

inline constexpr int kTrajectorySchemaVersion = 1;

struct KsCall {
    std::string entity;
    std::string prompt;
    std::string raw;
};

// One loop iteration as recorded in the trajectory. Retrieval-triggered steps
// carry plan/bundle/fragments; terminal steps carry only the reasoning step
// and the outline snapshot. Rendered prompts and raw replies ride along so
// training data can be derived from the trace without a replay.
struct StepRecord {
    ReasoningStep step;
    std::string reasoner_prompt;
    std::string reasoner_raw;
    bool has_plan = false;
    EntityQueryPlan plan;
    std::string plan_prompt;  // empty under the no_ei ablation
    std::string plan_raw;
    RetrievalBundle bundle;
    std::vector<KnowledgeFragment> fragments;
    std::vector<KsCall> ks_calls;  // parallel to fragments
    KnowledgeOutline outline_snapshot;
};

struct TrajectoryRecord {
    Question question;
    RunConfig config;
    std::vector<StepRecord> steps;
    AnswerResult answer;
    std::string answer_prompt;
    std::string answer_raw;
    std::vector<std::string> request_log;
    long long wall_time_ms = 0;
    bool failed = false;
    std::string error;
};

inline int retrieval_rounds(const TrajectoryRecord& record) {
    int rounds = 0;
    for (const auto& s : record.steps) {
        if (s.step.needs_retrieval) ++rounds;
    }
    return rounds;
}

// Shared read-only machinery for a run. The backend must tolerate concurrent
// complete() calls when run_batch uses parallelism > 1.
struct RunContext {
    ChatBackend* backend = nullptr;
    const PromptLibrary* prompts = nullptr;
    const Searcher* searcher = nullptr;
    const InvertedIndex* store = nullptr;
    const Reranker* reranker = nullptr;
};

namespace detail {

// Dedup key for cross-iteration document tracking: plan-declared synonym
// links first, then the outline's alias map, else the entity itself.
inline std::string dedup_key(const KnowledgeOutline& outline, const std::vector<SynonymLink>& links,
                             const std::string& canonical) {
    for (const auto& link : links) {
        if (iequals(link.new_alias, canonical) && outline.find(link.prior_canonical)) {
            return lower(link.prior_canonical);
        }
    }
    if (const OutlineEntry* entry = outline.find(canonical)) return lower(entry->key.canonical);
    return lower(canonical);
}

}  // namespace detail

// Runs the dual-process loop for one question: reason, trigger retrieval,
// identify entities, recall + rerank, summarize, fold into the outline, and
// answer when the trigger clears or the iteration cap forces it. Any error
// aborts the run and yields a partial trajectory marked failed.
inline TrajectoryRecord run_question(const RunContext& ctx, const Question& question,
                                     const RunConfig& config) {
    config.validate();
    TrajectoryRecord record;
    record.question = question;
    record.config = config;
    auto start = std::chrono::steady_clock::now();

    LlmSession session{ctx.backend, ctx.prompts, &record.request_log, config.temperature,
                       config.max_tokens};
    KnowledgeOutline outline;
    ReasoningHistory history;
    std::vector<std::string> raw_doc_texts;  // knowledge slot under no_ko
    std::map<std::string, std::set<std::string>> consumed;  // entity key -> doc ids already summarized

    auto knowledge_now = [&]() -> std::string {
        if (config.ablation_no_ko) {
            return raw_doc_texts.empty() ? std::string(kEmptyOutlineText)
                                         : join(raw_doc_texts, "\n\n");
        }
        return render_outline(outline);
    };

    try {
        bool answered = false;
        for (int t = 1; t <= config.max_iterations && !answered; ++t) {
            std::string knowledge = knowledge_now();
            ReasonOutcome reason = reason_step_with_knowledge(session, knowledge, question, history);
            if (config.ablation_no_r) reason.step.needs_retrieval = true;
            history.steps.push_back(reason.step);

            StepRecord sr;
            sr.step = reason.step;
            sr.reasoner_prompt = reason.prompt;
            sr.reasoner_raw = reason.raw;

            if (!reason.step.needs_retrieval) {
                sr.outline_snapshot = outline;
                record.steps.push_back(std::move(sr));
                AnswerOutcome ans =
                    generate_answer_with_knowledge(session, knowledge, question, history, false);
                record.answer = ans.answer;
                record.answer_prompt = ans.prompt;
                record.answer_raw = ans.raw;
                answered = true;
                break;
            }

            PlanOutcome plan_out;
            if (config.ablation_no_ei) {
                plan_out.plan.iteration = t;
                plan_out.plan.items.push_back({make_entity("query"), {reason.step.rationale}});
            } else {
                plan_out = identify_entities_with_knowledge(
                    session, knowledge, render_known_entities(outline), question, history);
            }
            sr.has_plan = true;
            sr.plan = plan_out.plan;
            sr.plan_prompt = plan_out.prompt;
            sr.plan_raw = plan_out.raw;

            RetrievalBundle bundle;
            bundle.iteration = t;
            for (const auto& item : plan_out.plan.items) {
                std::string key =
                    detail::dedup_key(outline, plan_out.plan.synonym_links, item.entity.canonical);
                std::vector<Document> recalled = recall_for_entity(
                    *ctx.searcher, *ctx.store, item.entity, item.queries, config.recall_k);
                auto& used = consumed[key];
                std::vector<Document> fresh;
                fresh.reserve(recalled.size());
                for (auto& doc : recalled) {
                    if (!used.count(doc.id)) fresh.push_back(std::move(doc));
                }
                std::vector<Document> reranked =
                    rerank_entity(*ctx.reranker, item.entity, fresh, config.rerank_k);
                for (const auto& doc : reranked) used.insert(doc.id);
                bundle.per_entity.push_back(
                    {item.entity.canonical, std::move(fresh), std::move(reranked)});
            }
            sr.bundle = bundle;

            if (config.ablation_no_ko) {
                for (const auto& entity : bundle.per_entity) {
                    for (const auto& doc : entity.reranked) raw_doc_texts.push_back(doc.text);
                }
            } else {
                std::vector<KnowledgeFragment> fragments;
                for (size_t i = 0; i < plan_out.plan.items.size(); ++i) {
                    const auto& item = plan_out.plan.items[i];
                    const auto& retrieval = bundle.per_entity[i];
                    if (retrieval.reranked.empty()) continue;  // every doc already consumed
                    FragmentOutcome frag = summarize_entity(session, question, history, item.entity,
                                                            retrieval.reranked);
                    sr.ks_calls.push_back({item.entity.canonical, frag.prompt, frag.raw});
                    fragments.push_back(frag.fragment);
                }
                outline = aggregate(std::move(outline), bundle, fragments,
                                    plan_out.plan.synonym_links);
                sr.fragments = std::move(fragments);
            }
            sr.outline_snapshot = outline;
            record.steps.push_back(std::move(sr));
        }

        if (!answered) {
            AnswerOutcome ans =
                generate_answer_with_knowledge(session, knowledge_now(), question, history, true);
            record.answer = ans.answer;
            record.answer_prompt = ans.prompt;
            record.answer_raw = ans.raw;
        }
    } catch (const std::exception& e) {
        record.failed = true;
        record.error = e.what();
    }

    auto elapsed = std::chrono::steady_clock::now() - start;
    record.wall_time_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    return record;
}

// Fans out up to `parallelism` concurrent runs. Results land in input order
// and one question's failure never aborts its siblings (failures surface as
// failed records).
inline std::vector<TrajectoryRecord> run_batch(const RunContext& ctx,
                                               const std::vector<Question>& questions,
                                               const RunConfig& config, int parallelism) {
    if (parallelism < 1) throw Error("parallelism must be >= 1");
    std::vector<TrajectoryRecord> records(questions.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= questions.size()) return;
            records[i] = run_question(ctx, questions[i], config);
        }
    };
    if (parallelism == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        int n = std::min<int>(parallelism, static_cast<int>(questions.size()));
        threads.reserve(static_cast<size_t>(std::max(n, 1)));
        for (int i = 0; i < n; ++i) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }
    return records;
}

// --- iteration statistics (retrieval-round histogram) ---

struct IterationStats {
    std::map<int, int> histogram;  // rounds -> question count
    double mean = 0.0;
    bool has_mean = false;
};

inline IterationStats iteration_stats(const std::vector<TrajectoryRecord>& records) {
    IterationStats stats;
    long long total = 0;
    for (const auto& record : records) {
        int rounds = retrieval_rounds(record);
        ++stats.histogram[rounds];
        total += rounds;
    }
    if (!records.empty()) {
        stats.mean = static_cast<double>(total) / static_cast<double>(records.size());
        stats.has_mean = true;
    }
    return stats;
}

inline std::string iteration_stats_csv(const IterationStats& stats) {
    std::string csv = "rounds,count\n";
    for (const auto& [rounds, count] : stats.histogram) {
        csv += std::to_string(rounds) + "," + std::to_string(count) + "\n";
    }
    return csv;
}

// --- trajectory JSON (schema_version 1) ---

inline nlohmann::json question_to_json(const Question& q) {
    return {{"id", q.id},
            {"text", q.text},
            {"gold_answers", q.gold_answers},
            {"gold_support_doc_ids", q.gold_support_doc_ids}};
}

inline Question question_from_json(const nlohmann::json& j) {
    Question q;
    q.id = j.at("id").get<std::string>();
    q.text = j.at("text").get<std::string>();
    q.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
    q.gold_support_doc_ids = j.at("gold_support_doc_ids").get<std::set<std::string>>();
    return q;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
    return {{"max_iterations", c.max_iterations},
            {"recall_k", c.recall_k},
            {"rerank_k", c.rerank_k},
            {"ablation_no_r", c.ablation_no_r},
            {"ablation_no_ei", c.ablation_no_ei},
            {"ablation_no_ko", c.ablation_no_ko},
            {"temperature", c.temperature},
            {"max_tokens", c.max_tokens}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    c.max_iterations = j.at("max_iterations").get<int>();
    c.recall_k = j.at("recall_k").get<int>();
    c.rerank_k = j.at("rerank_k").get<int>();
    c.ablation_no_r = j.at("ablation_no_r").get<bool>();
    c.ablation_no_ei = j.at("ablation_no_ei").get<bool>();
    c.ablation_no_ko = j.at("ablation_no_ko").get<bool>();
    c.temperature = j.at("temperature").get<double>();
    c.max_tokens = j.at("max_tokens").get<int>();
    return c;
}

inline nlohmann::json document_to_json(const Document& d) {
    return {{"id", d.id}, {"title", d.title}, {"text", d.text}, {"score", d.score}};
}

inline Document document_from_json(const nlohmann::json& j) {
    return {j.at("id").get<std::string>(), j.at("title").get<std::string>(),
            j.at("text").get<std::string>(), j.at("score").get<double>()};
}

inline nlohmann::json plan_to_json(const EntityQueryPlan& plan) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& item : plan.items) {
        items.push_back({{"entity", entity_to_json(item.entity)}, {"queries", item.queries}});
    }
    nlohmann::json links = nlohmann::json::array();
    for (const auto& link : plan.synonym_links) {
        links.push_back({{"new_alias", link.new_alias}, {"prior_canonical", link.prior_canonical}});
    }
    return {{"iteration", plan.iteration}, {"items", std::move(items)},
            {"synonym_links", std::move(links)}};
}

inline EntityQueryPlan plan_from_json(const nlohmann::json& j) {
    EntityQueryPlan plan;
    plan.iteration = j.at("iteration").get<int>();
    for (const auto& item : j.at("items")) {
        plan.items.push_back({entity_from_json(item.at("entity")),
                              item.at("queries").get<std::vector<std::string>>()});
    }
    for (const auto& link : j.at("synonym_links")) {
        plan.synonym_links.push_back({link.at("new_alias").get<std::string>(),
                                      link.at("prior_canonical").get<std::string>()});
    }
    return plan;
}

// Recalled lists are stored as (id, score) references; reranked documents are
// stored in full because the trace is the input to training-data derivation.
inline nlohmann::json bundle_to_json(const RetrievalBundle& bundle) {
    nlohmann::json per_entity = nlohmann::json::array();
    for (const auto& e : bundle.per_entity) {
        nlohmann::json recalled = nlohmann::json::array();
        for (const auto& d : e.recalled) recalled.push_back({{"id", d.id}, {"score", d.score}});
        nlohmann::json reranked = nlohmann::json::array();
        for (const auto& d : e.reranked) reranked.push_back(document_to_json(d));
        per_entity.push_back({{"canonical", e.canonical},
                              {"recalled", std::move(recalled)},
                              {"reranked", std::move(reranked)}});
    }
    return {{"iteration", bundle.iteration}, {"per_entity", std::move(per_entity)}};
}

inline RetrievalBundle bundle_from_json(const nlohmann::json& j) {
    RetrievalBundle bundle;
    bundle.iteration = j.at("iteration").get<int>();
    for (const auto& e : j.at("per_entity")) {
        EntityRetrieval retrieval;
        retrieval.canonical = e.at("canonical").get<std::string>();
        for (const auto& d : e.at("recalled")) {
            retrieval.recalled.push_back(
                {d.at("id").get<std::string>(), "", "", d.at("score").get<double>()});
        }
        for (const auto& d : e.at("reranked")) {
            retrieval.reranked.push_back(document_from_json(d));
        }
        bundle.per_entity.push_back(std::move(retrieval));
    }
    return bundle;
}

inline nlohmann::json fragment_to_json(const KnowledgeFragment& f) {
    return {{"entity", entity_to_json(f.entity)},
            {"text", f.text},
            {"iteration", f.iteration},
            {"source_doc_ids", f.source_doc_ids}};
}

inline KnowledgeFragment fragment_from_json(const nlohmann::json& j) {
    KnowledgeFragment f;
    f.entity = entity_from_json(j.at("entity"));
    f.text = j.at("text").get<std::string>();
    f.iteration = j.at("iteration").get<int>();
    f.source_doc_ids = j.at("source_doc_ids").get<std::vector<std::string>>();
    return f;
}

inline nlohmann::json step_to_json(const StepRecord& s) {
    nlohmann::json j = {{"iteration", s.step.iteration},
                        {"rationale", s.step.rationale},
                        {"needs_retrieval", s.step.needs_retrieval},
                        {"reasoner_prompt", s.reasoner_prompt},
                        {"reasoner_raw", s.reasoner_raw},
                        {"outline_snapshot", outline_to_json(s.outline_snapshot)}};
    if (s.has_plan) {
        j["plan"] = plan_to_json(s.plan);
        j["plan_prompt"] = s.plan_prompt;
        j["plan_raw"] = s.plan_raw;
        j["bundle"] = bundle_to_json(s.bundle);
        nlohmann::json fragments = nlohmann::json::array();
        for (const auto& f : s.fragments) fragments.push_back(fragment_to_json(f));
        j["fragments"] = std::move(fragments);
        nlohmann::json ks_calls = nlohmann::json::array();
        for (const auto& call : s.ks_calls) {
            ks_calls.push_back(
                {{"entity", call.entity}, {"prompt", call.prompt}, {"raw", call.raw}});
        }
        j["ks_calls"] = std::move(ks_calls);
    }
    return j;
}

inline StepRecord step_from_json(const nlohmann::json& j) {
    StepRecord s;
    s.step.iteration = j.at("iteration").get<int>();
    s.step.rationale = j.at("rationale").get<std::string>();
    s.step.needs_retrieval = j.at("needs_retrieval").get<bool>();
    s.reasoner_prompt = j.at("reasoner_prompt").get<std::string>();
    s.reasoner_raw = j.at("reasoner_raw").get<std::string>();
    s.outline_snapshot = outline_from_json(j.at("outline_snapshot"));
    if (j.contains("plan")) {
        s.has_plan = true;
        s.plan = plan_from_json(j.at("plan"));
        s.plan_prompt = j.at("plan_prompt").get<std::string>();
        s.plan_raw = j.at("plan_raw").get<std::string>();
        s.bundle = bundle_from_json(j.at("bundle"));
        for (const auto& f : j.at("fragments")) s.fragments.push_back(fragment_from_json(f));
        for (const auto& call : j.at("ks_calls")) {
            s.ks_calls.push_back({call.at("entity").get<std::string>(),
                                  call.at("prompt").get<std::string>(),
                                  call.at("raw").get<std::string>()});
        }
    }
    return s;
}

inline nlohmann::json trajectory_to_json(const TrajectoryRecord& r) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.steps) steps.push_back(step_to_json(s));
    return {{"schema_version", kTrajectorySchemaVersion},
            {"question", question_to_json(r.question)},
            {"config", config_to_json(r.config)},
            {"steps", std::move(steps)},
            {"answer", {{"answer_text", r.answer.answer_text}, {"forced", r.answer.forced}}},
            {"answer_prompt", r.answer_prompt},
            {"answer_raw", r.answer_raw},
            {"request_log", r.request_log},
            {"wall_time_ms", r.wall_time_ms},
            {"failed", r.failed},
            {"error", r.error}};
}

inline TrajectoryRecord trajectory_from_json(const nlohmann::json& j) {
    int version = j.at("schema_version").get<int>();
    if (version != kTrajectorySchemaVersion) {
        throw FormatError("unsupported trajectory schema_version " + std::to_string(version));
    }
    TrajectoryRecord r;
    r.question = question_from_json(j.at("question"));
    r.config = config_from_json(j.at("config"));
    for (const auto& s : j.at("steps")) r.steps.push_back(step_from_json(s));
    r.answer.answer_text = j.at("answer").at("answer_text").get<std::string>();
    r.answer.forced = j.at("answer").at("forced").get<bool>();
    r.answer_prompt = j.at("answer_prompt").get<std::string>();
    r.answer_raw = j.at("answer_raw").get<std::string>();
    r.request_log = j.at("request_log").get<std::vector<std::string>>();
    r.wall_time_ms = j.at("wall_time_ms").get<long long>();
    r.failed = j.at("failed").get<bool>();
    r.error = j.at("error").get<std::string>();
    return r;
}

inline void write_trajectories(const std::vector<TrajectoryRecord>& records,
                               const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write trace file: " + path);
    for (const auto& record : records) out << trajectory_to_json(record).dump() << "\n";
}

inline std::vector<TrajectoryRecord> load_trajectories(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open trace file: " + path);
    std::vector<TrajectoryRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw FormatError("trace line " + std::to_string(line_no) + " is not valid JSON");
        }
        records.push_back(trajectory_from_json(j));
    }
    return records;
}

}  // namespace dualrag
