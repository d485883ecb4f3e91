#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <memory>

#include "dualrag/dataset.hpp"
#include "dualrag/orchestrator.hpp"

using namespace dualrag;

namespace {

std::string fixture(const std::string& rel) { return std::string(DUALRAG_FIXTURES) + "/" + rel; }

// Bundles a scripted backend with a local index into a ready RunContext.
struct Env {
    ScriptedBackend backend;
    PromptLibrary prompts = PromptLibrary::builtin();
    InvertedIndex index;
    std::unique_ptr<LocalSearcher> searcher;
    JaccardReranker reranker;
    RunContext ctx;

    Env(ScriptedBackend b, const std::vector<Document>& corpus)
        : backend(std::move(b)), index(build_index(corpus)) {
        searcher = std::make_unique<LocalSearcher>(index);
        ctx = RunContext{&backend, &prompts, searcher.get(), &index, &reranker};
    }
};

Env case_env() {
    Dataset ds = load_dataset(fixture("case/dataset.jsonl"), DatasetFormat::kMuSiQue);
    return Env(ScriptedBackend::from_file(fixture("case/backend.jsonl")), ds.corpus);
}

Question case_question() {
    Dataset ds = load_dataset(fixture("case/dataset.jsonl"), DatasetFormat::kMuSiQue);
    return ds.questions.at(0);
}

int ks_tag_count(const TrajectoryRecord& record) {
    int n = 0;
    for (const auto& tag : record.request_log) {
        if (tag.rfind("knowledge_summarizer/", 0) == 0) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("worked example replays: three steps, two retrieval rounds, clean answer") {
    Env env = case_env();
    Question question = case_question();
    TrajectoryRecord record = run_question(env.ctx, question, {});

    REQUIRE_FALSE(record.failed);
    CHECK(record.steps.size() == 3);
    CHECK(retrieval_rounds(record) == 2);
    CHECK(record.answer.answer_text == "El extraño viaje");
    CHECK_FALSE(record.answer.forced);

    std::vector<std::string> expected_log = {
        "reasoner/case/1",
        "entity_identifier/case/1",
        "knowledge_summarizer/case/1/El Extraño Viaje",
        "knowledge_summarizer/case/1/Love In Pawn",
        "reasoner/case/2",
        "entity_identifier/case/2",
        "knowledge_summarizer/case/2/Fernando Fernán Gómez",
        "knowledge_summarizer/case/2/Charles Saunders",
        "reasoner/case/3",
        "answerer/case/3",
    };
    CHECK(record.request_log == expected_log);

    // The outline accumulates all four entities across the two rounds.
    const KnowledgeOutline& outline = record.steps.back().outline_snapshot;
    CHECK(outline.size() == 4);
    CHECK(outline.find("El Extraño Viaje") != nullptr);
    CHECK(outline.find("Charles Saunders") != nullptr);

    // Every fragment cites gold support documents.
    for (const auto& step : record.steps) {
        for (const auto& frag : step.fragments) {
            REQUIRE_FALSE(frag.source_doc_ids.empty());
            for (const auto& id : frag.source_doc_ids) {
                CHECK(question.gold_support_doc_ids.count(id) == 1);
            }
        }
    }

    // Pipeline shape on this trace.
    for (const auto& step : record.steps) {
        for (const auto& e : step.bundle.per_entity) {
            CHECK(e.recalled.size() <= 50);
            CHECK(e.reranked.size() <= 10);
        }
    }
}

TEST_CASE("iteration cap forces an answer after five rounds") {
    Dataset ds = load_dataset(fixture("case/dataset.jsonl"), DatasetFormat::kMuSiQue);
    Env env(ScriptedBackend::from_file(fixture("backends/cap.jsonl")), ds.corpus);
    Question q{"cap", "An unanswerable question?", {"Unknown"}, {}};

    TrajectoryRecord record = run_question(env.ctx, q, {});
    REQUIRE_FALSE(record.failed);
    CHECK(record.steps.size() == 5);
    CHECK(retrieval_rounds(record) == 5);
    CHECK(record.answer.forced);
    CHECK(record.answer.answer_text == "Unknown");
    CHECK(ks_tag_count(record) == 0);  // nothing recalled, so nothing summarized
}

TEST_CASE("a completed flag on the first step answers without retrieval") {
    ScriptedBackend backend;
    backend.add("reasoner/one/1", "Obvious from the question.\nReasoning completed");
    backend.add("answerer/one/1", "forty-two");
    Env env(std::move(backend), {{"d1", "T", "text", 0}});
    Question q{"one", "2*21?", {"forty-two"}, {}};

    TrajectoryRecord record = run_question(env.ctx, q, {});
    REQUIRE_FALSE(record.failed);
    CHECK(record.steps.size() == 1);
    CHECK(retrieval_rounds(record) == 0);
    CHECK_FALSE(record.steps[0].has_plan);
    CHECK_FALSE(record.answer.forced);
    CHECK(record.answer.answer_text == "forty-two");
    CHECK(record.request_log ==
          std::vector<std::string>{"reasoner/one/1", "answerer/one/1"});
}

TEST_CASE("retrieval-disabled ablation forces retrieval every iteration until the cap") {
    ScriptedBackend backend;
    for (int t = 1; t <= 5; ++t) {
        // The model says it is done every time; the ablation overrides it.
        backend.add(make_tag(Role::reasoner, "nor", t), "I know this.\nReasoning completed");
        backend.add(make_tag(Role::entity_identifier, "nor", t),
                    "(1) Topic: [zzunmatchable" + std::to_string(t) + "]");
    }
    backend.add("answerer/nor/5", "guess");
    Env env(std::move(backend), {{"d1", "T", "text", 0}});
    Question q{"nor", "?", {}, {}};

    RunConfig config;
    config.ablation_no_r = true;
    TrajectoryRecord record = run_question(env.ctx, q, config);
    REQUIRE_FALSE(record.failed);
    CHECK(record.steps.size() == 5);
    CHECK(retrieval_rounds(record) == 5);
    CHECK(record.answer.forced);
    for (const auto& step : record.steps) CHECK(step.step.needs_retrieval);
}

TEST_CASE("entity-identification ablation issues one rationale query per round") {
    ScriptedBackend backend;
    backend.add("reasoner/nei/1", "alpha beta\nReason interrupt for retrieval");
    backend.add("reasoner/nei/2", "done.\nReasoning completed");
    backend.add("knowledge_summarizer/nei/1/query", "Alpha facts.\nSOURCES: d1");
    backend.add("answerer/nei/2", "alpha");
    Env env(std::move(backend), {{"d1", "Alpha", "alpha beta gamma", 0}});
    Question q{"nei", "?", {}, {}};

    RunConfig config;
    config.ablation_no_ei = true;
    TrajectoryRecord record = run_question(env.ctx, q, config);
    REQUIRE_FALSE(record.failed);
    REQUIRE(record.steps.size() == 2);

    const StepRecord& step1 = record.steps[0];
    REQUIRE(step1.has_plan);
    REQUIRE(step1.plan.items.size() == 1);
    CHECK(step1.plan.items[0].entity.canonical == "query");
    // The single query is exactly the rationale of the triggering step.
    CHECK(step1.plan.items[0].queries == std::vector<std::string>{"alpha beta"});
    CHECK(step1.plan_prompt.empty());

    // No entity-identifier call anywhere in the log.
    for (const auto& tag : record.request_log) {
        CHECK(tag.rfind("entity_identifier/", 0) == std::string::npos);
    }
}

TEST_CASE("summarization ablation feeds raw documents straight to the reasoner") {
    ScriptedBackend backend;
    backend.add("reasoner/nko/1", "need info\nReason interrupt for retrieval");
    backend.add("entity_identifier/nko/1", "(1) Alpha: [alpha facts]");
    backend.add("reasoner/nko/2", "clear now\nReasoning completed");
    backend.add("answerer/nko/2", "alpha");
    std::string doc_text = "alpha facts are plentiful and well documented";
    Env env(std::move(backend), {{"d1", "Alpha", doc_text, 0}});
    Question q{"nko", "?", {}, {}};

    RunConfig config;
    config.ablation_no_ko = true;
    TrajectoryRecord record = run_question(env.ctx, q, config);
    REQUIRE_FALSE(record.failed);
    REQUIRE(record.steps.size() == 2);

    CHECK(ks_tag_count(record) == 0);
    CHECK(record.steps[0].fragments.empty());
    CHECK(record.steps[0].outline_snapshot.empty());
    // The second reasoner prompt carries the raw document text, not an outline.
    CHECK(record.steps[1].reasoner_prompt.find(doc_text) != std::string::npos);
    CHECK(record.steps[1].reasoner_prompt.find("## Alpha") == std::string::npos);
    // Before retrieval the knowledge slot showed the empty placeholder.
    CHECK(record.steps[0].reasoner_prompt.find(kEmptyOutlineText) != std::string::npos);
}

TEST_CASE("documents summarized once for an entity are not re-summarized later") {
    ScriptedBackend backend;
    backend.add("reasoner/dd/1", "look up E\nReason interrupt for retrieval");
    backend.add("entity_identifier/dd/1", "(1) E: [alpha]");
    backend.add("knowledge_summarizer/dd/1/E", "E is alpha.\nSOURCES: d1");
    backend.add("reasoner/dd/2", "look again\nReason interrupt for retrieval");
    // Same query under a renamed entity; SAME-AS routes the dedup key.
    backend.add("entity_identifier/dd/2", "(1) E2: [alpha]\nSAME-AS: E2 = E");
    backend.add("reasoner/dd/3", "enough\nReasoning completed");
    backend.add("answerer/dd/3", "alpha");
    Env env(std::move(backend), {{"d1", "Alpha", "alpha alpha", 0}});
    Question q{"dd", "?", {}, {}};

    TrajectoryRecord record = run_question(env.ctx, q, {});
    REQUIRE_FALSE(record.failed);
    REQUIRE(record.steps.size() == 3);

    const StepRecord& step1 = record.steps[0];
    REQUIRE(step1.bundle.per_entity.size() == 1);
    CHECK(step1.bundle.per_entity[0].reranked.size() == 1);
    REQUIRE(step1.fragments.size() == 1);

    // Round two recalls the same document, which is dropped before rerank, so
    // the summarizer is never called again.
    const StepRecord& step2 = record.steps[1];
    REQUIRE(step2.bundle.per_entity.size() == 1);
    CHECK(step2.bundle.per_entity[0].recalled.empty());
    CHECK(step2.bundle.per_entity[0].reranked.empty());
    CHECK(step2.fragments.empty());
    CHECK(ks_tag_count(record) == 1);

    // The outline still has one entity, with E2 linked as an alias.
    const KnowledgeOutline& outline = record.steps.back().outline_snapshot;
    CHECK(outline.size() == 1);
    CHECK(outline.find("E2") != nullptr);
}

TEST_CASE("a run failure yields a failed record, not an exception") {
    ScriptedBackend backend;  // empty: the first reasoner call is unscripted
    Env env(std::move(backend), {{"d1", "T", "text", 0}});
    TrajectoryRecord record = run_question(env.ctx, {"oops", "?", {}, {}}, {});
    CHECK(record.failed);
    CHECK(record.error.find("oops") != std::string::npos);
    CHECK(record.answer.answer_text.empty());
}

TEST_CASE("invalid run config propagates as an exception") {
    Env env(ScriptedBackend{}, {{"d1", "T", "text", 0}});
    RunConfig config;
    config.rerank_k = 99;  // exceeds recall_k
    CHECK_THROWS_AS(run_question(env.ctx, {"x", "?", {}, {}}, config), Error);
}

namespace {

// Scripted two-round runs for batch tests: each question retrieves once and
// then answers.
Env batch_env(int n_questions) {
    ScriptedBackend backend;
    std::vector<Document> corpus;
    for (int i = 0; i < n_questions; ++i) {
        std::string qid = "b" + std::to_string(i);
        std::string token = "tok" + std::to_string(i);
        corpus.push_back({"d" + std::to_string(i), "Doc " + std::to_string(i),
                          token + " content " + std::to_string(i), 0});
        backend.add(make_tag(Role::reasoner, qid, 1),
                    "need " + token + "\nReason interrupt for retrieval");
        backend.add(make_tag(Role::entity_identifier, qid, 1),
                    "(1) Entity" + std::to_string(i) + ": [" + token + "]");
        backend.add(make_tag(Role::knowledge_summarizer, qid, 1, "Entity" + std::to_string(i)),
                    "Fact " + std::to_string(i) + ".\nSOURCES: d" + std::to_string(i));
        backend.add(make_tag(Role::reasoner, qid, 2), "have it\nReasoning completed");
        backend.add(make_tag(Role::answerer, qid, 2), "answer " + std::to_string(i));
    }
    return Env(std::move(backend), corpus);
}

std::vector<Question> batch_questions(int n) {
    std::vector<Question> qs;
    for (int i = 0; i < n; ++i) {
        qs.push_back({"b" + std::to_string(i), "question " + std::to_string(i), {}, {}});
    }
    return qs;
}

nlohmann::json canonical_json(const TrajectoryRecord& record) {
    nlohmann::json j = trajectory_to_json(record);
    j["wall_time_ms"] = 0;
    return j;
}

}  // namespace

TEST_CASE("batch results are identical across parallelism levels") {
    Env env = batch_env(12);
    auto questions = batch_questions(12);

    auto serial = run_batch(env.ctx, questions, {}, 1);
    auto parallel = run_batch(env.ctx, questions, {}, 4);
    REQUIRE(serial.size() == 12);
    REQUIRE(parallel.size() == 12);
    for (size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].question.id == questions[i].id);  // input order
        CHECK(canonical_json(serial[i]) == canonical_json(parallel[i]));
    }
    CHECK_THROWS_AS(run_batch(env.ctx, questions, {}, 0), Error);
}

TEST_CASE("one failing question does not disturb its batch siblings") {
    Env env = batch_env(3);
    auto questions = batch_questions(3);
    questions[1].id = "unscripted";  // no entries for this id

    auto records = run_batch(env.ctx, questions, {}, 2);
    REQUIRE(records.size() == 3);
    CHECK_FALSE(records[0].failed);
    CHECK(records[1].failed);
    CHECK_FALSE(records[2].failed);
    CHECK(records[0].answer.answer_text == "answer 0");
    CHECK(records[2].answer.answer_text == "answer 2");
}

TEST_CASE("iteration statistics summarize retrieval rounds") {
    Env env = batch_env(2);
    auto records = run_batch(env.ctx, batch_questions(2), {}, 1);
    // Each batch question retrieves exactly once.
    TrajectoryRecord three = records[0];
    three.steps.push_back(three.steps[0]);
    three.steps.push_back(three.steps[0]);

    IterationStats stats = iteration_stats({records[0], records[1], three});
    CHECK(stats.histogram == std::map<int, int>{{1, 2}, {3, 1}});
    CHECK(stats.has_mean);
    CHECK(stats.mean == Catch::Approx(5.0 / 3.0));
    CHECK(iteration_stats_csv(stats) == "rounds,count\n1,2\n3,1\n");

    IterationStats empty = iteration_stats({});
    CHECK_FALSE(empty.has_mean);
    CHECK(empty.histogram.empty());
}

TEST_CASE("trajectory JSON round trip is lossless") {
    Env env = case_env();
    TrajectoryRecord record = run_question(env.ctx, case_question(), {});
    REQUIRE_FALSE(record.failed);

    nlohmann::json j = trajectory_to_json(record);
    CHECK(j.at("schema_version") == kTrajectorySchemaVersion);
    TrajectoryRecord back = trajectory_from_json(j);
    CHECK(trajectory_to_json(back).dump() == j.dump());

    nlohmann::json wrong = j;
    wrong["schema_version"] = 999;
    CHECK_THROWS_AS(trajectory_from_json(wrong), FormatError);
}

TEST_CASE("trajectory files round trip through JSONL") {
    Env env = batch_env(3);
    auto records = run_batch(env.ctx, batch_questions(3), {}, 1);
    std::string path = "trajectories_roundtrip.jsonl";
    write_trajectories(records, path);
    auto loaded = load_trajectories(path);
    std::remove(path.c_str());

    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(trajectory_to_json(loaded[i]).dump() == trajectory_to_json(records[i]).dump());
    }
    CHECK_THROWS_AS(load_trajectories("/nonexistent/trace.jsonl"), Error);
}
