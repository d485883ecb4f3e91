#include <catch2/catch_amalgamated.hpp>

#include <httplib.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include "dualrag/dataset.hpp"
#include "dualrag/orchestrator.hpp"
#include "dualrag/retrieval.hpp"
#include "dualrag/server.hpp"
#include "dualrag/sft.hpp"

using namespace dualrag;

namespace {

std::string fixture(const std::string& rel) { return std::string(DUALRAG_FIXTURES) + "/" + rel; }

struct CmdResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr merged
};

CmdResult run_cli(const std::string& args) {
    std::string cmd = std::string(DUALRAG_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult result;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof buf, pipe)) result.output.append(buf, n);
    int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

size_t line_count(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    size_t n = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) ++n;
    }
    return n;
}

// Shared case-study artifacts, produced once by the run subcommand.
struct CliCase {
    std::string trace = "cli_case_trace.jsonl";
    CliCase() {
        CmdResult run = run_cli("run --dataset " + fixture("case/dataset.jsonl") +
                                " --format musique --backend scripted:" +
                                fixture("case/backend.jsonl") + " --trace " + trace);
        REQUIRE(run.exit_code == 0);
        REQUIRE(run.output.find("case\tEl extraño viaje") != std::string::npos);
    }
    ~CliCase() { std::remove(trace.c_str()); }
};

}  // namespace

TEST_CASE("cli with no subcommand fails with usage") {
    CmdResult r = run_cli("");
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("subcommand is required") != std::string::npos);
}

TEST_CASE("cli rejects unknown flags") {
    CmdResult r = run_cli("index --no-such-flag");
    CHECK(r.exit_code != 0);
}

TEST_CASE("cli surfaces missing files as errors") {
    CmdResult r = run_cli("stats --trace /nonexistent/trace.jsonl");
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("error:") != std::string::npos);
}

TEST_CASE("index subcommand reports corpus statistics") {
    std::string out = "cli_index.json";
    CmdResult r = run_cli("index --corpus " + fixture("case/corpus.jsonl") + " --out " + out);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("12 documents indexed") != std::string::npos);
    CHECK(r.output.find("vocabulary size: 164") != std::string::npos);

    InvertedIndex loaded = InvertedIndex::load(out);
    std::remove(out.c_str());
    CHECK(loaded.doc_count() == 12);
    CHECK(loaded.vocabulary_size() == 164);
}

TEST_CASE("run subcommand replays the worked example end to end") {
    CliCase cli;
    auto records = load_trajectories(cli.trace);
    REQUIRE(records.size() == 1);
    CHECK(records[0].steps.size() == 3);
    CHECK(retrieval_rounds(records[0]) == 2);
    CHECK_FALSE(records[0].answer.forced);
}

TEST_CASE("run subcommand reports failures per question and exits nonzero") {
    std::string trace = "cli_fail_trace.jsonl";
    // The cap backend has no entries for the case question id, so the run fails.
    CmdResult r = run_cli("run --dataset " + fixture("case/dataset.jsonl") +
                          " --format musique --backend scripted:" +
                          fixture("backends/cap.jsonl") + " --trace " + trace);
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("case\tFAILED:") != std::string::npos);
    CHECK(r.output.find("1/1 questions failed") != std::string::npos);
    CHECK(line_count(trace) == 1);  // the failed trajectory is still traced
    std::remove(trace.c_str());
}

TEST_CASE("eval subcommand scores a trace and writes reports") {
    CliCase cli;
    std::string prefix = "cli_eval_report";
    CmdResult r = run_cli("eval --trace " + cli.trace + " --rouge --out " + prefix);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("questions: 1") != std::string::npos);
    CHECK(r.output.find("EM: 100") != std::string::npos);
    CHECK(r.output.find("Acc: 100") != std::string::npos);
    CHECK(r.output.find("ROUGE-L: 100") != std::string::npos);

    std::ifstream csv(prefix + ".csv");
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header == "id,answer,em,acc,f1,rouge_2,rouge_l,failed");

    std::ifstream json_in(prefix + ".json");
    REQUIRE(json_in.good());
    nlohmann::json j;
    json_in >> j;
    CHECK(j.at("aggregates").at("em") == 100.0);

    std::remove((prefix + ".csv").c_str());
    std::remove((prefix + ".json").c_str());
}

TEST_CASE("eval subcommand supports the scripted judge") {
    CliCase cli;
    std::string prefix = "cli_eval_judged";
    CmdResult r = run_cli("eval --trace " + cli.trace + " --judge --backend scripted:" +
                          fixture("case/backend.jsonl") + " --out " + prefix);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("Acc(judge): 100") != std::string::npos);
    std::remove((prefix + ".csv").c_str());
    std::remove((prefix + ".json").c_str());
}

TEST_CASE("export-sft subcommand derives the expected record counts") {
    CliCase cli;
    std::string out = "cli_sft.jsonl";
    CmdResult r = run_cli("export-sft --trace " + cli.trace + " --out " + out);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("reasoner              3") != std::string::npos);
    CHECK(r.output.find("entity_identifier     2") != std::string::npos);
    CHECK(r.output.find("knowledge_summarizer  4") != std::string::npos);
    CHECK(r.output.find("Sum                   9") != std::string::npos);
    CHECK(line_count(out) == 9);
    auto loaded = load_sft_jsonl(out);
    CHECK(loaded.size() == 9);
    std::remove(out.c_str());
}

TEST_CASE("export-sft warns when a trace has no gold support ids") {
    std::string trace = "cli_nosupport_trace.jsonl";
    {
        // A minimal successful trajectory whose question lacks support ids.
        TrajectoryRecord rec;
        rec.question = {"plain", "?", {"x"}, {}};
        rec.answer = {"x", false};
        write_trajectories({rec}, trace);
    }
    std::string out = "cli_nosupport_sft.jsonl";
    CmdResult r = run_cli("export-sft --trace " + trace + " --out " + out);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("warning: question plain has no gold support ids") != std::string::npos);
    CHECK(r.output.find("knowledge_summarizer  0") != std::string::npos);
    std::remove(trace.c_str());
    std::remove(out.c_str());
}

TEST_CASE("stats subcommand prints the retrieval-round histogram") {
    CliCase cli;
    CmdResult r = run_cli("stats --trace " + cli.trace);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("rounds  questions") != std::string::npos);
    CHECK(r.output.find("2       1") != std::string::npos);
    CHECK(r.output.find("mean retrieval rounds: 2") != std::string::npos);

    std::string csv = "cli_stats.csv";
    CmdResult with_csv = run_cli("stats --trace " + cli.trace + " --csv " + csv);
    CHECK(with_csv.exit_code == 0);
    std::ifstream in(csv);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == "rounds,count\n2,1\n");
    std::remove(csv.c_str());
}

TEST_CASE("run subcommand honors ablation flags") {
    std::string trace = "cli_ablate_trace.jsonl";
    CmdResult r = run_cli("run --dataset " + fixture("case/dataset.jsonl") +
                          " --format musique --backend scripted:" +
                          fixture("case/backend.jsonl") + " --ablate no_ko --trace " + trace);
    // The case script was written for the full pipeline; under no_ko the
    // knowledge slot differs but the scripted replies still parse, so the run
    // completes with zero summarizer calls.
    CHECK(r.exit_code == 0);
    auto records = load_trajectories(trace);
    REQUIRE(records.size() == 1);
    CHECK(records[0].config.ablation_no_ko);
    for (const auto& tag : records[0].request_log) {
        CHECK(tag.rfind("knowledge_summarizer/", 0) == std::string::npos);
    }
    std::remove(trace.c_str());
}

TEST_CASE("qa service answers over HTTP") {
    Dataset ds = load_dataset(fixture("case/dataset.jsonl"), DatasetFormat::kMuSiQue);
    InvertedIndex index = build_index(ds.corpus);
    LocalSearcher searcher(index);
    JaccardReranker reranker;
    ScriptedBackend backend = ScriptedBackend::from_file(fixture("case/backend.jsonl"));
    PromptLibrary prompts = PromptLibrary::builtin();
    RunContext ctx{&backend, &prompts, &searcher, &index, &reranker};

    std::string trace = "cli_service_trace.jsonl";
    std::remove(trace.c_str());
    ServiceOptions options;
    options.trace_path = trace;
    QaService service(ctx, options);
    int port = service.server().bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread thread([&] { service.server().listen_after_bind(); });
    service.server().wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(nlohmann::json::parse(health->body).at("status") == "ok");

    nlohmann::json ask = {{"question", ds.questions[0].text}, {"id", "case"}};
    auto res = client.Post("/answer", ask.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    nlohmann::json body = nlohmann::json::parse(res->body);
    CHECK(body.at("answer") == "El extraño viaje");
    CHECK(body.at("rounds") == 2);
    CHECK(body.at("trace_id") == "case");

    auto bad = client.Post("/answer", "{\"not\": \"a question\"}", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);

    // An id with no scripted entries fails the run and maps to a 500.
    nlohmann::json unknown = {{"question", "?"}, {"id", "ghost"}};
    auto failed = client.Post("/answer", unknown.dump(), "application/json");
    REQUIRE(failed);
    CHECK(failed->status == 500);
    CHECK(nlohmann::json::parse(failed->body).at("trace_id") == "ghost");

    service.stop();
    thread.join();

    // Both completed runs were appended to the trace, the malformed one not.
    CHECK(line_count(trace) == 2);
    std::remove(trace.c_str());
}
