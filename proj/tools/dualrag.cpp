#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualrag/dualrag.hpp"

namespace {

using namespace dualrag;

std::string env_or(const char* name, const std::string& fallback) {
    const char* value = std::getenv(name);
    return value && *value ? value : fallback;
}

struct BackendFlags {
    std::string backend;   // scripted:<fixture> | http:<url> | a bare URL
    std::string api_base;
    std::string api_key;
    std::string model;

    void attach(CLI::App* cmd) {
        cmd->add_option("--backend", backend,
                        "Chat backend: scripted:<fixture.jsonl> or http:<base-url> "
                        "(default: http backend from DUALRAG_API_BASE)");
        cmd->add_option("--api-base", api_base, "Chat endpoint base URL (env DUALRAG_API_BASE)");
        cmd->add_option("--api-key", api_key, "Bearer token (env DUALRAG_API_KEY)");
        cmd->add_option("--model", model, "Model name (env DUALRAG_MODEL)");
    }

    std::unique_ptr<ChatBackend> build() const {
        if (backend.rfind("scripted:", 0) == 0) {
            return std::make_unique<ScriptedBackend>(
                ScriptedBackend::from_file(backend.substr(9)));
        }
        HttpEndpointConfig config;
        config.base_url = env_or("DUALRAG_API_BASE", "");
        config.api_key = env_or("DUALRAG_API_KEY", "");
        config.model = env_or("DUALRAG_MODEL", "");
        if (backend.rfind("http:", 0) == 0) {
            std::string rest = backend.substr(5);
            // accept both http:<url> and a bare http(s)://... URL
            config.base_url = rest.rfind("//", 0) == 0 ? backend : rest;
        } else if (!backend.empty()) {
            throw Error("backend must be scripted:<fixture> or http:<url>, got: " + backend);
        }
        if (!api_base.empty()) config.base_url = api_base;
        if (!api_key.empty()) config.api_key = api_key;
        if (!model.empty()) config.model = model;
        if (config.base_url.empty()) {
            throw Error("no chat backend configured: pass --backend or set DUALRAG_API_BASE");
        }
        return std::make_unique<HttpBackend>(std::move(config));
    }
};

struct IndexFlags {
    std::string corpus_path;
    std::string index_path;

    void attach(CLI::App* cmd) {
        cmd->add_option("--corpus", corpus_path, "Corpus JSONL of {id, title, text}");
        cmd->add_option("--index", index_path, "Prebuilt index file (from `index`)");
    }

    // May be empty when the dataset itself supplies the corpus.
    std::unique_ptr<InvertedIndex> build(const std::vector<Document>* dataset_corpus) const {
        if (!index_path.empty()) {
            return std::make_unique<InvertedIndex>(InvertedIndex::load(index_path));
        }
        if (!corpus_path.empty()) {
            return std::make_unique<InvertedIndex>(build_index(load_corpus_jsonl(corpus_path)));
        }
        if (dataset_corpus && !dataset_corpus->empty()) {
            return std::make_unique<InvertedIndex>(build_index(*dataset_corpus));
        }
        throw Error("no retrieval corpus: pass --corpus, --index, or --dataset");
    }
};

struct RetrievalFlags {
    std::string retriever_url;
    std::string reranker_url;

    void attach(CLI::App* cmd) {
        cmd->add_option("--retriever-url", retriever_url,
                        "Remote retrieval service (default: local BM25)");
        cmd->add_option("--reranker-url", reranker_url,
                        "Remote reranker service (default: local token-overlap)");
    }

    std::unique_ptr<Searcher> build_searcher(const InvertedIndex& index) const {
        if (!retriever_url.empty()) return std::make_unique<RemoteSearcher>(retriever_url);
        return std::make_unique<LocalSearcher>(index);
    }

    std::unique_ptr<Reranker> build_reranker() const {
        if (!reranker_url.empty()) return std::make_unique<RemoteReranker>(reranker_url);
        return std::make_unique<JaccardReranker>();
    }
};

PromptLibrary load_prompts(const std::string& prompts_dir) {
    PromptLibrary lib = PromptLibrary::builtin();
    if (!prompts_dir.empty()) lib.load_dir(prompts_dir);
    return lib;
}

// Replaces trace-embedded gold answers/support ids with the dataset's, keyed
// by question id. Questions missing from the dataset keep what the trace has.
void merge_dataset_golds(std::vector<TrajectoryRecord>& records, const Dataset& dataset) {
    std::unordered_map<std::string, const Question*> by_id;
    for (const auto& q : dataset.questions) by_id[q.id] = &q;
    for (auto& record : records) {
        auto it = by_id.find(record.question.id);
        if (it == by_id.end()) continue;
        record.question.gold_answers = it->second->gold_answers;
        record.question.gold_support_doc_ids = it->second->gold_support_doc_ids;
    }
}

int cmd_index(const std::string& corpus_path, const std::string& out_path) {
    InvertedIndex index = build_index(load_corpus_jsonl(corpus_path));
    index.save(out_path);
    std::cout << index.doc_count() << " documents indexed\n"
              << "vocabulary size: " << index.vocabulary_size() << "\n";
    return 0;
}

struct RunArgs {
    std::string question_text;
    std::string question_id = "adhoc";
    std::string dataset_path;
    std::string format = "musique";
    BackendFlags backend;
    IndexFlags index;
    RetrievalFlags retrieval;
    std::string prompts_dir;
    std::string trace_path;
    std::string ablate;
    int max_iters = 5;
    int recall_k = 50;
    int rerank_k = 10;
    int parallelism = 1;
    int limit = 0;
    int sample = 0;
    unsigned seed = 0;
};

int cmd_run(const RunArgs& args) {
    RunConfig config;
    config.max_iterations = args.max_iters;
    config.recall_k = args.recall_k;
    config.rerank_k = args.rerank_k;
    if (args.ablate == "no_r") config.ablation_no_r = true;
    else if (args.ablate == "no_ei") config.ablation_no_ei = true;
    else if (args.ablate == "no_ko") config.ablation_no_ko = true;
    else if (!args.ablate.empty()) throw Error("unknown ablation: " + args.ablate);
    config.validate();

    std::vector<Question> questions;
    std::vector<Document> dataset_corpus;
    if (!args.dataset_path.empty()) {
        Dataset dataset = load_dataset(args.dataset_path, dataset_format_from_name(args.format));
        questions = std::move(dataset.questions);
        dataset_corpus = std::move(dataset.corpus);
    } else if (!args.question_text.empty()) {
        questions.push_back({args.question_id, args.question_text, {}, {}});
    } else {
        throw Error("pass --question or --dataset");
    }

    if (args.sample > 0 && args.sample < static_cast<int>(questions.size())) {
        std::mt19937 rng(args.seed);
        std::shuffle(questions.begin(), questions.end(), rng);
        questions.resize(static_cast<size_t>(args.sample));
    }
    if (args.limit > 0 && args.limit < static_cast<int>(questions.size())) {
        questions.resize(static_cast<size_t>(args.limit));
    }

    auto backend = args.backend.build();
    auto index = args.index.build(&dataset_corpus);
    auto searcher = args.retrieval.build_searcher(*index);
    auto reranker = args.retrieval.build_reranker();
    PromptLibrary prompts = load_prompts(args.prompts_dir);
    RunContext ctx{backend.get(), &prompts, searcher.get(), index.get(), reranker.get()};

    std::vector<TrajectoryRecord> records =
        run_batch(ctx, questions, config, args.parallelism);

    int failures = 0;
    for (const auto& record : records) {
        if (record.failed) {
            ++failures;
            std::cerr << record.question.id << "\tFAILED: " << record.error << "\n";
        } else if (args.dataset_path.empty()) {
            std::cout << record.answer.answer_text << "\n";
        } else {
            std::cout << record.question.id << "\t" << record.answer.answer_text << "\n";
        }
    }
    if (!args.trace_path.empty()) write_trajectories(records, args.trace_path);
    if (failures > 0) {
        std::cerr << failures << "/" << records.size() << " questions failed\n";
        return 1;
    }
    return 0;
}

struct EvalArgs {
    std::string trace_path;
    std::string dataset_path;
    std::string format = "musique";
    std::string out_prefix = "eval_report";
    bool judge = false;
    bool rouge = false;
    BackendFlags backend;
    std::string prompts_dir;
};

int cmd_eval(const EvalArgs& args) {
    std::vector<TrajectoryRecord> records = load_trajectories(args.trace_path);
    if (!args.dataset_path.empty()) {
        merge_dataset_golds(records,
                            load_dataset(args.dataset_path, dataset_format_from_name(args.format)));
    }

    EvalOptions options;
    options.with_rouge = args.rouge;
    std::unique_ptr<ChatBackend> backend;
    PromptLibrary prompts = load_prompts(args.prompts_dir);
    std::vector<std::string> judge_log;
    LlmSession judge_session;
    if (args.judge) {
        backend = args.backend.build();
        judge_session = LlmSession{backend.get(), &prompts, &judge_log, 0.0, 64};
        options.judge = &judge_session;
    }

    EvalReport report = evaluate(records, options);
    {
        std::ofstream csv(args.out_prefix + ".csv");
        if (!csv) throw Error("cannot write " + args.out_prefix + ".csv");
        csv << eval_report_csv(report);
        std::ofstream json(args.out_prefix + ".json");
        if (!json) throw Error("cannot write " + args.out_prefix + ".json");
        json << eval_report_json(report).dump(2) << "\n";
    }

    std::cout << "questions: " << report.per_question.size() << "\n"
              << "EM: " << report.em << "\n"
              << "Acc: " << report.acc << "\n"
              << "F1: " << report.f1 << "\n";
    if (report.acc_judge) std::cout << "Acc(judge): " << *report.acc_judge << "\n";
    if (report.rouge_2) std::cout << "ROUGE-2: " << *report.rouge_2 << "\n";
    if (report.rouge_l) std::cout << "ROUGE-L: " << *report.rouge_l << "\n";
    if (report.failed_count > 0) std::cout << "failed runs: " << report.failed_count << "\n";
    return 0;
}

struct ExportArgs {
    std::string trace_path;
    std::string dataset_path;
    std::string format = "musique";
    std::string out_path = "sft.jsonl";
    double threshold = kDedupThreshold;
};

int cmd_export_sft(const ExportArgs& args) {
    std::vector<TrajectoryRecord> records = load_trajectories(args.trace_path);
    if (!args.dataset_path.empty()) {
        merge_dataset_golds(records,
                            load_dataset(args.dataset_path, dataset_format_from_name(args.format)));
    }
    for (const auto& record : records) {
        if (!record.failed && record.question.gold_support_doc_ids.empty()) {
            std::cerr << "warning: question " << record.question.id
                      << " has no gold support ids; no summarizer records derived\n";
        }
    }
    JaccardScorer scorer;
    std::vector<SftRecord> sft = derive_all(records, scorer, args.threshold);
    SftSummary summary = export_jsonl(sft, args.out_path);
    std::cout << "capability            count\n"
              << "reasoner              " << summary.reasoner << "\n"
              << "entity_identifier     " << summary.entity_identifier << "\n"
              << "knowledge_summarizer  " << summary.knowledge_summarizer << "\n"
              << "Sum                   " << summary.sum() << "\n";
    return 0;
}

struct ServeArgs {
    int port = 8080;
    std::string host = "0.0.0.0";
    BackendFlags backend;
    IndexFlags index;
    RetrievalFlags retrieval;
    std::string prompts_dir;
    std::string trace_path;
    int max_iters = 5;
    int recall_k = 50;
    int rerank_k = 10;
};

QaService* g_service = nullptr;

void handle_signal(int) {
    if (g_service) g_service->stop();
}

int cmd_serve(const ServeArgs& args) {
    RunConfig config;
    config.max_iterations = args.max_iters;
    config.recall_k = args.recall_k;
    config.rerank_k = args.rerank_k;
    config.validate();

    auto backend = args.backend.build();
    auto index = args.index.build(nullptr);
    auto searcher = args.retrieval.build_searcher(*index);
    auto reranker = args.retrieval.build_reranker();
    PromptLibrary prompts = load_prompts(args.prompts_dir);
    RunContext ctx{backend.get(), &prompts, searcher.get(), index.get(), reranker.get()};

    QaService service(ctx, ServiceOptions{config, args.trace_path});
    g_service = &service;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    std::cout << "listening on " << args.host << ":" << args.port << "\n";
    bool ok = service.listen(args.host, args.port);
    g_service = nullptr;
    return ok ? 0 : 1;
}

struct StatsArgs {
    std::string trace_path;
    std::string csv_path;
};

int cmd_stats(const StatsArgs& args) {
    std::vector<TrajectoryRecord> records = load_trajectories(args.trace_path);
    IterationStats stats = iteration_stats(records);
    std::cout << "rounds  questions\n";
    for (const auto& [rounds, count] : stats.histogram) {
        std::cout << rounds << "       " << count << "\n";
    }
    if (stats.has_mean) {
        std::cout << "mean retrieval rounds: " << stats.mean << "\n";
    } else {
        std::cout << "mean retrieval rounds: n/a\n";
    }
    if (!args.csv_path.empty()) {
        std::ofstream out(args.csv_path);
        if (!out) throw Error("cannot write " + args.csv_path);
        out << iteration_stats_csv(stats);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iterative retrieval-augmented question answering engine"};
    app.require_subcommand(1);

    std::string index_corpus, index_out = "index.json";
    CLI::App* index_cmd = app.add_subcommand("index", "Build and persist a BM25 index");
    index_cmd->add_option("--corpus", index_corpus, "Corpus JSONL of {id, title, text}")
        ->required();
    index_cmd->add_option("--out", index_out, "Output index path");

    RunArgs run_args;
    CLI::App* run_cmd = app.add_subcommand("run", "Answer questions with the full loop");
    run_cmd->add_option("--question", run_args.question_text, "Single question text");
    run_cmd->add_option("--question-id", run_args.question_id,
                        "Id for --question (default: adhoc)");
    run_cmd->add_option("--dataset", run_args.dataset_path, "Benchmark file to answer");
    run_cmd->add_option("--format", run_args.format, "Dataset format: hotpotqa|2wiki|musique");
    run_cmd->add_option("--max-iters", run_args.max_iters, "Iteration cap (default 5)");
    run_cmd->add_option("--recall-k", run_args.recall_k, "Per-query recall depth (default 50)");
    run_cmd->add_option("--rerank-k", run_args.rerank_k, "Per-entity rerank depth (default 10)");
    run_cmd->add_option("--ablate", run_args.ablate, "Ablation: no_r|no_ei|no_ko");
    run_cmd->add_option("--trace", run_args.trace_path, "Write trajectory JSONL here");
    run_cmd->add_option("--parallelism", run_args.parallelism, "Concurrent runs (default 1)");
    run_cmd->add_option("--prompts-dir", run_args.prompts_dir, "Prompt template override dir");
    run_cmd->add_option("--limit", run_args.limit, "Keep only the first N questions");
    run_cmd->add_option("--sample", run_args.sample, "Seeded random sample of N questions");
    run_cmd->add_option("--seed", run_args.seed, "Sampling seed (default 0)");
    run_args.backend.attach(run_cmd);
    run_args.index.attach(run_cmd);
    run_args.retrieval.attach(run_cmd);

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score a trajectory file");
    eval_cmd->add_option("--trace", eval_args.trace_path, "Trajectory JSONL")->required();
    eval_cmd->add_option("--dataset", eval_args.dataset_path,
                         "Benchmark file supplying gold answers");
    eval_cmd->add_option("--format", eval_args.format, "Dataset format: hotpotqa|2wiki|musique");
    eval_cmd->add_option("--out", eval_args.out_prefix,
                         "Report path prefix (writes <out>.csv and <out>.json)");
    eval_cmd->add_flag("--judge", eval_args.judge, "Add model-judged accuracy");
    eval_cmd->add_flag("--rouge", eval_args.rouge, "Add ROUGE-2/ROUGE-L");
    eval_cmd->add_option("--prompts-dir", eval_args.prompts_dir, "Prompt template override dir");
    eval_args.backend.attach(eval_cmd);

    ExportArgs export_args;
    CLI::App* export_cmd =
        app.add_subcommand("export-sft", "Derive capability training data from a trace");
    export_cmd->add_option("--trace", export_args.trace_path, "Trajectory JSONL")->required();
    export_cmd->add_option("--dataset", export_args.dataset_path,
                           "Benchmark file supplying gold support ids");
    export_cmd->add_option("--format", export_args.format,
                           "Dataset format: hotpotqa|2wiki|musique");
    export_cmd->add_option("--out", export_args.out_path, "Output JSONL path");
    export_cmd->add_option("--threshold", export_args.threshold,
                           "Similarity threshold for dedup (default 0.8)");

    ServeArgs serve_args;
    CLI::App* serve_cmd = app.add_subcommand("serve", "Run the QA HTTP service");
    serve_cmd->add_option("--port", serve_args.port, "Listen port (default 8080)");
    serve_cmd->add_option("--host", serve_args.host, "Bind address (default 0.0.0.0)");
    serve_cmd->add_option("--max-iters", serve_args.max_iters, "Iteration cap (default 5)");
    serve_cmd->add_option("--recall-k", serve_args.recall_k, "Per-query recall depth (default 50)");
    serve_cmd->add_option("--rerank-k", serve_args.rerank_k,
                          "Per-entity rerank depth (default 10)");
    serve_cmd->add_option("--prompts-dir", serve_args.prompts_dir, "Prompt template override dir");
    serve_cmd->add_option("--trace", serve_args.trace_path, "Append trajectories here");
    serve_args.backend.attach(serve_cmd);
    serve_args.index.attach(serve_cmd);
    serve_args.retrieval.attach(serve_cmd);

    StatsArgs stats_args;
    CLI::App* stats_cmd =
        app.add_subcommand("stats", "Retrieval-round histogram for a trajectory file");
    stats_cmd->add_option("--trace", stats_args.trace_path, "Trajectory JSONL")->required();
    stats_cmd->add_option("--csv", stats_args.csv_path, "Write plot-ready CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (index_cmd->parsed()) return cmd_index(index_corpus, index_out);
        if (run_cmd->parsed()) return cmd_run(run_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (export_cmd->parsed()) return cmd_export_sft(export_args);
        if (serve_cmd->parsed()) return cmd_serve(serve_args);
        if (stats_cmd->parsed()) return cmd_stats(stats_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
