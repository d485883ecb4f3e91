#pragma once

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>

#include "dualrag/core.hpp"
#include "dualrag/orchestrator.hpp"

namespace dualrag {

struct ServiceOptions {
    RunConfig config;
    std::string trace_path;  // when set, every answered trajectory is appended as JSONL
};

// QA microservice: POST /answer {"question": "...", "id": "..."} runs one
// loop and returns {"answer", "rounds", "trace_id"}; GET /healthz reports
// liveness. One orchestrator run per request; the context is shared
// read-only.
class QaService {
public:
    QaService(RunContext ctx, ServiceOptions options)
        : ctx_(ctx), options_(std::move(options)) {
        server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"status\":\"ok\"}", "application/json");
        });
        server_.Post("/answer", [this](const httplib::Request& req, httplib::Response& res) {
            handle_answer(req, res);
        });
    }

    httplib::Server& server() { return server_; }

    bool listen(const std::string& host, int port) { return server_.listen(host, port); }
    void stop() { server_.stop(); }

private:
    void handle_answer(const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("question") ||
            !body.at("question").is_string() ||
            trim(body.at("question").get<std::string>()).empty()) {
            res.status = 400;
            res.set_content("{\"error\":\"body must be {\\\"question\\\": \\\"...\\\"}\"}",
                            "application/json");
            return;
        }
        Question question;
        question.text = body.at("question").get<std::string>();
        question.id = body.contains("id") && body.at("id").is_string()
                          ? body.at("id").get<std::string>()
                          : "req" + std::to_string(next_id_.fetch_add(1));

        TrajectoryRecord record = run_question(ctx_, question, options_.config);
        append_trace(record);
        if (record.failed) {
            res.status = 500;
            nlohmann::json err = {{"error", record.error}, {"trace_id", question.id}};
            res.set_content(err.dump(), "application/json");
            return;
        }
        nlohmann::json out = {{"answer", record.answer.answer_text},
                              {"rounds", retrieval_rounds(record)},
                              {"trace_id", question.id}};
        res.set_content(out.dump(), "application/json");
    }

    void append_trace(const TrajectoryRecord& record) {
        if (options_.trace_path.empty()) return;
        std::lock_guard<std::mutex> lock(trace_mutex_);
        std::ofstream out(options_.trace_path, std::ios::app);
        if (out) out << trajectory_to_json(record).dump() << "\n";
    }

    RunContext ctx_;
    ServiceOptions options_;
    httplib::Server server_;
    std::mutex trace_mutex_;
    std::atomic<long> next_id_{1};
};

}  // namespace dualrag
