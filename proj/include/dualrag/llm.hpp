#pragma once

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "dualrag/errors.hpp"
#include "dualrag/prompts.hpp"

namespace dualrag {

struct ChatRequest {
    std::string rendered_prompt;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::string tag;  // role/question_id/iteration[/entity]
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
    virtual bool health_check() = 0;
};

// Deterministic test double: a fixed tag -> response map loaded from a JSONL
// fixture. Lookups are non-destructive, so the same tag always replays the
// same text. Immutable after load and safe to share across runs.
class ScriptedBackend : public ChatBackend {
public:
    static ScriptedBackend from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open fixture file: " + path);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return from_jsonl(content);
    }

    static ScriptedBackend from_jsonl(const std::string& content) {
        ScriptedBackend backend;
        for (const auto& line : split_lines(content)) {
            if (trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line);
            backend.script_[j.at("tag").get<std::string>()] = j.at("response").get<std::string>();
        }
        return backend;
    }

    void add(const std::string& tag, const std::string& response) { script_[tag] = response; }

    std::string complete(const ChatRequest& request) override {
        auto it = script_.find(request.tag);
        if (it == script_.end()) throw UnscriptedRequest(request.tag);
        return it->second;
    }

    bool health_check() override { return true; }

    size_t size() const { return script_.size(); }

private:
    std::map<std::string, std::string> script_;
};

struct HttpEndpointConfig {
    std::string base_url;  // e.g. "http://localhost:8000/v1"
    std::string api_key;
    std::string model;
    int timeout_seconds = 60;
    int max_retries = 2;          // retries after the initial attempt
    int retry_backoff_ms = 100;   // doubled per retry
};

// Chat-completions client over HTTP. The rendered prompt is split at the
// question section: everything before it becomes the system message, the
// question block the user message.
class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(HttpEndpointConfig config) : config_(std::move(config)) {
        auto scheme_end = config_.base_url.find("://");
        size_t path_start = scheme_end == std::string::npos
                                ? config_.base_url.find('/')
                                : config_.base_url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            host_ = config_.base_url;
        } else {
            host_ = config_.base_url.substr(0, path_start);
            path_prefix_ = config_.base_url.substr(path_start);
            while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        }
    }

    std::string complete(const ChatRequest& request) override {
        nlohmann::json body = {
            {"model", config_.model},
            {"messages", build_messages(request.rendered_prompt)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens},
        };
        const std::string payload = body.dump();
        const std::string path = path_prefix_ + "/chat/completions";

        std::string last_failure;
        bool transport_failure = false;
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(
                    config_.retry_backoff_ms << (attempt - 1)));
            }
            auto client = make_client();
            auto res = client->Post(path, headers(), payload, "application/json");
            if (!res) {
                transport_failure = true;
                last_failure = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                transport_failure = false;
                last_failure = "server error: HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw ProtocolError("unexpected HTTP " + std::to_string(res->status) +
                                    " from " + host_ + path);
            }
            return extract_content(res->body);
        }
        if (transport_failure) throw TransportError(last_failure + " (tag " + request.tag + ")");
        throw BudgetExceeded("retries exhausted: " + last_failure + " (tag " + request.tag + ")");
    }

    bool health_check() override {
        auto client = make_client();
        auto res = client->Get(path_prefix_ + "/models", headers());
        return res && res->status == 200;
    }

    static nlohmann::json build_messages(const std::string& rendered_prompt) {
        nlohmann::json messages = nlohmann::json::array();
        size_t split = rendered_prompt.find(kQuestionSectionHeading);
        if (split == std::string::npos || split == 0) {
            messages.push_back({{"role", "user"}, {"content", rendered_prompt}});
            return messages;
        }
        messages.push_back({{"role", "system"}, {"content", trim(rendered_prompt.substr(0, split))}});
        messages.push_back({{"role", "user"}, {"content", trim(rendered_prompt.substr(split))}});
        return messages;
    }

private:
    std::unique_ptr<httplib::Client> make_client() const {
        auto client = std::make_unique<httplib::Client>(host_);
        client->set_connection_timeout(config_.timeout_seconds, 0);
        client->set_read_timeout(config_.timeout_seconds, 0);
        return client;
    }

    httplib::Headers headers() const {
        httplib::Headers h;
        if (!config_.api_key.empty()) h.emplace("Authorization", "Bearer " + config_.api_key);
        return h;
    }

    static std::string extract_content(const std::string& body) {
        nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_discarded()) throw ProtocolError("response is not valid JSON");
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
            throw ProtocolError("response has no choices");
        }
        const auto& message = j["choices"][0]["message"];
        if (!message.contains("content")) throw ProtocolError("response choice has no content");
        return message["content"].get<std::string>();
    }

    HttpEndpointConfig config_;
    std::string host_;
    std::string path_prefix_;
};

// Per-run binding of a backend, the prompt library, and the request log.
// The log records every tag in issue order.
struct LlmSession {
    ChatBackend* backend = nullptr;
    const PromptLibrary* prompts = nullptr;
    std::vector<std::string>* request_log = nullptr;
    double temperature = 0.0;
    int max_tokens = 1024;

    std::string complete(Role role, const SlotMap& slots, const std::string& tag,
                         std::string* rendered_out = nullptr) const {
        std::string rendered = prompts->render(role, slots);
        if (rendered_out) *rendered_out = rendered;
        return complete_rendered(rendered, tag);
    }

    // For callers that assemble the prompt themselves (reprompts append an
    // instruction to an already-rendered prompt).
    std::string complete_rendered(const std::string& rendered, const std::string& tag) const {
        ChatRequest request{rendered, temperature, max_tokens, tag};
        if (request_log) request_log->push_back(tag);
        return backend->complete(request);
    }
};

inline std::string make_tag(Role role, const std::string& question_id, int iteration,
                            const std::string& entity = "") {
    std::string tag = std::string(role_name(role)) + "/" + question_id + "/" + std::to_string(iteration);
    if (!entity.empty()) tag += "/" + entity;
    return tag;
}

}  // namespace dualrag
