#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualrag/core.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

enum class DatasetFormat { kHotpotQA, kTwoWiki, kMuSiQue };

inline DatasetFormat dataset_format_from_name(const std::string& name) {
    std::string n = lower(trim(name));
    if (n == "hotpotqa") return DatasetFormat::kHotpotQA;
    if (n == "2wiki" || n == "twowiki" || n == "2wikimultihopqa") return DatasetFormat::kTwoWiki;
    if (n == "musique") return DatasetFormat::kMuSiQue;
    throw FormatError("unknown dataset format: " + name);
}

struct Dataset {
    std::vector<Question> questions;
    std::vector<Document> corpus;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Passage ids are content-addressed so the same passage appearing under
// several questions resolves to one corpus document.
inline std::string passage_id(const std::string& title, const std::string& text) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "h%016llx",
                  static_cast<unsigned long long>(fnv1a64(title + "\x1f" + text)));
    return buf;
}

namespace detail {

struct CorpusBuilder {
    std::vector<Document> docs;
    std::unordered_map<std::string, size_t> by_id;

    // Returns the id, adding the passage on first sight.
    std::string add(const std::string& title, const std::string& text) {
        std::string id = passage_id(title, text);
        if (!by_id.count(id)) {
            by_id[id] = docs.size();
            docs.push_back({id, title, text, 0.0});
        }
        return id;
    }
};

// Both HotpotQA and 2WikiMultihopQA use the same array-of-records schema:
// context = [[title, [sentences...]]...], supporting_facts = [[title, sent_idx]...].
inline void parse_wiki_style_record(const nlohmann::json& rec, size_t index, CorpusBuilder& corpus,
                                    std::vector<Question>& questions) {
    if (!rec.contains("question") || !rec.contains("context")) {
        throw FormatError("record " + std::to_string(index) + " lacks question/context");
    }
    Question q;
    q.id = rec.contains("_id") ? rec.at("_id").get<std::string>()
                               : (rec.contains("id") ? rec.at("id").get<std::string>()
                                                     : "q" + std::to_string(index));
    q.text = rec.at("question").get<std::string>();
    if (rec.contains("answer") && rec.at("answer").is_string()) {
        q.gold_answers.push_back(rec.at("answer").get<std::string>());
    }

    std::unordered_map<std::string, std::string> title_to_id;
    for (const auto& passage : rec.at("context")) {
        if (!passage.is_array() || passage.size() < 2) {
            throw FormatError("record " + q.id + " has a malformed context passage");
        }
        std::string title = passage.at(0).get<std::string>();
        std::string text;
        for (const auto& sentence : passage.at(1)) text += sentence.get<std::string>();
        title_to_id[title] = corpus.add(title, text);
    }

    if (rec.contains("supporting_facts")) {
        for (const auto& fact : rec.at("supporting_facts")) {
            std::string title = fact.at(0).get<std::string>();
            auto it = title_to_id.find(title);
            if (it == title_to_id.end()) {
                throw FormatError("record " + q.id + " cites unknown supporting title \"" + title +
                                  "\"");
            }
            q.gold_support_doc_ids.insert(it->second);
        }
    }
    questions.push_back(std::move(q));
}

// MuSiQue is JSONL: paragraphs = [{title, paragraph_text, is_supporting}],
// answer + answer_aliases.
inline void parse_musique_record(const nlohmann::json& rec, size_t index, CorpusBuilder& corpus,
                                 std::vector<Question>& questions) {
    if (!rec.contains("question") || !rec.contains("paragraphs")) {
        throw FormatError("record " + std::to_string(index) + " lacks question/paragraphs");
    }
    Question q;
    q.id = rec.contains("id") ? rec.at("id").get<std::string>() : "q" + std::to_string(index);
    q.text = rec.at("question").get<std::string>();
    if (rec.contains("answer") && rec.at("answer").is_string()) {
        q.gold_answers.push_back(rec.at("answer").get<std::string>());
    }
    if (rec.contains("answer_aliases")) {
        for (const auto& alias : rec.at("answer_aliases")) {
            std::string a = alias.get<std::string>();
            if (std::find(q.gold_answers.begin(), q.gold_answers.end(), a) == q.gold_answers.end()) {
                q.gold_answers.push_back(std::move(a));
            }
        }
    }
    for (const auto& para : rec.at("paragraphs")) {
        std::string title = para.at("title").get<std::string>();
        std::string text = para.at("paragraph_text").get<std::string>();
        std::string id = corpus.add(title, text);
        if (para.value("is_supporting", false)) q.gold_support_doc_ids.insert(id);
    }
    questions.push_back(std::move(q));
}

}  // namespace detail

// Loads one benchmark file into questions plus a deduplicated passage corpus.
// HotpotQA and 2Wiki ship as one JSON array; MuSiQue ships as JSONL. Both
// physical layouts are accepted for each format.
inline Dataset load_dataset(const std::string& path, DatasetFormat format) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open dataset file: " + path);

    std::vector<nlohmann::json> records;
    char first = 0;
    in >> std::ws;
    first = static_cast<char>(in.peek());
    if (first == '[') {
        nlohmann::json root;
        try {
            in >> root;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("dataset is not valid JSON: ") + e.what());
        }
        for (auto& rec : root) records.push_back(std::move(rec));
    } else {
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
            if (rec.is_discarded()) {
                throw FormatError("dataset line " + std::to_string(line_no) +
                                  " is not valid JSON");
            }
            records.push_back(std::move(rec));
        }
    }

    Dataset dataset;
    detail::CorpusBuilder corpus;
    for (size_t i = 0; i < records.size(); ++i) {
        if (format == DatasetFormat::kMuSiQue) {
            detail::parse_musique_record(records[i], i, corpus, dataset.questions);
        } else {
            detail::parse_wiki_style_record(records[i], i, corpus, dataset.questions);
        }
    }
    dataset.corpus = std::move(corpus.docs);
    return dataset;
}

// Plain corpus ingestion: JSONL of {id, title, text}.
inline std::vector<Document> load_corpus_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open corpus file: " + path);
    std::vector<Document> docs;
    std::unordered_map<std::string, size_t> seen;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("id") || !j.contains("title") || !j.contains("text")) {
            throw FormatError("corpus line " + std::to_string(line_no) +
                              " is not a {id, title, text} object");
        }
        Document doc{j.at("id").get<std::string>(), j.at("title").get<std::string>(),
                     j.at("text").get<std::string>(), 0.0};
        if (seen.count(doc.id)) throw DuplicateDocId("duplicate document id: " + doc.id);
        seen[doc.id] = docs.size();
        docs.push_back(std::move(doc));
    }
    return docs;
}

}  // namespace dualrag
