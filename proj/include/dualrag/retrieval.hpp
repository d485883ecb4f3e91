#pragma once

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dualrag/core.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

// Index/query tokenization: ASCII lowercase, split on non-alphanumeric
// bytes. Bytes >= 0x80 count as word bytes, so UTF-8 sequences stay inside
// their token.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        bool word_byte = (u >= 0x80) || std::isalnum(u);
        if (word_byte) {
            cur += ascii_lower(c);
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

struct SearchHit {
    std::string id;
    double score = 0.0;
};

struct Posting {
    std::string doc_id;
    int term_frequency = 0;
};

// Okapi BM25 index over title + text. Immutable after build; concurrent
// searches are safe.
class InvertedIndex {
public:
    double k1 = 1.2;
    double b = 0.75;

    static InvertedIndex build(const std::vector<Document>& corpus, double k1 = 1.2, double b = 0.75) {
        InvertedIndex index;
        index.k1 = k1;
        index.b = b;
        for (const auto& doc : corpus) index.add(doc);
        index.finalize();
        return index;
    }

    int doc_count() const { return static_cast<int>(docs_.size()); }
    double avg_doc_length() const { return avg_doc_length_; }
    size_t vocabulary_size() const { return postings_.size(); }
    const std::vector<Document>& documents() const { return docs_; }

    const Document* get(const std::string& doc_id) const {
        auto it = by_id_.find(doc_id);
        return it == by_id_.end() ? nullptr : &docs_[it->second];
    }

    const Document& require(const std::string& doc_id) const {
        const Document* doc = get(doc_id);
        if (!doc) throw Error("unknown document id: " + doc_id);
        return *doc;
    }

    bool has_term(const std::string& term) const { return postings_.count(term) > 0; }

    // Top-k by BM25, score descending with doc_id ascending on ties. Only
    // documents with nonzero score are returned.
    std::vector<SearchHit> search(const std::string& query, int k) const {
        if (k < 1) throw Error("search k must be >= 1");
        auto terms = tokenize(query);
        if (terms.empty()) throw EmptyQuery("query tokenizes to nothing: \"" + query + "\"");

        std::unordered_map<int, double> scores;
        for (const auto& term : terms) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            const double idf = idf_for(static_cast<int>(it->second.size()));
            for (const auto& posting : it->second) {
                int doc_idx = by_id_.at(posting.doc_id);
                double tf = posting.term_frequency;
                double norm = k1 * (1.0 - b + b * doc_lengths_[doc_idx] / avg_doc_length_);
                scores[doc_idx] += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }

        std::vector<SearchHit> hits;
        hits.reserve(scores.size());
        for (const auto& [doc_idx, score] : scores) {
            if (score > 0.0) hits.push_back({docs_[doc_idx].id, score});
        }
        std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.id < b.id;
        });
        if (static_cast<int>(hits.size()) > k) hits.resize(k);
        return hits;
    }

    nlohmann::json to_json() const {
        nlohmann::json docs = nlohmann::json::array();
        for (const auto& d : docs_) {
            docs.push_back({{"id", d.id}, {"title", d.title}, {"text", d.text}});
        }
        nlohmann::json postings;
        for (const auto& [term, list] : postings_) {
            nlohmann::json entries = nlohmann::json::array();
            for (const auto& p : list) entries.push_back({p.doc_id, p.term_frequency});
            postings[term] = std::move(entries);
        }
        return {{"format_version", 1},
                {"k1", k1},
                {"b", b},
                {"docs", std::move(docs)},
                {"postings", std::move(postings)}};
    }

    static InvertedIndex from_json(const nlohmann::json& j) {
        std::vector<Document> corpus;
        for (const auto& d : j.at("docs")) {
            corpus.push_back({d.at("id").get<std::string>(), d.at("title").get<std::string>(),
                              d.at("text").get<std::string>(), 0.0});
        }
        // Postings are rebuilt from the stored docs; the serialized lists are
        // kept for external consumers and sanity checks.
        return build(corpus, j.at("k1").get<double>(), j.at("b").get<double>());
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot write index file: " + path);
        out << to_json().dump(2) << "\n";
    }

    static InvertedIndex load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open index file: " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }

private:
    void add(const Document& doc) {
        if (by_id_.count(doc.id)) throw DuplicateDocId("duplicate document id: " + doc.id);
        int doc_idx = static_cast<int>(docs_.size());
        by_id_[doc.id] = doc_idx;
        docs_.push_back(doc);

        auto tokens = tokenize(doc.title + " " + doc.text);
        doc_lengths_.push_back(static_cast<double>(tokens.size()));
        std::map<std::string, int> tf;
        for (const auto& t : tokens) ++tf[t];
        for (const auto& [term, count] : tf) {
            postings_[term].push_back({doc.id, count});
        }
    }

    void finalize() {
        double total = 0.0;
        for (double len : doc_lengths_) total += len;
        avg_doc_length_ = docs_.empty() ? 0.0 : total / static_cast<double>(docs_.size());
        for (auto& [term, list] : postings_) {
            std::sort(list.begin(), list.end(),
                      [](const Posting& a, const Posting& b) { return a.doc_id < b.doc_id; });
        }
    }

    // Non-negative IDF variant: ln(1 + (N - df + 0.5) / (df + 0.5)).
    double idf_for(int df) const {
        double n = static_cast<double>(docs_.size());
        return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }

    std::vector<Document> docs_;
    std::unordered_map<std::string, int> by_id_;
    std::vector<double> doc_lengths_;
    std::map<std::string, std::vector<Posting>> postings_;
    double avg_doc_length_ = 0.0;
};

inline InvertedIndex build_index(const std::vector<Document>& corpus) {
    for (const auto& doc : corpus) {
        if (trim(doc.text).empty()) throw Error("document text must be non-empty: " + doc.id);
    }
    return InvertedIndex::build(corpus);
}

// Query-time recall contract; local BM25 and the remote retriever both
// implement it.
class Searcher {
public:
    virtual ~Searcher() = default;
    virtual std::vector<SearchHit> search(const std::string& query, int k) const = 0;
};

class LocalSearcher : public Searcher {
public:
    explicit LocalSearcher(const InvertedIndex& index) : index_(&index) {}
    std::vector<SearchHit> search(const std::string& query, int k) const override {
        return index_->search(query, k);
    }

private:
    const InvertedIndex* index_;
};

// Client for a remote retrieval service: POST {query, k} -> {hits: [{id, score}]}.
class RemoteSearcher : public Searcher {
public:
    explicit RemoteSearcher(std::string base_url, int timeout_seconds = 30)
        : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

    std::vector<SearchHit> search(const std::string& query, int k) const override {
        if (tokenize(query).empty()) throw EmptyQuery("query tokenizes to nothing: \"" + query + "\"");
        httplib::Client client(base_url_);
        client.set_read_timeout(timeout_seconds_, 0);
        nlohmann::json body = {{"query", query}, {"k", k}};
        auto res = client.Post("/search", body.dump(), "application/json");
        if (!res) throw TransportError("retriever unreachable: " + base_url_);
        if (res->status != 200) throw ProtocolError("retriever HTTP " + std::to_string(res->status));
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("hits")) throw ProtocolError("malformed retriever response");
        std::vector<SearchHit> hits;
        for (const auto& h : j["hits"]) {
            hits.push_back({h.at("id").get<std::string>(), h.value("score", 0.0)});
        }
        return hits;
    }

private:
    std::string base_url_;
    int timeout_seconds_;
};

// Rerank scoring contract: one score per document, higher = more relevant,
// pure given (query, doc).
class Reranker {
public:
    virtual ~Reranker() = default;
    virtual std::vector<double> score(const std::string& query,
                                      const std::vector<Document>& docs) const = 0;
};

// Default offline reranker: token-set Jaccard between the query and the
// document's title + text.
class JaccardReranker : public Reranker {
public:
    std::vector<double> score(const std::string& query,
                              const std::vector<Document>& docs) const override {
        auto query_tokens = tokenize(query);
        std::set<std::string> qset(query_tokens.begin(), query_tokens.end());
        std::vector<double> scores;
        scores.reserve(docs.size());
        for (const auto& doc : docs) {
            auto doc_tokens = tokenize(doc.title + " " + doc.text);
            std::set<std::string> dset(doc_tokens.begin(), doc_tokens.end());
            if (qset.empty() || dset.empty()) {
                scores.push_back(0.0);
                continue;
            }
            size_t inter = 0;
            for (const auto& t : qset) inter += dset.count(t);
            double uni = static_cast<double>(qset.size() + dset.size() - inter);
            scores.push_back(uni == 0.0 ? 0.0 : static_cast<double>(inter) / uni);
        }
        return scores;
    }
};

// Client for a remote reranker service:
// POST {query, documents: [...]} -> {scores: [...]}.
class RemoteReranker : public Reranker {
public:
    explicit RemoteReranker(std::string base_url, int timeout_seconds = 30)
        : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

    std::vector<double> score(const std::string& query,
                              const std::vector<Document>& docs) const override {
        httplib::Client client(base_url_);
        client.set_read_timeout(timeout_seconds_, 0);
        nlohmann::json documents = nlohmann::json::array();
        for (const auto& d : docs) documents.push_back(d.title + " " + d.text);
        nlohmann::json body = {{"query", query}, {"documents", documents}};
        auto res = client.Post("/rerank", body.dump(), "application/json");
        if (!res) throw TransportError("reranker unreachable: " + base_url_);
        if (res->status != 200) throw ProtocolError("reranker HTTP " + std::to_string(res->status));
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("scores")) throw ProtocolError("malformed reranker response");
        auto scores = j["scores"].get<std::vector<double>>();
        if (scores.size() != docs.size()) throw ProtocolError("reranker returned wrong score count");
        return scores;
    }

private:
    std::string base_url_;
    int timeout_seconds_;
};

struct EntityRetrieval {
    std::string canonical;
    std::vector<Document> recalled;  // deduplicated union, first-retrieval order
    std::vector<Document> reranked;  // length <= rerank_k, score desc, id asc on ties
};

struct RetrievalBundle {
    int iteration = 0;
    std::vector<EntityRetrieval> per_entity;  // plan order

    const EntityRetrieval* find(std::string_view canonical) const {
        for (const auto& e : per_entity) {
            if (iequals(e.canonical, canonical)) return &e;
        }
        return nullptr;
    }
};

// Per-query top-recall_k sets, unioned and deduplicated by doc_id in
// first-retrieval order. Queries that tokenize to nothing are skipped; if
// every query is empty the plan item is unusable.
inline std::vector<Document> recall_for_entity(const Searcher& searcher, const InvertedIndex& store,
                                               const EntityKey& entity,
                                               const std::vector<std::string>& queries,
                                               int recall_k) {
    if (queries.empty()) throw EmptyPlan("entity \"" + entity.canonical + "\" has no queries");
    std::vector<Document> recalled;
    std::unordered_set<std::string> seen;
    bool any_usable = false;
    for (const auto& query : queries) {
        if (tokenize(query).empty()) continue;
        any_usable = true;
        for (const auto& hit : searcher.search(query, recall_k)) {
            if (!seen.insert(hit.id).second) continue;
            Document doc = store.require(hit.id);
            doc.score = hit.score;
            recalled.push_back(std::move(doc));
        }
    }
    if (!any_usable) {
        throw EmptyPlan("entity \"" + entity.canonical + "\" has only empty queries");
    }
    return recalled;
}

// D_e = Rerank(e, D̂_e): scores every recalled document against the entity's
// canonical string and keeps the top rerank_k.
inline std::vector<Document> rerank_entity(const Reranker& reranker, const EntityKey& entity,
                                           std::vector<Document> recalled, int rerank_k) {
    if (rerank_k < 1) throw Error("rerank_k must be >= 1");
    if (recalled.empty()) return {};
    auto scores = reranker.score(entity.canonical, recalled);
    for (size_t i = 0; i < recalled.size(); ++i) recalled[i].score = scores[i];
    std::sort(recalled.begin(), recalled.end(), [](const Document& a, const Document& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (static_cast<int>(recalled.size()) > rerank_k) recalled.resize(rerank_k);
    return recalled;
}

}  // namespace dualrag
