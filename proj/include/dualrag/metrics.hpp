#pragma once

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dualrag/core.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/llm.hpp"
#include "dualrag/orchestrator.hpp"
#include "dualrag/prompts.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

// SQuAD-style answer normalization: lowercase, strip ASCII punctuation,
// remove the articles a/an/the, collapse whitespace.
inline std::string normalize_answer(const std::string& s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::ispunct(u)) continue;
        lowered += ascii_lower(c);
    }
    std::vector<std::string> kept;
    for (const auto& token : split(lowered, " \t\r\n")) {
        if (token == "a" || token == "an" || token == "the") continue;
        kept.push_back(token);
    }
    return join(kept, " ");
}

inline int exact_match(const std::string& pred, const std::vector<std::string>& golds) {
    std::string p = normalize_answer(pred);
    for (const auto& gold : golds) {
        if (p == normalize_answer(gold)) return 1;
    }
    return 0;
}

// 1 iff some normalized gold appears as a contiguous substring of the
// normalized prediction.
inline int acc_contain(const std::string& pred, const std::vector<std::string>& golds) {
    std::string p = normalize_answer(pred);
    for (const auto& gold : golds) {
        std::string g = normalize_answer(gold);
        if (g.empty() ? p.empty() : p.find(g) != std::string::npos) return 1;
    }
    return 0;
}

namespace detail {

inline double f1_from_counts(double overlap, double pred_n, double gold_n) {
    if (overlap <= 0.0) return 0.0;
    double precision = overlap / pred_n;
    double recall = overlap / gold_n;
    return 2.0 * precision * recall / (precision + recall);
}

inline double multiset_overlap(const std::vector<std::string>& a,
                               const std::vector<std::string>& b) {
    std::map<std::string, int> counts;
    for (const auto& t : a) ++counts[t];
    int overlap = 0;
    for (const auto& t : b) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return overlap;
}

}  // namespace detail

// Token-level F1, max over golds, on normalized whitespace tokens. Both
// sides empty scores 1, exactly one side empty scores 0.
inline double token_f1(const std::string& pred, const std::vector<std::string>& golds) {
    auto pred_tokens = split(normalize_answer(pred), " ");
    double best = 0.0;
    for (const auto& gold : golds) {
        auto gold_tokens = split(normalize_answer(gold), " ");
        double score;
        if (pred_tokens.empty() && gold_tokens.empty()) {
            score = 1.0;
        } else if (pred_tokens.empty() || gold_tokens.empty()) {
            score = 0.0;
        } else {
            score = detail::f1_from_counts(detail::multiset_overlap(pred_tokens, gold_tokens),
                                           static_cast<double>(pred_tokens.size()),
                                           static_cast<double>(gold_tokens.size()));
        }
        best = std::max(best, score);
    }
    return best;
}

struct RougeScores {
    double rouge_2 = 0.0;
    double rouge_l = 0.0;
};

// ROUGE keeps articles: lowercase, strip ASCII punctuation, collapse
// whitespace only. Article removal would change sequence overlap of prose,
// which is what ROUGE measures.
inline std::string normalize_rouge(const std::string& s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::ispunct(u)) continue;
        lowered += ascii_lower(c);
    }
    return join(split(lowered, " \t\r\n"), " ");
}

namespace detail {

inline std::vector<std::string> bigrams(const std::vector<std::string>& tokens) {
    std::vector<std::string> grams;
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        grams.push_back(tokens[i] + "\x1f" + tokens[i + 1]);
    }
    return grams;
}

inline size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

// ROUGE-2 (bigram overlap F1) and ROUGE-L (LCS F1) on normalized tokens, max
// over golds. When either side has no units (no bigrams for ROUGE-2, no
// tokens for ROUGE-L), the score is 1 iff the normalized strings are equal.
inline RougeScores rouge_scores(const std::string& pred, const std::vector<std::string>& golds) {
    std::string pnorm = normalize_rouge(pred);
    auto pred_tokens = split(pnorm, " ");
    auto pred_bigrams = detail::bigrams(pred_tokens);
    RougeScores best;
    for (const auto& gold : golds) {
        std::string gnorm = normalize_rouge(gold);
        auto gold_tokens = split(gnorm, " ");
        auto gold_bigrams = detail::bigrams(gold_tokens);

        double r2;
        if (pred_bigrams.empty() || gold_bigrams.empty()) {
            r2 = pnorm == gnorm ? 1.0 : 0.0;
        } else {
            r2 = detail::f1_from_counts(detail::multiset_overlap(pred_bigrams, gold_bigrams),
                                        static_cast<double>(pred_bigrams.size()),
                                        static_cast<double>(gold_bigrams.size()));
        }
        double rl;
        if (pred_tokens.empty() || gold_tokens.empty()) {
            rl = pnorm == gnorm ? 1.0 : 0.0;
        } else {
            rl = detail::f1_from_counts(
                static_cast<double>(detail::lcs_length(pred_tokens, gold_tokens)),
                static_cast<double>(pred_tokens.size()), static_cast<double>(gold_tokens.size()));
        }
        best.rouge_2 = std::max(best.rouge_2, r2);
        best.rouge_l = std::max(best.rouge_l, rl);
    }
    return best;
}

// Model-judged accuracy: asks whether the prediction implies the gold answer
// and maps the reply's first token, Yes or No, to 1/0. One reprompt, then
// JudgeParseError.
inline int acc_judge(LlmSession& session, const Question& question, const std::string& pred) {
    SlotMap slots = {{"question", question.text},
                     {"prediction", pred},
                     {"golden_answer", join(question.gold_answers, "; ")}};
    std::string tag = make_tag(Role::judge, question.id, 1);
    auto parse = [](const std::string& raw) -> int {
        auto tokens = split(lower(trim(raw)), " \t\r\n.,:;!");
        if (!tokens.empty()) {
            if (tokens[0] == "yes") return 1;
            if (tokens[0] == "no") return 0;
        }
        throw JudgeParseError("judge reply is not Yes or No: " + trim(raw));
    };
    std::string prompt = session.prompts->render(Role::judge, slots);
    std::string raw = session.complete_rendered(prompt, tag);
    try {
        return parse(raw);
    } catch (const JudgeParseError&) {
        raw = session.complete_rendered(prompt + "\n\nAnswer with exactly one word: Yes or No.",
                                        tag);
        return parse(raw);
    }
}

struct EvalRow {
    std::string id;
    std::string answer;
    int em = 0;
    int acc = 0;
    double f1 = 0.0;
    bool failed = false;
    std::optional<int> acc_judge;
    std::optional<double> rouge_2;
    std::optional<double> rouge_l;
};

struct EvalReport {
    std::vector<EvalRow> per_question;
    // Aggregates are arithmetic means of the per-question values, times 100.
    double em = 0.0;
    double acc = 0.0;
    double f1 = 0.0;
    std::optional<double> acc_judge;
    std::optional<double> rouge_2;
    std::optional<double> rouge_l;
    int failed_count = 0;
};

struct EvalOptions {
    bool with_rouge = false;
    LlmSession* judge = nullptr;  // enables the judged-accuracy column
};

// Scores each trajectory against its question's gold answers. Failed
// trajectories score zero on every metric and are counted separately.
inline EvalReport evaluate(const std::vector<TrajectoryRecord>& records,
                           const EvalOptions& options = {}) {
    EvalReport report;
    double em_sum = 0, acc_sum = 0, f1_sum = 0, judge_sum = 0, r2_sum = 0, rl_sum = 0;
    for (const auto& record : records) {
        EvalRow row;
        row.id = record.question.id;
        row.answer = record.answer.answer_text;
        row.failed = record.failed;
        if (record.failed) {
            ++report.failed_count;
            if (options.judge) row.acc_judge = 0;
            if (options.with_rouge) {
                row.rouge_2 = 0.0;
                row.rouge_l = 0.0;
            }
        } else {
            const auto& golds = record.question.gold_answers;
            row.em = exact_match(row.answer, golds);
            row.acc = acc_contain(row.answer, golds);
            row.f1 = token_f1(row.answer, golds);
            if (options.judge) row.acc_judge = acc_judge(*options.judge, record.question, row.answer);
            if (options.with_rouge) {
                RougeScores r = rouge_scores(row.answer, golds);
                row.rouge_2 = r.rouge_2;
                row.rouge_l = r.rouge_l;
            }
        }
        em_sum += row.em;
        acc_sum += row.acc;
        f1_sum += row.f1;
        if (row.acc_judge) judge_sum += *row.acc_judge;
        if (row.rouge_2) r2_sum += *row.rouge_2;
        if (row.rouge_l) rl_sum += *row.rouge_l;
        report.per_question.push_back(std::move(row));
    }
    double n = static_cast<double>(report.per_question.size());
    if (n > 0) {
        report.em = 100.0 * em_sum / n;
        report.acc = 100.0 * acc_sum / n;
        report.f1 = 100.0 * f1_sum / n;
        if (options.judge) report.acc_judge = 100.0 * judge_sum / n;
        if (options.with_rouge) {
            report.rouge_2 = 100.0 * r2_sum / n;
            report.rouge_l = 100.0 * rl_sum / n;
        }
    }
    return report;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

inline std::string fmt_real(double v) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    std::string s = os.str();
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

}  // namespace detail

inline std::string eval_report_csv(const EvalReport& report) {
    bool judged = report.acc_judge.has_value();
    bool rouged = report.rouge_2.has_value();
    std::string csv = "id,answer,em,acc,f1";
    if (judged) csv += ",acc_judge";
    if (rouged) csv += ",rouge_2,rouge_l";
    csv += ",failed\n";
    for (const auto& row : report.per_question) {
        csv += detail::csv_escape(row.id) + "," + detail::csv_escape(row.answer) + "," +
               std::to_string(row.em) + "," + std::to_string(row.acc) + "," +
               detail::fmt_real(row.f1);
        if (judged) csv += "," + std::to_string(row.acc_judge.value_or(0));
        if (rouged) {
            csv += "," + detail::fmt_real(row.rouge_2.value_or(0.0)) + "," +
                   detail::fmt_real(row.rouge_l.value_or(0.0));
        }
        csv += row.failed ? ",1\n" : ",0\n";
    }
    return csv;
}

inline nlohmann::json eval_report_json(const EvalReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : report.per_question) {
        nlohmann::json r = {{"id", row.id},   {"answer", row.answer}, {"em", row.em},
                            {"acc", row.acc}, {"f1", row.f1},         {"failed", row.failed}};
        if (row.acc_judge) r["acc_judge"] = *row.acc_judge;
        if (row.rouge_2) r["rouge_2"] = *row.rouge_2;
        if (row.rouge_l) r["rouge_l"] = *row.rouge_l;
        rows.push_back(std::move(r));
    }
    nlohmann::json aggregates = {{"em", report.em},
                                 {"acc", report.acc},
                                 {"f1", report.f1},
                                 {"failed_count", report.failed_count}};
    if (report.acc_judge) aggregates["acc_judge"] = *report.acc_judge;
    if (report.rouge_2) aggregates["rouge_2"] = *report.rouge_2;
    if (report.rouge_l) aggregates["rouge_l"] = *report.rouge_l;
    return {{"per_question", std::move(rows)}, {"aggregates", std::move(aggregates)}};
}

}  // namespace dualrag
