#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "dualrag/core.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/text.hpp"

namespace dualrag {

enum class Role { reasoner, entity_identifier, knowledge_summarizer, answerer, judge };

inline const char* role_name(Role role) {
    switch (role) {
        case Role::reasoner: return "reasoner";
        case Role::entity_identifier: return "entity_identifier";
        case Role::knowledge_summarizer: return "knowledge_summarizer";
        case Role::answerer: return "answerer";
        case Role::judge: return "judge";
    }
    return "unknown";
}

// Reasoner terminal markers. The engine requires every Reasoner reply to end
// with exactly one of these.
inline constexpr const char* kRetrievalMarker = "Reason interrupt for retrieval";
inline constexpr const char* kCompletedMarker = "Reasoning completed";
inline constexpr const char* kIrrelevantSentinel = "IRRELEVANT";
inline constexpr const char* kSourcesPrefix = "SOURCES:";
inline constexpr const char* kQuestionSectionHeading = "## Question currently being solved";

struct PromptTemplate {
    Role role = Role::reasoner;
    std::string body;  // text with {slot} markers
};

using SlotMap = std::map<std::string, std::string>;

// Substitutes {name} markers with bound values in a single pass; inserted
// values are never re-scanned, so braces in values stay literal.
inline std::string render_prompt(const PromptTemplate& tmpl, const SlotMap& bindings) {
    const std::string& body = tmpl.body;
    std::string out;
    out.reserve(body.size());
    size_t pos = 0;
    while (pos < body.size()) {
        size_t open = body.find('{', pos);
        if (open == std::string::npos) {
            out.append(body, pos, body.size() - pos);
            break;
        }
        size_t close = body.find('}', open + 1);
        if (close == std::string::npos) {
            out.append(body, pos, body.size() - pos);
            break;
        }
        std::string name = body.substr(open + 1, close - open - 1);
        bool slot_like = !name.empty();
        for (char c : name) {
            if (!(std::islower(static_cast<unsigned char>(c)) || c == '_')) { slot_like = false; break; }
        }
        if (!slot_like) {
            out.append(body, pos, close + 1 - pos);
            pos = close + 1;
            continue;
        }
        auto it = bindings.find(name);
        if (it == bindings.end()) throw MissingSlot(name);
        out.append(body, pos, open - pos);
        out += it->second;
        pos = close + 1;
    }
    return out;
}

namespace prompt_text {

inline constexpr const char* kReasonerBackground = R"(## Background Information

Currently, there is a knowledge question-answering problem that needs to be solved, and retrieval tools can be used to find relevant knowledge to assist you in solving the problem.

For knowledge question-answering tasks, it is important to have a grasp of knowledge, which is organized by entities, with each entity having a segment of knowledge.)";

inline const std::string kReasoner = std::string(kReasonerBackground) + R"(

## Task Description

Your current task is to reason based on the knowledge that has been retrieved.

When reasoning, you must strictly adhere to the knowledge that has been retrieved to prevent errors.

There are two conditions for concluding your reasoning:

- You have obtained the answer you were seeking, at which point you can conclude your reasoning.
- You find that you cannot obtain the answer you want based solely on the retrieved knowledge and need to further expand your knowledge through retrieval tools.

## Note

- You must reason step by step carefully to ensure the rigor of the reasoning process.
- The knowledge used must be strictly based on the retrieved knowledge, and speculation is prohibited.
- End your reply with "Reason interrupt for retrieval" if you need more knowledge, or with "Reasoning completed" once you have obtained the answer.

## Example

{few_shots}

## Question currently being solved

Knowledge:
{knowledge}

Question: {question}

Reasoning history:
{reasoning_history})";

inline const std::string kEntityIdentifier = R"(## Background

Currently, there is a knowledge question that needs to be solved, and a retrieval tool can be used to find relevant knowledge to assist you in resolving the issue.

For knowledge question tasks, it is important to have a grasp of the knowledge, which is organized by entities, each of which has a segment of knowledge.

## Task Description

Your current task is to identify what additional knowledge is needed based on the given question, the existing knowledge, and the previous reasoning history, and to generate retrieval keywords.

### Identify What Additional Knowledge is Needed

A knowledge point is a key piece of information necessary to solve the current problem. It often revolves around a noun-like entity, which can be a person, location, organization, event, or proper noun.

To help you identify the required knowledge, I will extract a list of entities from previous reasoning processes. These entities can help you pinpoint key knowledge points. They may not all be accurate, but they are generally helpful for guidance.

Known entities: {entity}

### Generate Retrieval Keywords

- The generated retrieval keywords will be used by a retrieval tool. The keywords should meet the requirements of this tool to ensure relevant documents are retrieved.
- For the same knowledge point, it may be necessary to retrieve multiple sub-knowledge points. Ensure that the generated retrieval keywords cover all the required sub-knowledge points. However, focus only on the knowledge points relevant to the current question and avoid excessive retrieval.
- For a single sub-knowledge point, to improve the recall of relevant documents, you may need multiple retrieval keywords with the same meaning but different expressions. However, for similar-meaning keywords, retain at most two variations.

### Output Format

- One line per knowledge point: (<n>) <Entity>: [<keyword 1>, <keyword 2>, ...]
- If an entity is the same as a known entity under a different name, add a line: SAME-AS: <new name> = <known name>

## Example

{few_shots}

## Question currently being solved

Knowledge:
{knowledge}

Question: {question}

Reasoning history:
{reasoning_history})";

inline const std::string kKnowledgeSummarizer = R"(## Task Description

You are assisting in solving a QA problem, and you have gathered relevant information using retrieval tools.

Your task is to read and organize the retrieved documents, filtering out irrelevant content while summarizing information pertinent to the current problem. When assessing the usefulness of the content, consider that some information may not appear directly related to the final answer but could be essential for multi-hop reasoning. Even if content does not lead to an immediate conclusion, it may provide necessary context or intermediary insights that help progress toward the answer.

## Note

- Summarize the content directly without adding personal commentary or interpretations. Do not infer or speculate about missing information.
- Preserve the original wording for important content and ensure that all entity names remain consistent with the original documents.

## Output Format

- End your summary with a line "SOURCES: <title or id>, <title or id>, ..." naming the documents the summary draws on.
- If none of the retrieved documents are relevant to the current problem, reply with the single word "IRRELEVANT".

## Example

{few_shots}

## Question currently being solved

Question: {question}

Reasoning history:
{reasoning_history}

Retrieval - {entity} - {retrieved_docs})";

inline const std::string kAnswerer = std::string(kReasonerBackground) + R"(

## Task Description

Your current task is to give the final answer to the question, using the retrieved knowledge and your reasoning history.

## Note

- Answer with a short phrase only.
- Do not explain the answer or restate the question.

## Example

{few_shots}

## Question currently being solved

Knowledge:
{knowledge}

Question: {question}

Reasoning history:
{reasoning_history})";

inline constexpr const char* kJudge = R"(In the following task, you are given a Question, a model Prediction for the Question, and a Ground-truth Answer to the Question. You should decide whether the model Prediction implies the Ground-truth Answer.

Note: For some questions, the given standard answer may not be the unique correct answer, but a possible answer. In this case, if the model's response is close in meaning to the standard answer, or contains the standard answer, then the model's response can be considered correct.

Question: {question}

Prediction: {prediction}

Ground-truth Answer: {golden_answer}

Does the Prediction imply the Ground-truth Answer? Output Yes or No:)";

inline constexpr const char* kReasonerShots = R"(### Example 1

Knowledge:
No knowledge collected yet.

Question: Which film has the director who was born later, El Extraño Viaje or Love In Pawn?

Reasoning history:
(no reasoning steps yet)

Reply:
To determine which film has the director who was born later, I need to find the birth years of the directors of El Extraño Viaje and Love In Pawn. Reason interrupt for retrieval

### Example 2

Knowledge:
## Fernando Fernán Gómez
- Fernando Fernández Gómez, better known as Fernando Fernán-Gómez, was born on 28 August 1921.

## Charles Saunders
- Charles Joel Saunders (8 April 1904 – April 1997) was an English film director and screenwriter.

Question: Which film has the director who was born later, El Extraño Viaje or Love In Pawn?

Reasoning history:
Step 1: To determine which film has the director who was born later, I need to find the birth years of the directors of El Extraño Viaje and Love In Pawn.

Reply:
From the known knowledge, Fernando Fernán Gómez was born on 28 August 1921, and Charles Saunders was born on 8 April 1904. Since 1921 is later than 1904, the director born later is Fernando Fernán Gómez, who directed El Extraño Viaje. Reasoning completed)";

inline constexpr const char* kEntityIdentifierShots = R"(### Example 1

Reasoning history:
Step 1: To determine which film has the director who was born later, I need to find the birth years of the directors of El Extraño Viaje and Love In Pawn.

Reply:
(1) El Extraño Viaje: [El Extraño Viaje director, El Extraño Viaje director birth year]
(2) Love In Pawn: [Love In Pawn director, When was the director of Love In Pawn born]

### Example 2

Reasoning history:
Step 1: To determine which film has the director who was born later, I need to find the birth years of the directors of El Extraño Viaje and Love In Pawn.
Step 2: I need to find the birth years of Fernando Fernán Gómez, the director of El Extraño Viaje, and Charles Saunders, the director of Love In Pawn.

Reply:
(1) Fernando Fernán Gómez: [Fernando Fernán Gómez, Fernando Fernán Gómez birth year]
(2) Charles Saunders: [Charles Saunders birth year])";

inline constexpr const char* kKnowledgeSummarizerShots = R"(### Example 1

Retrieval - El Extraño Viaje - (1) El extraño viaje: El extraño viaje is a 1964 Spanish black drama film directed by Fernando Fernán Gómez. (2) A Lover in Pawn: A Lover in Pawn is a 1920 Swedish silent drama film directed by Victor Sjöström.

Reply:
El extraño viaje is a 1964 Spanish black drama film directed by Fernando Fernán Gómez.
SOURCES: El extraño viaje

### Example 2

Retrieval - Barbara Kelly - (1) La vida alrededor: La vida alrededor is a 1959 Spanish comedy film.

Reply:
IRRELEVANT)";

inline constexpr const char* kAnswererShots = R"(### Example 1

Question: Which film has the director who was born later, El Extraño Viaje or Love In Pawn?

Reply:
El extraño viaje

### Example 2

Question: When was the director of Love In Pawn born?

Reply:
8 April 1904)";

}  // namespace prompt_text

// Owns the role templates and their few-shot blocks. Built-in bodies mirror
// the shipped assets under assets/prompts and assets/few_shots; load_dir
// overrides either from editable files.
class PromptLibrary {
public:
    static PromptLibrary builtin() {
        PromptLibrary lib;
        lib.set_body(Role::reasoner, prompt_text::kReasoner);
        lib.set_body(Role::entity_identifier, prompt_text::kEntityIdentifier);
        lib.set_body(Role::knowledge_summarizer, prompt_text::kKnowledgeSummarizer);
        lib.set_body(Role::answerer, prompt_text::kAnswerer);
        lib.set_body(Role::judge, prompt_text::kJudge);
        lib.set_few_shots(Role::reasoner, prompt_text::kReasonerShots);
        lib.set_few_shots(Role::entity_identifier, prompt_text::kEntityIdentifierShots);
        lib.set_few_shots(Role::knowledge_summarizer, prompt_text::kKnowledgeSummarizerShots);
        lib.set_few_shots(Role::answerer, prompt_text::kAnswererShots);
        return lib;
    }

    void set_body(Role role, std::string body) { templates_[role] = PromptTemplate{role, std::move(body)}; }
    void set_few_shots(Role role, std::string shots) { few_shots_[role] = std::move(shots); }

    const PromptTemplate& prompt(Role role) const {
        auto it = templates_.find(role);
        if (it == templates_.end()) throw Error(std::string("no template for role ") + role_name(role));
        return it->second;
    }

    // Renders a role prompt, auto-binding the role's few-shot block unless
    // the caller bound one explicitly.
    std::string render(Role role, SlotMap slots) const {
        auto shots = few_shots_.find(role);
        if (shots != few_shots_.end() && !slots.count("few_shots")) {
            slots["few_shots"] = shots->second;
        }
        return render_prompt(prompt(role), slots);
    }

    // Overrides bodies/shots from <dir>/prompts/<role>.txt and
    // <dir>/few_shots/<role>.txt; files that do not exist keep the built-in.
    void load_dir(const std::filesystem::path& dir) {
        for (Role role : {Role::reasoner, Role::entity_identifier, Role::knowledge_summarizer,
                          Role::answerer, Role::judge}) {
            auto body = read_if_exists(dir / "prompts" / (std::string(role_name(role)) + ".txt"));
            if (body) set_body(role, std::move(*body));
            auto shots = read_if_exists(dir / "few_shots" / (std::string(role_name(role)) + ".txt"));
            if (shots) set_few_shots(role, std::move(*shots));
        }
    }

private:
    static std::optional<std::string> read_if_exists(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) return std::nullopt;
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) content.pop_back();
        return content;
    }

    std::map<Role, PromptTemplate> templates_;
    std::map<Role, std::string> few_shots_;
};

inline std::string render_reasoning_history(const ReasoningHistory& history) {
    if (history.steps.empty()) return "(no reasoning steps yet)";
    std::vector<std::string> lines;
    lines.reserve(history.steps.size());
    for (const auto& step : history.steps) {
        lines.push_back("Step " + std::to_string(step.iteration) + ": " + step.rationale);
    }
    return join(lines, "\n");
}

inline std::string render_documents(const std::vector<Document>& docs) {
    std::vector<std::string> lines;
    lines.reserve(docs.size());
    for (size_t i = 0; i < docs.size(); ++i) {
        lines.push_back("(" + std::to_string(i + 1) + ") " + docs[i].title + ": " + docs[i].text);
    }
    return join(lines, "\n");
}

}  // namespace dualrag
