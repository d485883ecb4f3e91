#include <catch2/catch_amalgamated.hpp>

#include "dualrag/core.hpp"

using namespace dualrag;

namespace {

KnowledgeFragment frag(const std::string& entity, const std::string& text, int iteration,
                       std::vector<std::string> sources = {}) {
    KnowledgeFragment f;
    f.entity = make_entity(entity);
    f.text = text;
    f.iteration = iteration;
    f.source_doc_ids = std::move(sources);
    return f;
}

}  // namespace

TEST_CASE("make_entity seeds the alias set with the canonical name") {
    EntityKey key = make_entity("Ada Lovelace");
    CHECK(key.canonical == "Ada Lovelace");
    REQUIRE(key.aliases.size() == 1);
    CHECK(key.aliases[0] == "Ada Lovelace");
    CHECK(key.matches("ada lovelace"));
    CHECK(key.matches("ADA LOVELACE"));
    CHECK_FALSE(key.matches("Ada"));
}

TEST_CASE("merge_fragment appends entities in first-appearance order") {
    KnowledgeOutline outline;
    outline = merge_fragment(std::move(outline), frag("Beta", "b1", 1));
    outline = merge_fragment(std::move(outline), frag("Alpha", "a1", 1));
    outline = merge_fragment(std::move(outline), frag("Beta", "b2", 2));

    REQUIRE(outline.size() == 2);
    CHECK(outline.entity_names() == std::vector<std::string>{"Beta", "Alpha"});
    const OutlineEntry* beta = outline.find("beta");
    REQUIRE(beta != nullptr);
    REQUIRE(beta->fragments.size() == 2);
    CHECK(beta->fragments[0].text == "b1");
    CHECK(beta->fragments[1].text == "b2");
}

TEST_CASE("merge_fragment is pure") {
    KnowledgeOutline base = merge_fragment({}, frag("X", "x1", 1));
    KnowledgeOutline grown = merge_fragment(base, frag("X", "x2", 2));
    CHECK(base.find("X")->fragments.size() == 1);
    CHECK(grown.find("X")->fragments.size() == 2);
}

TEST_CASE("merge_fragment rejects a second fragment for the same entity and iteration") {
    KnowledgeOutline outline = merge_fragment({}, frag("X", "x1", 2));
    CHECK_THROWS_AS(merge_fragment(outline, frag("X", "again", 2)), DuplicateIteration);
    CHECK_THROWS_AS(merge_fragment(outline, frag("x", "case folded", 2)), DuplicateIteration);
}

TEST_CASE("merge_fragment rejects iteration regression within an entity") {
    KnowledgeOutline outline = merge_fragment({}, frag("X", "x3", 3));
    CHECK_THROWS_AS(merge_fragment(outline, frag("X", "late", 2)), Error);
    // A different entity may still start at an earlier iteration.
    CHECK_NOTHROW(merge_fragment(outline, frag("Y", "y1", 1)));
}

TEST_CASE("merge_fragment rejects degenerate fragments") {
    CHECK_THROWS_AS(merge_fragment({}, frag("X", "text", 0)), Error);
    CHECK_THROWS_AS(merge_fragment({}, frag("X", "   ", 1)), Error);
}

TEST_CASE("fragments addressed to any alias land under the prior canonical") {
    KnowledgeOutline outline = merge_fragment({}, frag("United States", "us1", 1));
    outline = link_synonym(std::move(outline), make_entity("USA"), "United States");

    outline = merge_fragment(std::move(outline), frag("usa", "us2", 2));
    REQUIRE(outline.size() == 1);
    const OutlineEntry* entry = outline.find("USA");
    REQUIRE(entry != nullptr);
    CHECK(entry->key.canonical == "United States");
    REQUIRE(entry->fragments.size() == 2);
    CHECK(entry->fragments[1].text == "us2");
}

TEST_CASE("link_synonym is idempotent and alias-transitive") {
    KnowledgeOutline outline = merge_fragment({}, frag("NYC", "n1", 1));
    outline = link_synonym(std::move(outline), make_entity("New York City"), "NYC");
    outline = link_synonym(std::move(outline), make_entity("New York City"), "NYC");
    REQUIRE(outline.size() == 1);
    CHECK(outline.entries[0].key.aliases.size() == 2);

    // Linking through an alias, not just the canonical.
    outline = link_synonym(std::move(outline), make_entity("Big Apple"), "new york city");
    CHECK(outline.entries[0].key.aliases.size() == 3);
    CHECK(outline.find("BIG APPLE") != nullptr);
}

TEST_CASE("link_synonym to an unknown entity throws") {
    KnowledgeOutline outline = merge_fragment({}, frag("A", "a", 1));
    CHECK_THROWS_AS(link_synonym(std::move(outline), make_entity("B"), "Missing"), UnknownEntity);
}

TEST_CASE("render_outline formats sections deterministically") {
    KnowledgeOutline outline;
    CHECK(render_outline(outline) == kEmptyOutlineText);

    outline = merge_fragment(std::move(outline), frag("Alpha", "first fact", 1));
    outline = merge_fragment(std::move(outline), frag("Beta", "other fact", 1));
    outline = merge_fragment(std::move(outline), frag("Alpha", "second fact", 2));

    std::string expected =
        "## Alpha\n- first fact\n- second fact\n\n## Beta\n- other fact";
    CHECK(render_outline(outline) == expected);
    std::string again = render_outline(outline);
    CHECK(again == expected);
}

TEST_CASE("reasoning history validity requires contiguous iterations from 1") {
    ReasoningHistory h;
    CHECK(h.valid());
    CHECK(h.next_iteration() == 1);

    h.steps.push_back({1, "think", true});
    h.steps.push_back({2, "more", false});
    CHECK(h.valid());
    CHECK(h.next_iteration() == 3);

    h.steps.push_back({4, "gap", false});
    CHECK_FALSE(h.valid());
}

TEST_CASE("run config validation") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.max_iterations == 5);
    CHECK(cfg.recall_k == 50);
    CHECK(cfg.rerank_k == 10);
    CHECK(cfg.temperature == 0.0);

    RunConfig bad = cfg;
    bad.max_iterations = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.rerank_k = 60;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.recall_k = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.temperature = -0.1;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("entity JSON round trip preserves identity") {
    EntityKey key = make_entity("United States");
    key.aliases.push_back("USA");
    key.aliases.push_back("US");

    EntityKey back = entity_from_json(entity_to_json(key));
    CHECK(back.canonical == "United States");
    CHECK(back.matches("usa"));
    CHECK(back.matches("us"));
    CHECK(back.matches("united states"));
}

TEST_CASE("outline JSON round trip preserves structure and render") {
    KnowledgeOutline outline = merge_fragment({}, frag("Alpha", "a1", 1, {"d1", "d2"}));
    outline = merge_fragment(std::move(outline), frag("Beta", "b1", 1, {"d3"}));
    outline = link_synonym(std::move(outline), make_entity("A."), "Alpha");
    outline = merge_fragment(std::move(outline), frag("A.", "a2", 2));

    KnowledgeOutline back = outline_from_json(outline_to_json(outline));
    CHECK(back.entity_names() == outline.entity_names());
    CHECK(render_outline(back) == render_outline(outline));
    const OutlineEntry* alpha = back.find("a.");
    REQUIRE(alpha != nullptr);
    REQUIRE(alpha->fragments.size() == 2);
    CHECK(alpha->fragments[0].source_doc_ids == std::vector<std::string>{"d1", "d2"});
}

TEST_CASE("text helpers") {
    CHECK(lower("MiXeD 123!") == "mixed 123!");
    CHECK(ascii_lower('Q') == 'q');
    CHECK(trim("  padded\t\n") == "padded");
    CHECK(iequals("HeLLo", "hello"));
    CHECK_FALSE(iequals("hello", "hell"));
    CHECK(ends_with("abcdef", "def"));
    CHECK_FALSE(ends_with("def", "abcdef"));
    CHECK(collapse_ws("a\t b \n c") == "a b c");
    CHECK(split_lines("a\nb\r\nc") == std::vector<std::string>{"a", "b", "c"});
    CHECK(join({"x", "y"}, ", ") == "x, y");
}
