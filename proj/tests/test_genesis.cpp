#include <doctest.h>

#include <sstream>

#include "mwp/folds.hpp"
#include "mwp/genesis.hpp"
#include "mwp/variations.hpp"

using namespace mwp;
using nlohmann::json;

namespace {

const TemplateSource kBase{
    .id = "base",
    .body = "[NAME1] has [NUM1] packs of [OBJp1] . Each pack has [NUM2] [OBJp1] in it . She also has [NUM3] extra [OBJp1] .",
    .question = "How many [OBJp1] does [NAME1] have altogether ?",
    .equation = "[NUM1]*[NUM2]+[NUM3]",
};

Lexicon base_lexicon() {
    return Lexicon::from_json(json::parse(R"json({
        "NAME": ["Beth", "Ann", "Mia"],
        "MOD": ["small", "large"],
        "OBJ1": [["crayon", "crayons"], ["pencil", "pencils"]]
    })json"));
}

std::filesystem::path data_dir() { return std::filesystem::path(MWP_SOURCE_DIR) / "data"; }

bool has_code(const std::vector<Diagnostic>& d, std::string_view code) {
    return std::any_of(d.begin(), d.end(), [&](const Diagnostic& x) { return x.code == code; });
}

} // namespace

TEST_CASE("tags parse and render") {
    for (auto text : {"NUM1", "NAME12", "OBJs3", "OBJp1", "MOD2"}) {
        auto tag = parse_tag(text);
        REQUIRE(tag);
        CHECK(tag->str() == "[" + std::string(text) + "]");
    }
    CHECK(parse_tag("OBJp2")->key() == "OBJ2");
    CHECK(parse_tag("OBJs2")->key() == "OBJ2");
    for (auto bad : {"OBJq1", "NUM", "NUM0", "NUM01", "num1", "NUM1a", "OBJ1", ""}) CHECK_FALSE(parse_tag(bad));
    CHECK_THROWS_AS(parse_tagged("[OBJq1] apples"), TemplateError);
    CHECK_THROWS_AS(parse_tagged("[NUM1 apples"), TemplateError);
    CHECK_THROWS_AS(parse_tagged("NUM1] apples"), TemplateError);
}

TEST_CASE("base example parses with its tag inventory") {
    const VariationTemplate t = parse_template(kBase);
    std::set<std::string> tags;
    for (const auto& [tag, use] : t.uses()) tags.insert(tag.str());
    CHECK(tags == std::set<std::string>{"[NAME1]", "[NUM1]", "[NUM2]", "[NUM3]", "[OBJp1]"});
    CHECK(t.uses().at(*parse_tag("OBJp1")).body == 3);
    CHECK(t.uses().at(*parse_tag("OBJp1")).question == 1);
    CHECK(t.uses().at(*parse_tag("NUM1")).equation == 1);
    CHECK(render_infix(t.equation) == "N1 * N2 + N3");
}

TEST_CASE("template parse errors") {
    TemplateSource s = kBase;
    s.equation = "[NUM4]+[NUM1]";
    CHECK_THROWS_AS(parse_template(s), TemplateError);
    s = kBase;
    s.body = "[OBJq1] are here .";
    CHECK_THROWS_AS(parse_template(s), TemplateError);
    s = kBase;
    s.equation = "[NUM1]*[NAME1]";
    CHECK_THROWS_AS(parse_template(s), TemplateError);
    s = kBase;
    s.equation = "[NUM1]*(";
    CHECK_THROWS_AS(parse_template(s), TemplateError);
    s = kBase;
    s.equation = "N1+[NUM2]";
    CHECK_THROWS_AS(parse_template(s), TemplateError);
    s = kBase;
    s.id = " ";
    CHECK_THROWS_AS(parse_template(s), TemplateError);
}

TEST_CASE("template validation") {
    const Lexicon lex = base_lexicon();
    VariationTemplate t = parse_template(kBase);
    CHECK(validate_template(t, lex).empty());

    TemplateSource s = kBase;
    s.question = "How many [OBJp2] does [NAME1] have ?";
    auto d = validate_template(parse_template(s), lex);
    CHECK(has_code(d, "missing-lexicon"));
    CHECK(has_errors(d));

    s = kBase;
    s.chain = {"Invert Operation"};
    CHECK(validate_template(parse_template(s), lex).empty());
    s.chain = {"Flip the story"};
    CHECK(has_code(validate_template(parse_template(s), lex), "unknown-variation"));
    s.chain = {"Invert Operation", "Add irrelevant information"}; // latest first, but invert comes earlier
    d = validate_template(parse_template(s), lex);
    CHECK(has_code(d, "chain-order"));
    CHECK_FALSE(has_errors(d));

    s = kBase;
    s.equation = "[NUM1]*[NUM2]+[NUM3]-[NUM1]";
    CHECK(has_code(validate_template(parse_template(s), lex), "operator-cap"));

    s = kBase;
    s.body += " [NAME3] watches .";
    CHECK(has_code(validate_template(parse_template(s), lex), "index-gap"));

    s = kBase;
    s.body += " [NAME2] , [NAME3] and [NAME4] watch .";
    CHECK(has_code(validate_template(parse_template(s), lex), "lexicon-too-small"));
}

TEST_CASE("new tags continue the seed's numbering") {
    const Lexicon lex = Lexicon::from_json(json::parse(R"json({
        "NAME": ["Beth", "Ann", "Mia"], "OBJ1": [["crayon", "crayons"]], "OBJ2": [["cup", "cups"]]
    })json"));
    VariationTemplate seed = parse_template(kBase);
    TemplateSource v = kBase;
    v.id = "v";
    v.seed_id = "base";
    v.body = "[NAME1] has some packs of [OBJp1] . Each pack has [NUM2] [OBJp1] . She has [NUM4] [OBJp1] in all .";
    v.question = "How many packs does [NAME1] have ?";
    v.equation = "[NUM4]/[NUM2]";
    v.chain = {"Invert Operation"};
    auto d = validate_templates({seed, parse_template(v)}, lex);
    CHECK_FALSE(has_errors(d));
    CHECK_FALSE(has_code(d, "index-gap"));

    v.body = "[NAME1] has some packs of [OBJp1] . Each pack has [NUM2] [OBJp1] . She has [NUM5] [OBJp1] in all .";
    v.equation = "[NUM5]/[NUM2]";
    CHECK(has_code(validate_templates({seed, parse_template(v)}, lex), "new-tag-index"));
    CHECK(has_code(validate_templates({seed, seed}, lex), "duplicate-id"));
}

TEST_CASE("guided chain order") {
    CHECK(guided_chain({"Add irrelevant information", "Invert", "Same Object, Different Structure"}) ==
          std::vector<std::string>{"Add irrelevant information", "Invert Operation",
                                   "Same Object, Different Structure"});
    CHECK(chain_in_guided_order({"Change order of phrases", "Change information", "Add relevant information"}));
    CHECK_FALSE(chain_in_guided_order({"Invert Operation", "Change order of objects"}));
    CHECK(chain_in_guided_order({}));
    CHECK_THROWS_AS(guided_chain({"nonsense"}), std::invalid_argument);
    // Any permutation of applied labels yields an ordered chain.
    std::vector<std::string> labels;
    for (const auto& v : variation_types()) labels.emplace_back(v.name);
    std::sort(labels.begin(), labels.end());
    do {
        CHECK(chain_in_guided_order(guided_chain({labels[0], labels[3], labels[6], labels[8]})));
    } while (std::next_permutation(labels.begin(), labels.begin() + 4));
}

TEST_CASE("rendering the base example") {
    const VariationTemplate t = parse_template(kBase);
    Assignment a;
    a.words["NAME1"] = "Beth";
    a.objects["OBJ1"] = {"crayon", "crayons"};
    a.numbers = {{1, 4}, {2, 10}, {3, 6}};
    const Problem p = render(t, a, "beth");
    CHECK(p.body_text == "Beth has 4 packs of crayons. Each pack has 10 crayons in it. She also has 6 extra crayons.");
    CHECK(p.question_text == "How many crayons does Beth have altogether?");
    CHECK(render_infix(p.equation) == "N1 * N2 + N3");
    CHECK(render_infix(p.literal_equation()) == "4 * 10 + 6");
    CHECK(p.answer == 46);
    CHECK(p.seed_id == "base");
    CHECK(check_problem(p).empty());

    a.numbers.erase(2);
    CHECK_THROWS_AS(render(t, a, "x"), TemplateError);
}

TEST_CASE("instantiation is deterministic and consistent") {
    const Lexicon lex = base_lexicon();
    const VariationTemplate t = parse_template(kBase);
    const Problem a = instantiate(t, lex, {}, 99, "x");
    const Problem b = instantiate(t, lex, {}, 99, "x");
    CHECK(problem_to_native_line(a) == problem_to_native_line(b));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Problem p = instantiate(t, lex, {}, seed, "p");
        CHECK(check_problem(p).empty());
        CHECK(evaluate(p.equation, p.number_values()) == p.answer);
        // Every [OBJp1] renders to the same plural, [NAME1] to the same name.
        const auto& tokens = p.body;
        const std::string object = tokens[5];
        CHECK((object == "crayons" || object == "pencils"));
        CHECK(std::count(tokens.begin(), tokens.end(), object) == 3);
        CHECK(p.question[2] == object);
        CHECK(p.question[4] == tokens[0]);
    }
}

TEST_CASE("division stays integral") {
    const Lexicon lex = base_lexicon();
    const VariationTemplate t =
        parse_template({.id = "div", .body = "[NAME1] shares [NUM1] [OBJp1] among [NUM2] friends .",
                        .question = "How many [OBJp1] does each friend get ?", .equation = "[NUM1]/[NUM2]"});
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const Problem p = instantiate(t, lex, {}, seed);
        CHECK(denominator(p.answer) == 1);
        CHECK(p.answer > 0);
    }
}

TEST_CASE("unsatisfiable constraints name the culprit") {
    Lexicon lex = base_lexicon();
    lex.global.ranges["NUM1"] = {2, 5};
    lex.global.ranges["NUM2"] = {10, 20};
    const VariationTemplate t =
        parse_template({.id = "neg", .body = "[NAME1] had [NUM1] [OBJp1] and lost [NUM2] .",
                        .question = "How many [OBJp1] are left ?", .equation = "[NUM1]-[NUM2]"});
    try {
        instantiate(t, lex, {}, 1);
        FAIL("expected an instantiation failure");
    } catch (const InstantiationError& e) {
        CHECK(e.constraint() == "positive-answer");
    }
    Constraints loose;
    loose.positive_answer = false;
    CHECK(instantiate(t, lex, loose, 1).answer < 0);

    Lexicon empty;
    CHECK_THROWS_AS(instantiate(t, empty, {}, 1), InstantiationError);
}

TEST_CASE("lexicon parsing") {
    CHECK_THROWS_AS(Lexicon::from_json(json::parse(R"({"OBJ": [["a", "b"]]})")), LexiconError);
    CHECK_THROWS_AS(Lexicon::from_json(json::parse(R"({"OBJ1": [["a"]]})")), LexiconError);
    CHECK_THROWS_AS(Lexicon::from_json(json::parse(R"({"NUM": {"min": 5, "max": 2}})")), LexiconError);
    CHECK_THROWS_AS(Lexicon::from_json(json::parse(R"({"COLOR": ["red"]})")), LexiconError);
    CHECK_THROWS_AS(Lexicon::from_json(json::parse(R"({"NAME": []})")), LexiconError);
    const Lexicon lex = Lexicon::from_json(json::parse(R"json({
        "NAME": ["A"], "NAME2": ["B"], "NUM3": {"min": 1, "max": 3},
        "scoped": {"t": {"NAME": ["C"]}}
    })json"));
    CHECK(Lexicon::from_json(lex.to_json()).to_json() == lex.to_json());
    VariationTemplate t;
    t.id = "t";
    CHECK(*lex.words(t, *parse_tag("NAME1")) == std::vector<std::string>{"C"});
    CHECK(*lex.words(t, *parse_tag("NAME2")) == std::vector<std::string>{"B"});
    t.id = "u";
    CHECK(*lex.words(t, *parse_tag("NAME1")) == std::vector<std::string>{"A"});
    CHECK(lex.range(t, *parse_tag("NUM3")).max == 3);
    CHECK(lex.default_range(t, *parse_tag("NUM1")));
    CHECK(lex.range(t, *parse_tag("NUM1")).min == 2);
}

TEST_CASE("template files") {
    const std::string text = R"(# comment
ID: a
BODY: [NAME1] has [NUM1] [OBJp1] .
  She buys [NUM2] more .
QUESTION: How many [OBJp1] now ?
EQUATION: [NUM1]+[NUM2]
CHAIN: Add relevant information, Same Object, Different Structure
SEED_ID: s
---
BODY: [NUM1] and [NUM2] .
QUESTION: Sum ?
EQUATION: [NUM1]+[NUM2]
)";
    const auto ts = parse_template_file(text, "file");
    REQUIRE(ts.size() == 2);
    CHECK(ts[0].id == "a");
    CHECK(ts[0].variation_chain ==
          std::vector<std::string>{"Add relevant information", "Same Object, Different Structure"});
    CHECK(ts[0].seed_id == "s");
    CHECK(ts[1].id == "file-2");
    const auto again = parse_template_file(format_template(ts[0]));
    CHECK(format_template(again[0]) == format_template(ts[0]));
    CHECK_THROWS_AS(parse_template_file("BODY: x\nQUESTION: y ?\n"), TemplateError);
    CHECK_THROWS_AS(parse_template_file("stray\nBODY: x\n"), TemplateError);
}

TEST_CASE("generation") {
    const Lexicon lex = base_lexicon();
    const VariationTemplate t = parse_template(kBase);
    CHECK(generate({t}, lex, {.per_template = 0}).corpus.empty());
    const auto r = generate({t}, lex, {.per_template = 7, .seed = 5});
    REQUIRE(r.corpus.size() == 7);
    CHECK(r.corpus.problems[6].id == "base-6");
    CHECK(r.failures.empty());
    CHECK_THROWS_AS(generate({t, t}, lex, {}), std::invalid_argument);

    TemplateSource big = kBase;
    big.id = "big";
    big.equation = "[NUM1]*[NUM2]+[NUM3]-[NUM1]";
    const auto capped = generate({parse_template(big), t}, lex, {.per_template = 3});
    CHECK(capped.corpus.size() == 3);
    REQUIRE(capped.failures.size() == 1);
    CHECK(capped.failures[0].constraint == "operator-cap");
    CHECK_FALSE(capped.failures[0].instance);
}

TEST_CASE("shipped templates generate 1000 valid problems reproducibly") {
    const auto templates = load_templates(data_dir() / "templates");
    const Lexicon lex = Lexicon::load(data_dir() / "lexicon.json");
    REQUIRE(templates.size() == 20);
    const auto diagnostics = validate_templates(templates, lex);
    for (const auto& d : diagnostics) INFO(d.str());
    CHECK(diagnostics.empty());

    GenerationOptions options{.per_template = 50, .seed = 2021};
    const auto a = generate(templates, lex, options);
    CHECK(a.failures.empty());
    REQUIRE(a.corpus.size() == 1000);
    for (const auto& p : a.corpus.problems) {
        CHECK(check_problem(p).empty());
        CHECK(operator_count(p.equation) <= 2);
        CHECK(evaluate(p.equation, p.number_values()) == p.answer);
        CHECK(p.seed_id);
    }
    options.jobs = 4;
    const auto b = generate(templates, lex, options);
    std::ostringstream sa, sb;
    write_native(sa, a.corpus);
    write_native(sb, b.corpus);
    CHECK(sa.str() == sb.str());

    const auto folds = make_folds(a.corpus, parse_fold_scheme("seed-grouped"));
    check_partition(folds, a.corpus.size());

    const json report = generation_report(a, templates, lex, options);
    CHECK(report["problems"] == 1000);
    CHECK(report["templates"].size() == 20);
    CHECK(report["templates"][0]["produced"] == 50);
}
