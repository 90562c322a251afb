#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/corpus.hpp"

namespace mwp {

enum class TagKind { Num, Name, ObjS, ObjP, Mod };

std::string_view to_string(TagKind k);

/// A template slot such as [NUM1] or [OBJp2]. OBJs and OBJp with the same
/// index name one object in its singular and plural form.
struct Tag {
    TagKind kind = TagKind::Num;
    int index = 1;

    std::string str() const; // "[NUM1]"
    /// Index namespace: "NUM", "NAME", "OBJ" or "MOD".
    std::string_view family() const;
    /// Family plus index, e.g. "OBJ2"; the lexicon key for this slot.
    std::string key() const;
    friend auto operator<=>(const Tag&, const Tag&) = default;
};

/// Parses the text between brackets, e.g. "OBJp1". nullopt if malformed.
std::optional<Tag> parse_tag(std::string_view inner);

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Literal text interleaved with tags.
struct TaggedText {
    struct Piece {
        std::string text;
        std::optional<Tag> tag;
    };
    std::vector<Piece> pieces;

    std::set<Tag> tags() const;
};

/// Throws TemplateError on an unterminated or malformed bracket.
TaggedText parse_tagged(std::string_view text);

struct TagUse {
    std::size_t body = 0;
    std::size_t question = 0;
    std::size_t equation = 0;
};

struct VariationTemplate {
    std::string id;
    std::optional<std::string> ptype;
    TaggedText body;
    TaggedText question;
    std::string equation_text;
    Expr equation; // slot k-1 stands for [NUMk]
    std::vector<std::string> variation_chain; // latest first
    std::optional<std::string> seed_id;

    /// Every tag with its occurrence counts per section.
    std::map<Tag, TagUse> uses() const;
};

struct TemplateSource {
    std::string id;
    std::string body;
    std::string question;
    std::string equation;
    std::vector<std::string> chain;
    std::optional<std::string> seed_id;
    std::optional<std::string> ptype;
};

/// Throws TemplateError on malformed tags, an unparseable equation, a
/// non-NUM tag in the equation, or an equation tag missing from the text.
VariationTemplate parse_template(const TemplateSource& source);

/// Blocks separated by "---" lines, each with ID:, TYPE:, BODY:, QUESTION:,
/// EQUATION:, CHAIN: and SEED_ID: sections. A section runs until the next
/// key; '#' starts a comment line. Missing ids become "<stem>-<n>".
std::vector<VariationTemplate> parse_template_file(std::string_view content, std::string_view stem = "template");
std::vector<VariationTemplate> load_templates(const std::filesystem::path& path_or_dir);

/// Renders a template back into the file format.
std::string format_template(const VariationTemplate& t);

// ---------------------------------------------------------------------------
// Lexicon

struct NumRange {
    long long min = 2;
    long long max = 99;
};

class LexiconError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Surface forms keyed by tag. Keys are a family ("NAME", "MOD", "NUM") for a
/// pool shared by every index, or family plus index ("NAME2", "OBJ1") for
/// one slot. Objects have no shared pool. A "scoped" object maps a template
/// id or seed id to entries that take precedence for that template.
class Lexicon {
public:
    struct Entries {
        std::map<std::string, std::vector<std::string>> words;
        std::map<std::string, std::vector<std::pair<std::string, std::string>>> objects;
        std::map<std::string, NumRange> ranges;
    };

    Entries global;
    std::map<std::string, Entries> scoped;

    static Lexicon from_json(const nlohmann::json& j);
    static Lexicon load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    /// Candidate words for a NAME or MOD tag; nullptr if none.
    const std::vector<std::string>* words(const VariationTemplate& t, const Tag& tag) const;
    const std::vector<std::pair<std::string, std::string>>* objects(const VariationTemplate& t, const Tag& tag) const;
    /// Falls back to NumRange{} when no range is configured.
    NumRange range(const VariationTemplate& t, const Tag& tag) const;
    /// True when the NUM range comes from the built-in default.
    bool default_range(const VariationTemplate& t, const Tag& tag) const;

private:
    std::vector<const Entries*> scopes(const VariationTemplate& t) const;
};

// ---------------------------------------------------------------------------
// Validation

struct Diagnostic {
    enum class Severity { Warning, Error };
    Severity severity = Severity::Error;
    std::string template_id;
    std::string code; // e.g. "missing-lexicon"
    std::string message;

    std::string str() const;
};

/// Index gaps, lexicon coverage, pool sizes, chain labels and order,
/// operator cap and seed id. Never throws.
std::vector<Diagnostic> validate_template(const VariationTemplate& t, const Lexicon& lex,
                                          std::size_t max_operators = 2);

/// Per-template checks plus duplicate ids and, where a template's seed is
/// in the set, that newly introduced tags continue the seed's numbering
/// (which replaces the index-gap check for that template).
std::vector<Diagnostic> validate_templates(const std::vector<VariationTemplate>& templates, const Lexicon& lex,
                                           std::size_t max_operators = 2);

bool has_errors(const std::vector<Diagnostic>& diagnostics);

/// Arranges applied variation labels into a stored chain: canonical names,
/// latest first, following the guided authoring order. Throws
/// std::invalid_argument on an unknown label.
std::vector<std::string> guided_chain(const std::vector<std::string>& applied);

/// True when every label is known and the chain, read from earliest to
/// latest, never steps back in the guided order.
bool chain_in_guided_order(const std::vector<std::string>& chain);

// ---------------------------------------------------------------------------
// Instantiation

struct Constraints {
    bool positive_answer = true;
    bool integral_division = true;
    bool positive_intermediates = true;
    /// Distinct values keep the slot alignment of the rendered text unambiguous.
    bool distinct_numbers = true;
    int attempts = 1000;
};

nlohmann::json to_json(const Constraints& c);

class InstantiationError : public std::runtime_error {
public:
    InstantiationError(const std::string& what, std::string constraint);
    /// The constraint rejected most often, or the lexicon problem.
    const std::string& constraint() const { return constraint_; }

private:
    std::string constraint_;
};

/// Fixed surface choices, used to reproduce a specific instance.
struct Assignment {
    std::map<std::string, std::string> words;                         // "NAME1" -> "Beth"
    std::map<std::string, std::pair<std::string, std::string>> objects; // "OBJ1" -> (crayon, crayons)
    std::map<int, long long> numbers;                                 // 1 -> 4
};

/// Renders the template under an assignment and builds the problem through
/// ingest-grade alignment. Throws TemplateError on a missing assignment.
Problem render(const VariationTemplate& t, const Assignment& a, std::string id);

/// Samples an assignment satisfying `constraints` and renders it.
Problem instantiate(const VariationTemplate& t, const Lexicon& lex, const Constraints& constraints, std::uint64_t seed,
                    std::string id = "");

struct GenerationOptions {
    std::size_t per_template = 50;
    std::uint64_t seed = 1;
    Constraints constraints;
    std::size_t max_operators = 2;
    std::size_t jobs = 1;
    std::string name = "generated";
};

struct GenerationFailure {
    std::string template_id;
    std::optional<std::size_t> instance; // nullopt when the whole template was skipped
    std::string constraint;
    std::string message;
};

struct GenerationResult {
    Corpus corpus;
    std::vector<GenerationFailure> failures;
};

/// Instantiates every template `per_template` times with a generator seeded
/// from (seed, template id); problem ids are "<template id>-<k>". Failures
/// are collected per template and generation continues. Throws
/// std::invalid_argument on duplicate template ids.
GenerationResult generate(const std::vector<VariationTemplate>& templates, const Lexicon& lex,
                          const GenerationOptions& options);

nlohmann::json generation_report(const GenerationResult& r, const std::vector<VariationTemplate>& templates,
                                 const Lexicon& lex, const GenerationOptions& options);

} // namespace mwp
