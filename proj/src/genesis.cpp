#include "mwp/genesis.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "mwp/rng.hpp"
#include "mwp/variations.hpp"

namespace mwp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tags

namespace {

struct KindPrefix {
    std::string_view prefix;
    TagKind kind;
};

// Longer prefixes first so "NAME" is not read as "NA" + garbage.
constexpr KindPrefix kPrefixes[] = {
    {"NAME", TagKind::Name}, {"OBJs", TagKind::ObjS}, {"OBJp", TagKind::ObjP},
    {"NUM", TagKind::Num},   {"MOD", TagKind::Mod},
};

constexpr std::string_view kFamilies[] = {"NUM", "NAME", "OBJ", "MOD"};

std::string_view family_of(TagKind k) {
    switch (k) {
        case TagKind::Num: return "NUM";
        case TagKind::Name: return "NAME";
        case TagKind::ObjS:
        case TagKind::ObjP: return "OBJ";
        case TagKind::Mod: return "MOD";
    }
    return "";
}

} // namespace

std::string_view to_string(TagKind k) {
    for (const auto& p : kPrefixes)
        if (p.kind == k) return p.prefix;
    return "";
}

std::string Tag::str() const { return "[" + std::string(to_string(kind)) + std::to_string(index) + "]"; }

std::string_view Tag::family() const { return family_of(kind); }

std::string Tag::key() const { return std::string(family()) + std::to_string(index); }

std::optional<Tag> parse_tag(std::string_view inner) {
    for (const auto& p : kPrefixes) {
        if (!inner.starts_with(p.prefix)) continue;
        const std::string_view digits = inner.substr(p.prefix.size());
        if (digits.empty() || digits.size() > 6 || digits.front() == '0') return std::nullopt;
        if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
            return std::nullopt;
        return Tag{p.kind, std::stoi(std::string(digits))};
    }
    return std::nullopt;
}

std::set<Tag> TaggedText::tags() const {
    std::set<Tag> out;
    for (const auto& p : pieces)
        if (p.tag) out.insert(*p.tag);
    return out;
}

TaggedText parse_tagged(std::string_view text) {
    TaggedText out;
    std::string literal;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == ']') throw TemplateError("unmatched ']' at offset " + std::to_string(i));
        if (c != '[') {
            literal += c;
            continue;
        }
        const auto close = text.find(']', i);
        if (close == std::string_view::npos) throw TemplateError("unterminated tag at offset " + std::to_string(i));
        const std::string_view inner = text.substr(i + 1, close - i - 1);
        auto tag = parse_tag(inner);
        if (!tag) throw TemplateError("malformed tag '[" + std::string(inner) + "]'");
        if (!literal.empty()) out.pieces.push_back({std::move(literal), std::nullopt});
        literal.clear();
        out.pieces.push_back({"", tag});
        i = close;
    }
    if (!literal.empty()) out.pieces.push_back({std::move(literal), std::nullopt});
    return out;
}

namespace {

std::string source_text(const TaggedText& t) {
    std::string out;
    for (const auto& p : t.pieces) out += p.tag ? p.tag->str() : p.text;
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Templates

std::map<Tag, TagUse> VariationTemplate::uses() const {
    std::map<Tag, TagUse> out;
    for (const auto& p : body.pieces)
        if (p.tag) ++out[*p.tag].body;
    for (const auto& p : question.pieces)
        if (p.tag) ++out[*p.tag].question;
    for (const auto& leaf : leaves(equation))
        if (leaf.is_slot()) ++out[Tag{TagKind::Num, static_cast<int>(leaf.slot_index()) + 1}].equation;
    return out;
}

VariationTemplate parse_template(const TemplateSource& source) {
    VariationTemplate t;
    t.id = trim(source.id);
    if (t.id.empty()) throw TemplateError("template without an id");
    auto context = [&](const std::string& what) { return TemplateError(t.id + ": " + what); };
    try {
        t.body = parse_tagged(trim(source.body));
        t.question = parse_tagged(trim(source.question));
    } catch (const TemplateError& e) {
        throw context(e.what());
    }
    if (t.question.pieces.empty()) throw context("empty question");

    t.equation_text = trim(source.equation);
    TaggedText eq;
    try {
        eq = parse_tagged(t.equation_text);
    } catch (const TemplateError& e) {
        throw context(std::string("equation: ") + e.what());
    }
    std::string infix;
    for (const auto& p : eq.pieces) {
        if (p.tag) {
            if (p.tag->kind != TagKind::Num) throw context("equation uses non-number tag " + p.tag->str());
            infix += " N" + std::to_string(p.tag->index) + " ";
            continue;
        }
        if (std::any_of(p.text.begin(), p.text.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); }))
            throw context("equation text '" + trim(p.text) + "' is neither a tag, a number nor an operator");
        infix += p.text;
    }
    try {
        t.equation = parse_infix(infix);
    } catch (const ParseError& e) {
        throw context(std::string("equation: ") + e.what());
    }
    const auto in_text = [&] {
        auto tags = t.body.tags();
        auto q = t.question.tags();
        tags.insert(q.begin(), q.end());
        return tags;
    }();
    for (const auto& tag : eq.tags())
        if (!in_text.contains(tag)) throw context("equation uses " + tag.str() + " which appears in neither body nor question");

    for (const auto& label : source.chain) {
        std::string l = trim(label);
        if (!l.empty()) t.variation_chain.push_back(std::move(l));
    }
    if (source.seed_id && !trim(*source.seed_id).empty()) t.seed_id = trim(*source.seed_id);
    if (source.ptype && !trim(*source.ptype).empty()) t.ptype = trim(*source.ptype);
    return t;
}

namespace {

constexpr std::string_view kKeys[] = {"ID", "TYPE", "BODY", "QUESTION", "EQUATION", "CHAIN", "SEED_ID"};

std::optional<std::pair<std::string, std::string>> section_start(const std::string& line) {
    for (auto key : kKeys) {
        if (line.size() > key.size() && line.starts_with(key) && line[key.size()] == ':')
            return std::pair{std::string(key), trim(std::string_view(line).substr(key.size() + 1))};
    }
    return std::nullopt;
}

} // namespace

std::vector<VariationTemplate> parse_template_file(std::string_view content, std::string_view stem) {
    std::vector<std::map<std::string, std::string>> blocks(1);
    std::vector<std::size_t> block_lines{1};
    std::string current;
    std::istringstream in{std::string(content)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string trimmed = trim(line);
        if (trimmed.starts_with('#')) continue;
        if (trimmed == "---") {
            blocks.emplace_back();
            block_lines.push_back(line_no + 1);
            current.clear();
            continue;
        }
        if (auto start = section_start(trimmed)) {
            current = start->first;
            auto& block = blocks.back();
            if (block.contains(current))
                throw TemplateError(std::string(stem) + ":" + std::to_string(line_no) + ": repeated " + current + ":");
            block[current] = start->second;
            continue;
        }
        if (trimmed.empty()) continue;
        if (current.empty())
            throw TemplateError(std::string(stem) + ":" + std::to_string(line_no) + ": text outside a section");
        auto& value = blocks.back()[current];
        if (!value.empty()) value += ' ';
        value += trimmed;
    }

    std::vector<VariationTemplate> out;
    std::size_t n = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& block = blocks[b];
        if (block.empty()) continue;
        ++n;
        const std::string where = std::string(stem) + ":" + std::to_string(block_lines[b]);
        for (auto key : {"BODY", "QUESTION", "EQUATION"})
            if (!block.contains(key)) throw TemplateError(where + ": missing " + key + ":");
        auto get = [&](const char* key) -> std::optional<std::string> {
            auto it = block.find(key);
            return it == block.end() ? std::nullopt : std::optional(it->second);
        };
        TemplateSource src;
        src.id = get("ID").value_or(std::string(stem) + "-" + std::to_string(n));
        src.body = *get("BODY");
        src.question = *get("QUESTION");
        src.equation = *get("EQUATION");
        if (auto chain = get("CHAIN")) src.chain = split_chain(*chain);
        src.seed_id = get("SEED_ID");
        src.ptype = get("TYPE");
        try {
            out.push_back(parse_template(src));
        } catch (const TemplateError& e) {
            throw TemplateError(where + ": " + e.what());
        }
    }
    return out;
}

std::vector<VariationTemplate> load_templates(const std::filesystem::path& path_or_dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (fs::is_directory(path_or_dir)) {
        for (const auto& entry : fs::directory_iterator(path_or_dir))
            if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw TemplateError("no .txt template files in " + path_or_dir.string());
    } else {
        files.push_back(path_or_dir);
    }
    std::vector<VariationTemplate> out;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw TemplateError("cannot read " + f.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        auto parsed = parse_template_file(buf.str(), f.stem().string());
        out.insert(out.end(), std::make_move_iterator(parsed.begin()), std::make_move_iterator(parsed.end()));
    }
    return out;
}

std::string format_template(const VariationTemplate& t) {
    std::string out = "ID: " + t.id + "\n";
    if (t.ptype) out += "TYPE: " + *t.ptype + "\n";
    out += "BODY: " + source_text(t.body) + "\n";
    out += "QUESTION: " + source_text(t.question) + "\n";
    out += "EQUATION: " + t.equation_text + "\n";
    if (!t.variation_chain.empty()) {
        out += "CHAIN: ";
        for (std::size_t i = 0; i < t.variation_chain.size(); ++i) out += (i ? ", " : "") + t.variation_chain[i];
        out += "\n";
    }
    if (t.seed_id) out += "SEED_ID: " + *t.seed_id + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Lexicon

namespace {

/// Splits "OBJ12" into ("OBJ", 12); index 0 for a bare family.
std::optional<std::pair<std::string, int>> split_key(const std::string& key) {
    for (auto family : kFamilies) {
        if (!key.starts_with(family)) continue;
        const std::string rest = key.substr(family.size());
        if (rest.empty()) return std::pair{std::string(family), 0};
        if (rest.front() == '0' || rest.size() > 6 ||
            !std::all_of(rest.begin(), rest.end(), [](char c) { return c >= '0' && c <= '9'; }))
            return std::nullopt;
        return std::pair{std::string(family), std::stoi(rest)};
    }
    return std::nullopt;
}

Lexicon::Entries entries_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw LexiconError(where + ": expected an object");
    Lexicon::Entries e;
    for (const auto& [key, value] : j.items()) {
        const std::string at = where + "." + key;
        auto parts = split_key(key);
        if (!parts) throw LexiconError(at + ": unknown key");
        const auto& [family, index] = *parts;
        if (family == "NUM") {
            if (!value.is_object() || !value.contains("min") || !value.contains("max") ||
                !value["min"].is_number_integer() || !value["max"].is_number_integer())
                throw LexiconError(at + ": expected {\"min\": int, \"max\": int}");
            NumRange r{value["min"].get<long long>(), value["max"].get<long long>()};
            if (r.min < 0) throw LexiconError(at + ": negative minimum");
            if (r.min > r.max) throw LexiconError(at + ": empty range");
            e.ranges[key] = r;
        } else if (family == "OBJ") {
            if (index == 0) throw LexiconError(at + ": objects need an index, e.g. OBJ1");
            if (!value.is_array() || value.empty()) throw LexiconError(at + ": expected a non-empty array");
            auto& list = e.objects[key];
            for (const auto& pair : value) {
                if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string() ||
                    pair[0].get<std::string>().empty() || pair[1].get<std::string>().empty())
                    throw LexiconError(at + ": each object needs [singular, plural]");
                list.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
            }
        } else {
            if (!value.is_array() || value.empty()) throw LexiconError(at + ": expected a non-empty array");
            auto& list = e.words[key];
            for (const auto& w : value) {
                if (!w.is_string() || w.get<std::string>().empty()) throw LexiconError(at + ": expected strings");
                list.push_back(w.get<std::string>());
            }
        }
    }
    return e;
}

json entries_to_json(const Lexicon::Entries& e) {
    json j = json::object();
    for (const auto& [k, v] : e.words) j[k] = v;
    for (const auto& [k, v] : e.objects) {
        json list = json::array();
        for (const auto& [s, p] : v) list.push_back({s, p});
        j[k] = std::move(list);
    }
    for (const auto& [k, r] : e.ranges) j[k] = {{"min", r.min}, {"max", r.max}};
    return j;
}

} // namespace

Lexicon Lexicon::from_json(const json& j) {
    if (!j.is_object()) throw LexiconError("lexicon: expected an object");
    Lexicon lex;
    json global = j;
    if (j.contains("scoped")) {
        global.erase("scoped");
        if (!j["scoped"].is_object()) throw LexiconError("lexicon.scoped: expected an object");
        for (const auto& [id, entries] : j["scoped"].items())
            lex.scoped[id] = entries_from_json(entries, "lexicon.scoped." + id);
    }
    lex.global = entries_from_json(global, "lexicon");
    return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LexiconError("cannot read " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw LexiconError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

json Lexicon::to_json() const {
    json j = entries_to_json(global);
    if (!scoped.empty()) {
        json s = json::object();
        for (const auto& [id, e] : scoped) s[id] = entries_to_json(e);
        j["scoped"] = std::move(s);
    }
    return j;
}

std::vector<const Lexicon::Entries*> Lexicon::scopes(const VariationTemplate& t) const {
    std::vector<const Entries*> out;
    if (auto it = scoped.find(t.id); it != scoped.end()) out.push_back(&it->second);
    if (t.seed_id && *t.seed_id != t.id)
        if (auto it = scoped.find(*t.seed_id); it != scoped.end()) out.push_back(&it->second);
    out.push_back(&global);
    return out;
}

const std::vector<std::string>* Lexicon::words(const VariationTemplate& t, const Tag& tag) const {
    const auto s = scopes(t);
    for (const std::string& key : {tag.key(), std::string(tag.family())})
        for (const auto* e : s)
            if (auto it = e->words.find(key); it != e->words.end()) return &it->second;
    return nullptr;
}

const std::vector<std::pair<std::string, std::string>>* Lexicon::objects(const VariationTemplate& t,
                                                                        const Tag& tag) const {
    for (const auto* e : scopes(t))
        if (auto it = e->objects.find(tag.key()); it != e->objects.end()) return &it->second;
    return nullptr;
}

NumRange Lexicon::range(const VariationTemplate& t, const Tag& tag) const {
    const auto s = scopes(t);
    for (const std::string& key : {tag.key(), std::string(tag.family())})
        for (const auto* e : s)
            if (auto it = e->ranges.find(key); it != e->ranges.end()) return it->second;
    return NumRange{};
}

bool Lexicon::default_range(const VariationTemplate& t, const Tag& tag) const {
    for (const auto* e : scopes(t))
        if (e->ranges.contains(tag.key()) || e->ranges.contains(std::string(tag.family()))) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Validation

std::string Diagnostic::str() const {
    return std::string(severity == Severity::Error ? "error" : "warning") + ": " + template_id + ": " + message +
           " [" + code + "]";
}

namespace {

std::map<std::string, std::set<int>> indices_by_family(const VariationTemplate& t) {
    std::map<std::string, std::set<int>> out;
    for (const auto& [tag, use] : t.uses()) out[std::string(tag.family())].insert(tag.index);
    return out;
}

} // namespace

std::vector<Diagnostic> validate_template(const VariationTemplate& t, const Lexicon& lex, std::size_t max_operators) {
    std::vector<Diagnostic> out;
    auto add = [&](Diagnostic::Severity s, std::string code, std::string message) {
        out.push_back({s, t.id, std::move(code), std::move(message)});
    };
    constexpr auto Error = Diagnostic::Severity::Error;
    constexpr auto Warning = Diagnostic::Severity::Warning;

    for (const auto& [family, indices] : indices_by_family(t)) {
        for (int i = 1; i < *indices.rbegin(); ++i)
            if (!indices.contains(i))
                add(Warning, "index-gap", family + " tags skip index " + std::to_string(i));
    }

    const auto uses = t.uses();
    std::map<const void*, std::pair<std::size_t, std::size_t>> pools; // pool -> (size, demand)
    std::set<std::string> seen_keys;
    for (const auto& [tag, use] : uses) {
        if (tag.kind == TagKind::Num) continue;
        if (!seen_keys.insert(tag.key()).second) continue; // OBJs/OBJp share one object
        if (tag.kind == TagKind::ObjS || tag.kind == TagKind::ObjP) {
            const auto* objs = lex.objects(t, tag);
            if (!objs) {
                add(Error, "missing-lexicon", "no lexicon entry " + tag.key() + " for " + tag.str());
                continue;
            }
            auto& [size, demand] = pools[objs];
            size = objs->size();
            ++demand;
        } else {
            const auto* words = lex.words(t, tag);
            if (!words) {
                add(Error, "missing-lexicon",
                    "no lexicon entry " + tag.key() + " or " + std::string(tag.family()) + " for " + tag.str());
                continue;
            }
            auto& [size, demand] = pools[words];
            size = words->size();
            ++demand;
        }
    }
    for (const auto& [pool, sd] : pools)
        if (sd.first < sd.second)
            add(Error, "lexicon-too-small",
                "a lexicon pool of " + std::to_string(sd.first) + " entries serves " + std::to_string(sd.second) +
                    " tags that need distinct surfaces");

    bool labels_known = true;
    for (const auto& label : t.variation_chain) {
        if (!find_variation(label)) {
            labels_known = false;
            add(Error, "unknown-variation", "chain label '" + label + "' is not a variation type");
        }
    }
    if (labels_known && !chain_in_guided_order(t.variation_chain))
        add(Warning, "chain-order", "chain does not follow the guided order (latest first)");

    if (operator_count(t.equation) > max_operators)
        add(Error, "operator-cap",
            "equation has " + std::to_string(operator_count(t.equation)) + " operators; the cap is " +
                std::to_string(max_operators));
    if (operator_count(t.equation) == 0) add(Warning, "no-operator", "equation has no operator");
    return out;
}

std::vector<Diagnostic> validate_templates(const std::vector<VariationTemplate>& templates, const Lexicon& lex,
                                           std::size_t max_operators) {
    std::vector<Diagnostic> out;
    std::map<std::string, const VariationTemplate*> by_id;
    for (const auto& t : templates) {
        if (!by_id.emplace(t.id, &t).second)
            out.push_back({Diagnostic::Severity::Error, t.id, "duplicate-id", "template id used more than once"});
    }
    for (const auto& t : templates) {
        auto d = validate_template(t, lex, max_operators);
        const bool has_seed = t.seed_id && *t.seed_id != t.id && by_id.contains(*t.seed_id);
        // A variation may drop seed tags; its numbering is checked against the seed instead.
        if (has_seed) std::erase_if(d, [](const Diagnostic& x) { return x.code == "index-gap"; });
        out.insert(out.end(), d.begin(), d.end());
        if (!has_seed) continue;
        auto it = by_id.find(*t.seed_id);
        const auto seed = indices_by_family(*it->second);
        for (const auto& [family, indices] : indices_by_family(t)) {
            const auto s = seed.find(family);
            const int highest = s == seed.end() ? 0 : *s->second.rbegin();
            int expected = highest + 1;
            for (int i : indices) {
                if (s != seed.end() && s->second.contains(i)) continue;
                if (i != expected)
                    out.push_back({Diagnostic::Severity::Error, t.id, "new-tag-index",
                                   "new " + family + " tag has index " + std::to_string(i) + ", expected " +
                                       std::to_string(expected) + " after seed " + *t.seed_id});
                expected = std::max(expected, i) + 1;
            }
        }
    }
    return out;
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
    return std::any_of(diagnostics.begin(), diagnostics.end(),
                       [](const Diagnostic& d) { return d.severity == Diagnostic::Severity::Error; });
}

std::vector<std::string> guided_chain(const std::vector<std::string>& applied) {
    std::vector<const VariationType*> types;
    for (const auto& label : applied) {
        const auto* v = find_variation(label);
        if (!v) throw std::invalid_argument("unknown variation '" + label + "'");
        types.push_back(v);
    }
    std::stable_sort(types.begin(), types.end(),
                     [](const VariationType* a, const VariationType* b) { return a->step < b->step; });
    std::vector<std::string> chain;
    for (auto it = types.rbegin(); it != types.rend(); ++it) chain.emplace_back((*it)->name);
    return chain;
}

bool chain_in_guided_order(const std::vector<std::string>& chain) {
    double last = 0;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        const auto* v = find_variation(*it);
        if (!v || v->step < last) return false;
        last = v->step;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Instantiation

json to_json(const Constraints& c) {
    return {{"positive_answer", c.positive_answer},
            {"integral_division", c.integral_division},
            {"positive_intermediates", c.positive_intermediates},
            {"distinct_numbers", c.distinct_numbers},
            {"attempts", c.attempts}};
}

InstantiationError::InstantiationError(const std::string& what, std::string constraint)
    : std::runtime_error(what), constraint_(std::move(constraint)) {}

namespace {

bool is_closing(char c) { return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':' || c == ')'; }

/// Joins template spacing such as "crayons ." into "crayons." and capitalizes
/// sentence starts.
std::string tidy(const std::string& text) {
    std::string out;
    bool space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space && !is_closing(c) && out.back() != '(') out += ' ';
        space = false;
        out += c;
    }
    bool start = true;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const char c = out[i];
        if (start && std::isalpha(static_cast<unsigned char>(c))) {
            out[i] = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            start = false;
        } else if (c == '.' || c == '?' || c == '!') {
            start = i + 1 < out.size() && out[i + 1] == ' ';
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            start = false;
        }
    }
    return out;
}

std::string render_text(const TaggedText& text, const Assignment& a, const std::string& id) {
    std::string out;
    for (const auto& p : text.pieces) {
        if (!p.tag) {
            out += p.text;
            continue;
        }
        const Tag& tag = *p.tag;
        const auto missing = [&] { return TemplateError(id + ": no value assigned to " + tag.str()); };
        switch (tag.kind) {
            case TagKind::Num: {
                auto it = a.numbers.find(tag.index);
                if (it == a.numbers.end()) throw missing();
                out += std::to_string(it->second);
                break;
            }
            case TagKind::ObjS:
            case TagKind::ObjP: {
                auto it = a.objects.find(tag.key());
                if (it == a.objects.end()) throw missing();
                out += tag.kind == TagKind::ObjS ? it->second.first : it->second.second;
                break;
            }
            default: {
                auto it = a.words.find(tag.key());
                if (it == a.words.end()) throw missing();
                out += it->second;
            }
        }
    }
    return tidy(out);
}

std::vector<Rational> bindings(const VariationTemplate& t, const std::map<int, long long>& numbers) {
    std::vector<Rational> out(slot_span(t.equation));
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto it = numbers.find(static_cast<int>(i) + 1);
        if (it != numbers.end()) out[i] = it->second;
    }
    return out;
}

/// Names of the constraints a candidate violates; empty when it passes.
std::vector<std::string_view> violations(const Expr& root, std::span<const Rational> values, const Constraints& c) {
    std::vector<std::string_view> out;
    std::function<std::optional<Rational>(const Expr&, bool)> walk = [&](const Expr& e,
                                                                         bool is_root) -> std::optional<Rational> {
        if (e.is_literal()) return e.value();
        if (e.is_slot()) return values[e.slot_index()];
        auto l = walk(e.lhs(), false);
        auto r = walk(e.rhs(), false);
        if (!l || !r) return std::nullopt;
        Rational v;
        switch (e.op()) {
            case Op::Add: v = *l + *r; break;
            case Op::Sub: v = *l - *r; break;
            case Op::Mul: v = *l * *r; break;
            case Op::Div:
                if (*r == 0) {
                    out.push_back("nonzero-divisor");
                    return std::nullopt;
                }
                v = *l / *r;
                if (c.integral_division && denominator(v) != 1) out.push_back("integral-division");
                break;
        }
        if (!is_root && c.positive_intermediates && v <= 0) out.push_back("positive-intermediates");
        return v;
    };
    auto answer = walk(root, true);
    if (answer && c.positive_answer && *answer <= 0) out.push_back("positive-answer");
    return out;
}

template <typename T>
const T& pick_distinct(const std::vector<T>& pool, std::set<std::string>& used, Rng& rng,
                       const std::function<std::string(const T&)>& surface, const VariationTemplate& t,
                       const Tag& tag) {
    std::vector<const T*> available;
    for (const auto& item : pool)
        if (!used.contains(surface(item))) available.push_back(&item);
    if (available.empty())
        throw InstantiationError(t.id + ": lexicon has no unused entry left for " + tag.str(), "lexicon-too-small");
    const T& chosen = *available[rng.uniform_int(0, available.size() - 1)];
    used.insert(surface(chosen));
    return chosen;
}

} // namespace

Problem render(const VariationTemplate& t, const Assignment& a, std::string id) {
    if (id.empty()) id = t.id;
    RawProblem raw;
    raw.id = id;
    raw.body = render_text(t.body, a, id);
    raw.question = render_text(t.question, a, id);
    for (const auto& leaf : leaves(t.equation))
        if (leaf.is_slot() && !a.numbers.contains(static_cast<int>(leaf.slot_index()) + 1))
            throw TemplateError(id + ": no value assigned to [NUM" + std::to_string(leaf.slot_index() + 1) + "]");
    const auto values = bindings(t, a.numbers);
    raw.equation = bind_slots(t.equation, values);
    raw.answer = evaluate(raw.equation);
    raw.ptype = t.ptype;
    raw.variation_chain = t.variation_chain;
    raw.seed_id = t.seed_id.value_or(t.id);
    return make_problem(raw);
}

Problem instantiate(const VariationTemplate& t, const Lexicon& lex, const Constraints& constraints, std::uint64_t seed,
                    std::string id) {
    Rng rng(seed);
    Assignment a;
    std::map<std::string, std::set<std::string>> used; // per family
    std::vector<Tag> nums;
    for (const auto& [tag, use] : t.uses()) {
        switch (tag.kind) {
            case TagKind::Num:
                nums.push_back(tag);
                break;
            case TagKind::ObjS:
            case TagKind::ObjP: {
                if (a.objects.contains(tag.key())) break;
                const auto* pool = lex.objects(t, tag);
                if (!pool) throw InstantiationError(t.id + ": no lexicon entry for " + tag.str(), "missing-lexicon");
                a.objects[tag.key()] = pick_distinct<std::pair<std::string, std::string>>(
                    *pool, used["OBJ"], rng, [](const auto& o) { return o.second; }, t, tag);
                break;
            }
            default: {
                const auto* pool = lex.words(t, tag);
                if (!pool) throw InstantiationError(t.id + ": no lexicon entry for " + tag.str(), "missing-lexicon");
                a.words[tag.key()] = pick_distinct<std::string>(
                    *pool, used[std::string(tag.family())], rng, [](const std::string& w) { return w; }, t, tag);
            }
        }
    }

    static constexpr std::string_view order[] = {"distinct-numbers", "nonzero-divisor", "integral-division",
                                                 "positive-intermediates", "positive-answer"};
    std::map<std::string_view, std::size_t> counts;
    for (int attempt = 0; attempt < constraints.attempts; ++attempt) {
        a.numbers.clear();
        std::set<long long> values;
        bool repeated = false;
        for (const auto& tag : nums) {
            const NumRange r = lex.range(t, tag);
            const long long v = r.min + static_cast<long long>(rng.uniform_int(0, static_cast<std::uint64_t>(r.max - r.min)));
            repeated |= !values.insert(v).second;
            a.numbers[tag.index] = v;
        }
        if (constraints.distinct_numbers && repeated) {
            ++counts["distinct-numbers"];
            continue;
        }
        const auto v = violations(t.equation, bindings(t, a.numbers), constraints);
        if (v.empty()) return render(t, a, id.empty() ? t.id : id);
        for (auto name : v) ++counts[name];
    }
    std::string_view worst = "attempts";
    std::size_t most = 0;
    for (auto name : order)
        if (counts[name] > most) {
            most = counts[name];
            worst = name;
        }
    throw InstantiationError(t.id + ": no sample satisfied the constraints in " + std::to_string(constraints.attempts) +
                                 " attempts; most often violated: " + std::string(worst),
                             std::string(worst));
}

GenerationResult generate(const std::vector<VariationTemplate>& templates, const Lexicon& lex,
                          const GenerationOptions& options) {
    std::set<std::string> ids;
    for (const auto& t : templates)
        if (!ids.insert(t.id).second) throw std::invalid_argument("duplicate template id '" + t.id + "'");

    struct Part {
        std::vector<Problem> problems;
        std::vector<GenerationFailure> failures;
    };
    std::vector<Part> parts(templates.size());

    auto run = [&](std::size_t i) {
        const VariationTemplate& t = templates[i];
        Part& part = parts[i];
        if (operator_count(t.equation) > options.max_operators) {
            part.failures.push_back({t.id, std::nullopt, "operator-cap",
                                     "equation has " + std::to_string(operator_count(t.equation)) + " operators"});
            return;
        }
        const std::uint64_t template_seed = derive_seed(options.seed, t.id);
        for (std::size_t k = 0; k < options.per_template; ++k) {
            const std::string id = t.id + "-" + std::to_string(k);
            try {
                Problem p = instantiate(t, lex, options.constraints, derive_seed(template_seed, std::to_string(k)), id);
                const auto problems = check_problem(p);
                if (!problems.empty()) {
                    std::string message;
                    for (const auto& m : problems) message += (message.empty() ? "" : "; ") + m;
                    part.failures.push_back({t.id, k, "invariants", message});
                    continue;
                }
                part.problems.push_back(std::move(p));
            } catch (const InstantiationError& e) {
                part.failures.push_back({t.id, k, e.constraint(), e.what()});
            } catch (const std::exception& e) {
                part.failures.push_back({t.id, k, "render", e.what()});
            }
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, templates.size()));
    if (jobs == 1) {
        for (std::size_t i = 0; i < templates.size(); ++i) run(i);
    } else {
        std::mutex mutex;
        std::size_t next = 0;
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                while (true) {
                    std::size_t i;
                    {
                        std::lock_guard lock(mutex);
                        if (next >= templates.size()) return;
                        i = next++;
                    }
                    run(i);
                }
            });
        }
        for (auto& w : workers) w.join();
    }

    GenerationResult result;
    result.corpus.name = options.name;
    result.corpus.provenance.source_format = "generated";
    for (auto& part : parts) {
        for (auto& p : part.problems) result.corpus.problems.push_back(std::move(p));
        for (auto& f : part.failures) result.failures.push_back(std::move(f));
    }
    if (!result.failures.empty())
        result.corpus.provenance.warnings.push_back(std::to_string(result.failures.size()) +
                                                    " instantiation failure(s)");
    return result;
}

json generation_report(const GenerationResult& r, const std::vector<VariationTemplate>& templates, const Lexicon& lex,
                       const GenerationOptions& options) {
    std::map<std::string, std::size_t> produced;
    for (const auto& p : r.corpus.problems) ++produced[p.id.substr(0, p.id.rfind('-'))];
    json list = json::array();
    for (const auto& t : templates) {
        json ranges = json::object();
        for (const auto& [tag, use] : t.uses()) {
            if (tag.kind != TagKind::Num) continue;
            const NumRange nr = lex.range(t, tag);
            ranges[tag.key()] = {{"min", nr.min}, {"max", nr.max}, {"default", lex.default_range(t, tag)}};
        }
        list.push_back({{"id", t.id},
                        {"seed_id", t.seed_id ? json(*t.seed_id) : json()},
                        {"chain", t.variation_chain},
                        {"equation", t.equation_text},
                        {"requested", options.per_template},
                        {"produced", produced[t.id]},
                        {"num_ranges", std::move(ranges)}});
    }
    json failures = json::array();
    for (const auto& f : r.failures)
        failures.push_back({{"template", f.template_id},
                            {"instance", f.instance ? json(*f.instance) : json()},
                            {"constraint", f.constraint},
                            {"message", f.message}});
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(fingerprint(r.corpus)));
    return {{"kind", "generation"},
            {"corpus", r.corpus.name},
            {"seed", options.seed},
            {"per_template", options.per_template},
            {"max_operators", options.max_operators},
            {"constraints", to_json(options.constraints)},
            {"default_num_range", {{"min", NumRange{}.min}, {"max", NumRange{}.max}}},
            {"problems", r.corpus.size()},
            {"fingerprint", digest},
            {"templates", std::move(list)},
            {"failures", std::move(failures)}};
}

} // namespace mwp
