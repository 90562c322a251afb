#include "mwp/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include "mwp/rng.hpp"
#include "mwp/variations.hpp"

namespace mwp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Problem / Corpus

std::vector<std::string> Problem::tokens() const {
    std::vector<std::string> all = body;
    all.insert(all.end(), question.begin(), question.end());
    return all;
}

std::vector<Rational> Problem::number_values() const {
    std::vector<Rational> values;
    values.reserve(numbers.size());
    for (const auto& m : numbers) values.push_back(m.value);
    return values;
}

std::string Problem::text() const {
    if (body_text.empty()) return question_text;
    if (question_text.empty()) return body_text;
    return body_text + " " + question_text;
}

Expr Problem::literal_equation() const { return bind_slots(equation, number_values()); }

const Problem* Corpus::find(std::string_view id) const {
    for (const auto& p : problems)
        if (p.id == id) return &p;
    return nullptr;
}

IngestError::IngestError(const std::string& what, std::vector<std::string> records)
    : std::runtime_error([&] {
          std::string msg = what;
          const std::size_t shown = std::min<std::size_t>(records.size(), 10);
          for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + records[i];
          if (records.size() > shown) msg += "\n  ... " + std::to_string(records.size() - shown) + " more";
          return msg;
      }()),
      records_(std::move(records)) {}

std::size_t ValidationReport::answer_mismatches() const {
    return static_cast<std::size_t>(
        std::count_if(problems.begin(), problems.end(), [](const ProblemCheck& c) { return !c.answer_agrees; }));
}

std::size_t ValidationReport::fully_aligned() const {
    return static_cast<std::size_t>(std::count_if(problems.begin(), problems.end(), [](const ProblemCheck& c) {
        return c.aligned == c.literals;
    }));
}

std::vector<std::string> ValidationReport::warnings() const {
    std::vector<std::string> out;
    for (const auto& c : problems)
        for (const auto& w : c.warnings) out.push_back(c.id + ": " + w);
    return out;
}

// ---------------------------------------------------------------------------
// Alignment and normalization

namespace {

Expr align_walk(const Expr& e, std::span<const NumberMention> numbers, std::vector<bool>& used, AlignResult& r) {
    if (e.is_binary()) {
        Expr lhs = align_walk(e.lhs(), numbers, used, r);
        Expr rhs = align_walk(e.rhs(), numbers, used, r);
        return Expr::binary(e.op(), lhs, rhs);
    }
    if (e.is_slot()) return e;
    ++r.literals;
    for (std::size_t i = 0; i < numbers.size(); ++i) {
        if (!used[i] && numbers[i].value == e.value()) {
            used[i] = true;
            ++r.aligned;
            return Expr::slot(i);
        }
    }
    return e;
}

bool within_tolerance(const Rational& value, const Rational& gold, const Rational& tol) {
    const Rational scale = abs(gold) > 1 ? abs(gold) : Rational(1);
    return abs(value - gold) <= tol * scale;
}

} // namespace

AlignResult align_equation(const Expr& literal_equation, std::span<const NumberMention> numbers) {
    AlignResult r;
    std::vector<bool> used(numbers.size(), false);
    r.equation = align_walk(literal_equation, numbers, used, r);
    return r;
}

Problem make_problem(const RawProblem& raw, ProblemCheck* check) {
    ProblemCheck local;
    ProblemCheck& c = check ? *check : local;
    c.id = raw.id;

    Problem p;
    p.id = raw.id;
    p.body_text = trim(raw.body);
    p.question_text = trim(raw.question);
    Tokenized body = tokenize(p.body_text);
    Tokenized question = tokenize(p.question_text);
    p.body = std::move(body.tokens);
    p.question = std::move(question.tokens);
    p.numbers = std::move(body.numbers);
    for (auto m : question.numbers) {
        m.token_index += p.body.size();
        p.numbers.push_back(std::move(m));
    }
    for (auto& w : body.warnings) c.warnings.push_back(std::move(w));
    for (auto& w : question.warnings) c.warnings.push_back(std::move(w));

    AlignResult aligned = align_equation(bind_slots(raw.equation, p.number_values()), p.numbers);
    p.equation = aligned.equation;
    c.literals = aligned.literals;
    c.aligned = aligned.aligned;
    if (aligned.aligned < aligned.literals)
        c.warnings.push_back(std::to_string(aligned.literals - aligned.aligned) +
                             " equation literal(s) not found in the text");

    p.answer = raw.answer;
    p.grade = raw.grade;
    p.ptype = raw.ptype;
    p.variation_chain = raw.variation_chain;
    p.seed_id = raw.seed_id;

    try {
        const Rational value = evaluate(p.equation, p.number_values());
        if (!within_tolerance(value, p.answer, ingest_tolerance())) {
            c.answer_agrees = false;
            c.warnings.push_back("equation evaluates to " + to_decimal_string(value) + " but the answer is " +
                                 to_decimal_string(p.answer));
        }
    } catch (const EvalError& e) {
        c.answer_agrees = false;
        c.warnings.push_back(std::string("equation does not evaluate: ") + e.what());
    }
    return p;
}

std::vector<std::string> check_problem(const Problem& p) {
    std::vector<std::string> issues;
    const auto tokens = p.tokens();
    if (tokens.size() != p.body.size() + p.question.size()) issues.push_back("token concatenation mismatch");
    for (std::size_t i = 0; i < p.numbers.size(); ++i) {
        const auto& m = p.numbers[i];
        if (m.token_index >= tokens.size()) {
            issues.push_back("number mention outside the token range");
            continue;
        }
        if (i > 0 && p.numbers[i - 1].token_index >= m.token_index) issues.push_back("numbers out of textual order");
        const auto v = token_number(tokens[m.token_index]);
        if (!v || *v != m.value) issues.push_back("number mention does not match its token");
    }
    if (slot_span(p.equation) > p.numbers.size()) issues.push_back("equation slot out of range");
    try {
        if (!within_tolerance(evaluate(p.equation, p.number_values()), p.answer, ingest_tolerance()))
            issues.push_back("equation does not evaluate to the answer");
    } catch (const EvalError& e) {
        issues.push_back(std::string("equation does not evaluate: ") + e.what());
    }
    return issues;
}

// ---------------------------------------------------------------------------
// Format readers

std::optional<SourceFormat> parse_source_format(std::string_view name) {
    if (name == "asdiv-xml") return SourceFormat::AsdivXml;
    if (name == "mawps-json") return SourceFormat::MawpsJson;
    if (name == "svamp-json") return SourceFormat::SvampJson;
    if (name == "native-json" || name == "native") return SourceFormat::NativeJson;
    return std::nullopt;
}

std::string_view to_string(SourceFormat f) {
    switch (f) {
        case SourceFormat::AsdivXml: return "asdiv-xml";
        case SourceFormat::MawpsJson: return "mawps-json";
        case SourceFormat::SvampJson: return "svamp-json";
        case SourceFormat::NativeJson: return "native-json";
    }
    return "unknown";
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::optional<Rational> json_rational(const json& v) {
    if (v.is_number_integer()) return Rational(v.get<long long>());
    if (v.is_number()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.15g", v.get<double>());
        return parse_decimal(buf);
    }
    if (v.is_string()) {
        return parse_exact(trim(v.get<std::string>()));
    }
    if (v.is_array() && v.size() == 1) return json_rational(v[0]);
    return std::nullopt;
}

/// Leading number of an annotation such as "9 (apples)".
std::optional<Rational> leading_number(std::string_view text) {
    const std::string t = trim(text);
    std::size_t end = 0;
    while (end < t.size() && (std::isdigit(static_cast<unsigned char>(t[end])) || t[end] == '.' ||
                              (end == 0 && t[end] == '-') || t[end] == ','))
        ++end;
    std::string digits = t.substr(0, end);
    digits.erase(std::remove(digits.begin(), digits.end(), ','), digits.end());
    if (end < t.size() && !std::isspace(static_cast<unsigned char>(t[end]))) return std::nullopt;
    return parse_decimal(digits);
}

const json* first_key(const json& obj, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
        auto it = obj.find(k);
        if (it != obj.end() && !it->is_null()) return &*it;
    }
    return nullptr;
}

std::string json_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return v.dump();
}

void read_metadata(const json& rec, RawProblem& raw) {
    if (const json* g = first_key(rec, {"grade", "Grade"})) {
        if (g->is_number_integer()) raw.grade = g->get<int>();
        else if (g->is_string()) {
            try {
                raw.grade = std::stoi(g->get<std::string>());
            } catch (const std::exception&) {
            }
        }
    }
    if (const json* t = first_key(rec, {"type", "Type", "ptype"})) raw.ptype = json_string(*t);
    if (const json* v = first_key(rec, {"variation_chain", "Variation", "Variations", "Variation Type"})) {
        if (v->is_array()) {
            for (const auto& item : *v) raw.variation_chain.push_back(trim(json_string(item)));
        } else {
            raw.variation_chain = split_chain(json_string(*v));
        }
    }
    if (const json* s = first_key(rec, {"seed_id", "Seed_ID", "SeedID", "Seed ID"})) raw.seed_id = json_string(*s);
}

struct RecordSink {
    IngestResult result;
    std::vector<std::string> errors;
    std::unordered_set<std::string> ids;

    void add(const RawProblem& raw) {
        if (!ids.insert(raw.id).second) {
            errors.push_back(raw.id + ": duplicate id");
            return;
        }
        ProblemCheck check;
        result.corpus.problems.push_back(make_problem(raw, &check));
        result.report.problems.push_back(std::move(check));
    }
};

void read_asdiv(std::string_view content, const IngestOptions& options, RecordSink& sink) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in{std::string(content)};
    try {
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        throw IngestError(std::string("malformed ASDiv XML: ") + e.what());
    }
    const pt::ptree* set = nullptr;
    for (const auto& top : tree) {
        if (auto ps = top.second.get_child_optional("ProblemSet")) set = &*ps;
    }
    if (!set) set = tree.get_child_optional("ProblemSet").get_ptr();
    if (!set) throw IngestError("ASDiv XML has no ProblemSet element");
    std::size_t dropped = 0;
    for (const auto& [tag, node] : *set) {
        if (tag != "Problem") continue;
        RawProblem raw;
        raw.id = node.get<std::string>("<xmlattr>.ID", "");
        const std::string label = raw.id.empty() ? "<problem without ID>" : raw.id;
        auto body = node.get_optional<std::string>("Body");
        auto question = node.get_optional<std::string>("Question");
        auto formula = node.get_optional<std::string>("Formula");
        auto answer_text = node.get_optional<std::string>("Answer");
        if (raw.id.empty() || !body || !question || !formula || !answer_text) {
            sink.errors.push_back(label + ": missing ID, Body, Question, Formula or Answer");
            continue;
        }
        raw.body = *body;
        raw.question = *question;
        if (auto grade = node.get_optional<int>("<xmlattr>.Grade")) raw.grade = *grade;
        if (auto type = node.get_optional<std::string>("Solution-Type")) raw.ptype = trim(*type);
        auto answer = leading_number(*answer_text);
        std::optional<Equation> eq;
        try {
            eq = parse_equation(*formula);
        } catch (const ParseError&) {
        }
        if (options.arithmetic_only) {
            bool keep = eq && answer;
            if (keep) {
                try {
                    keep = within_tolerance(evaluate(eq->expr), *answer, ingest_tolerance());
                } catch (const EvalError&) {
                    keep = false;
                }
            }
            if (!keep) {
                ++dropped;
                continue;
            }
        } else if (!eq || !answer) {
            sink.errors.push_back(label + ": formula or answer is not a single arithmetic expression (\"" +
                                  trim(*formula) + "\"); consider arithmetic-only ingestion");
            continue;
        }
        raw.equation = eq->expr;
        raw.answer = *answer;
        if (eq->stated_answer && !within_tolerance(*eq->stated_answer, *answer, ingest_tolerance()))
            sink.result.corpus.provenance.warnings.push_back(raw.id + ": formula states " +
                                                             to_decimal_string(*eq->stated_answer) +
                                                             " but the answer is " + to_decimal_string(*answer));
        sink.add(raw);
    }
    if (dropped)
        sink.result.corpus.provenance.warnings.push_back(std::to_string(dropped) +
                                                         " non-arithmetic problem(s) skipped");
}

json parse_json_or_throw(std::string_view content) {
    try {
        return json::parse(content);
    } catch (const json::parse_error& e) {
        throw IngestError(std::string("malformed JSON: ") + e.what());
    }
}

void read_mawps(std::string_view content, RecordSink& sink) {
    const json doc = parse_json_or_throw(content);
    if (!doc.is_array()) throw IngestError("MAWPS JSON must be an array of records");
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& rec = doc[i];
        RawProblem raw;
        const json* index = first_key(rec, {"iIndex", "id", "ID"});
        raw.id = index ? json_string(*index) : std::to_string(i);
        const json* text = first_key(rec, {"sQuestion"});
        const json* equations = first_key(rec, {"lEquations"});
        const json* solutions = first_key(rec, {"lSolutions"});
        if (!text || !equations || !solutions) {
            sink.errors.push_back(raw.id + ": missing sQuestion, lEquations or lSolutions");
            continue;
        }
        const json& eq_json = equations->is_array() ? (equations->size() == 1 ? (*equations)[0] : json()) : *equations;
        if (!eq_json.is_string()) {
            sink.errors.push_back(raw.id + ": expected exactly one equation");
            continue;
        }
        auto answer = json_rational(*solutions);
        if (!answer) {
            sink.errors.push_back(raw.id + ": expected exactly one numeric solution");
            continue;
        }
        try {
            raw.equation = parse_equation(eq_json.get<std::string>()).expr;
        } catch (const ParseError& e) {
            sink.errors.push_back(raw.id + ": " + e.what());
            continue;
        }
        BodyQuestion bq = split_body_question(text->get<std::string>());
        raw.body = bq.body;
        raw.question = bq.question;
        raw.answer = *answer;
        read_metadata(rec, raw);
        sink.add(raw);
        for (auto& w : bq.warnings) sink.result.report.problems.back().warnings.push_back(std::move(w));
    }
}

void read_svamp(std::string_view content, RecordSink& sink) {
    const json doc = parse_json_or_throw(content);
    if (!doc.is_array()) throw IngestError("SVAMP JSON must be an array of records");
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& rec = doc[i];
        RawProblem raw;
        const json* id = first_key(rec, {"ID", "id"});
        raw.id = id ? json_string(*id) : std::to_string(i);
        const json* body = first_key(rec, {"Body"});
        const json* question = first_key(rec, {"Question"});
        const json* equation = first_key(rec, {"Equation"});
        const json* answer_json = first_key(rec, {"Answer"});
        if (!body || !question || !equation || !answer_json) {
            sink.errors.push_back(raw.id + ": missing Body, Question, Equation or Answer");
            continue;
        }
        auto answer = json_rational(*answer_json);
        if (!answer) {
            sink.errors.push_back(raw.id + ": non-numeric Answer");
            continue;
        }
        try {
            raw.equation = parse_equation(json_string(*equation)).expr;
        } catch (const ParseError& e) {
            sink.errors.push_back(raw.id + ": " + e.what());
            continue;
        }
        raw.body = json_string(*body);
        raw.question = json_string(*question);
        raw.answer = *answer;
        read_metadata(rec, raw);
        sink.add(raw);
    }
}

void read_native(std::string_view content, RecordSink& sink) {
    std::istringstream in{std::string(content)};
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            sink.errors.push_back("line " + std::to_string(line_no) + ": malformed JSON");
            continue;
        }
        RawProblem raw;
        const json* id = first_key(rec, {"id"});
        const json* equation = first_key(rec, {"equation"});
        const json* answer_json = first_key(rec, {"answer"});
        raw.id = id ? json_string(*id) : "line " + std::to_string(line_no);
        if (!id || !equation || !answer_json || !rec.contains("body") || !rec.contains("question")) {
            sink.errors.push_back(raw.id + ": missing id, body, question, equation or answer");
            continue;
        }
        auto answer = json_rational(*answer_json);
        if (!answer) {
            sink.errors.push_back(raw.id + ": non-numeric answer");
            continue;
        }
        try {
            raw.equation = parse_equation(json_string(*equation)).expr;
        } catch (const ParseError& e) {
            sink.errors.push_back(raw.id + ": " + e.what());
            continue;
        }
        raw.body = rec["body"].get<std::string>();
        raw.question = rec["question"].get<std::string>();
        raw.answer = *answer;
        read_metadata(rec, raw);
        sink.add(raw);
    }
}

} // namespace

SourceFormat detect_format(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".xml") return SourceFormat::AsdivXml;
    if (ext == ".jsonl") return SourceFormat::NativeJson;
    std::ifstream in(path, std::ios::binary);
    std::string head(4096, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    if (head.find("sQuestion") != std::string::npos) return SourceFormat::MawpsJson;
    if (head.find("\"Body\"") != std::string::npos) return SourceFormat::SvampJson;
    if (head.find("<ProblemSet") != std::string::npos) return SourceFormat::AsdivXml;
    return SourceFormat::NativeJson;
}

IngestResult ingest_string(std::string_view content, SourceFormat format, const IngestOptions& options) {
    if (trim(content).empty()) throw IngestError("input is empty");
    RecordSink sink;
    switch (format) {
        case SourceFormat::AsdivXml: read_asdiv(content, options, sink); break;
        case SourceFormat::MawpsJson: read_mawps(content, sink); break;
        case SourceFormat::SvampJson: read_svamp(content, sink); break;
        case SourceFormat::NativeJson: read_native(content, sink); break;
    }
    if (!sink.errors.empty())
        throw IngestError(std::to_string(sink.errors.size()) + " invalid record(s)", std::move(sink.errors));
    if (sink.result.corpus.problems.empty()) throw IngestError("no problems found");
    sink.result.corpus.name = options.name.empty() ? "corpus" : options.name;
    sink.result.corpus.provenance.source_format = std::string(to_string(format));
    return std::move(sink.result);
}

IngestResult ingest(const std::filesystem::path& path, SourceFormat format, const IngestOptions& options) {
    IngestOptions named = options;
    if (named.name.empty()) {
        named.name = path.stem().string();
        if (named.name.size() > 7 && named.name.ends_with(".native")) named.name.resize(named.name.size() - 7);
    }
    IngestResult r = ingest_string(read_file(path), format, named);
    r.corpus.provenance.source_path = path.string();
    return r;
}

// ---------------------------------------------------------------------------
// Writers and helpers

std::string problem_to_native_line(const Problem& p) {
    json rec;
    rec["id"] = p.id;
    rec["body"] = p.body_text;
    rec["question"] = p.question_text;
    rec["equation"] = render_infix(p.literal_equation());
    rec["answer"] = to_exact_string(p.answer);
    if (p.grade) rec["grade"] = *p.grade;
    if (p.ptype) rec["type"] = *p.ptype;
    if (!p.variation_chain.empty()) rec["variation_chain"] = p.variation_chain;
    if (p.seed_id) rec["seed_id"] = *p.seed_id;
    return rec.dump(-1, ' ', false, json::error_handler_t::replace);
}

void write_native(std::ostream& out, const Corpus& corpus) {
    for (const auto& p : corpus.problems) out << problem_to_native_line(p) << '\n';
}

void write_native(const std::filesystem::path& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write " + path.string());
    write_native(out, corpus);
}

Corpus subset(const Corpus& c, const std::vector<std::string>& ids, std::string name) {
    const std::set<std::string_view> wanted(ids.begin(), ids.end());
    Corpus out;
    out.name = std::move(name);
    out.provenance = c.provenance;
    for (const auto& p : c.problems)
        if (wanted.count(p.id)) out.problems.push_back(p);
    return out;
}

Corpus concat(const std::vector<const Corpus*>& parts, std::string name) {
    Corpus out;
    out.name = std::move(name);
    std::unordered_set<std::string> seen;
    for (const Corpus* part : parts) {
        for (const auto& p : part->problems) {
            Problem copy = p;
            if (!seen.insert(copy.id).second) copy.id = part->name + ":" + copy.id;
            seen.insert(copy.id);
            out.problems.push_back(std::move(copy));
        }
    }
    out.provenance.source_format = "concat";
    return out;
}

std::uint64_t fingerprint(const Corpus& c) {
    std::uint64_t h = fnv1a64(c.name);
    for (const auto& p : c.problems) {
        h = splitmix64(h ^ fnv1a64(problem_to_native_line(p)));
        for (const auto& t : p.tokens()) h = splitmix64(h ^ fnv1a64(t));
    }
    return h;
}

} // namespace mwp
