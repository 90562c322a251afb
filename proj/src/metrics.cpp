#include "mwp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "mwp/variations.hpp"

namespace mwp {

using nlohmann::json;

std::string Accuracy::percent(int digits) const { return format_fixed(value() * 100, digits); }

bool answer_matches(const Rational& predicted, const Rational& gold, const Rational& tol) {
    const Rational scale = abs(gold) > 1 ? abs(gold) : Rational(1);
    return abs(predicted - gold) <= tol * scale;
}

Accuracy EvalReport::accuracy() const {
    return accuracy_on([](const ProblemOutcome&) { return true; });
}

Accuracy EvalReport::accuracy_on(const std::function<bool(const ProblemOutcome&)>& keep) const {
    Accuracy a;
    for (const auto& p : problems) {
        if (!keep(p)) continue;
        ++a.total;
        if (p.correct) ++a.correct;
    }
    return a;
}

const ProblemOutcome* EvalReport::find(std::string_view id) const {
    for (const auto& p : problems)
        if (p.id == id) return &p;
    return nullptr;
}

EvalReport execution_accuracy(const Predictions& predictions, const Corpus& corpus, const Rational& tolerance) {
    EvalReport r;
    r.corpus = corpus.name;
    r.tolerance = tolerance;
    std::set<std::string_view> ids;
    for (const auto& p : corpus.problems) ids.insert(p.id);
    for (const auto& [id, _] : predictions)
        if (!ids.count(id)) throw std::invalid_argument("prediction for unknown problem id '" + id + "'");
    for (const auto& p : corpus.problems) {
        auto it = predictions.find(p.id);
        if (it == predictions.end()) throw std::invalid_argument("no prediction for problem '" + p.id + "'");
        ProblemOutcome o;
        o.id = p.id;
        o.gold = p.answer;
        o.prediction = it->second;
        if (o.prediction) {
            try {
                o.predicted_answer = evaluate(*o.prediction, p.number_values());
                o.correct = answer_matches(*o.predicted_answer, p.answer, tolerance);
            } catch (const EvalError&) {
            }
        }
        r.problems.push_back(std::move(o));
    }
    return r;
}

EvalReport merge_reports(const std::vector<EvalReport>& parts, std::string corpus, std::string model) {
    EvalReport r;
    r.corpus = std::move(corpus);
    r.model = std::move(model);
    if (!parts.empty()) r.tolerance = parts.front().tolerance;
    std::set<std::string> seen;
    for (const auto& part : parts) {
        for (const auto& p : part.problems) {
            if (!seen.insert(p.id).second) throw std::invalid_argument("problem '" + p.id + "' in two reports");
            r.problems.push_back(p);
        }
    }
    return r;
}

json to_json(const EvalReport& r) {
    json problems = json::array();
    for (const auto& p : r.problems) {
        json o;
        o["id"] = p.id;
        o["prediction"] = p.prediction ? json(render_infix(*p.prediction)) : json();
        o["predicted_answer"] = p.predicted_answer ? json(to_exact_string(*p.predicted_answer)) : json();
        o["gold"] = to_exact_string(p.gold);
        o["correct"] = p.correct;
        problems.push_back(std::move(o));
    }
    const Accuracy a = r.accuracy();
    return json{{"kind", "eval"},
                {"corpus", r.corpus},
                {"model", r.model},
                {"tolerance", to_exact_string(r.tolerance)},
                {"accuracy", {{"correct", a.correct}, {"total", a.total}, {"percent", a.percent()}}},
                {"problems", std::move(problems)}};
}

EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    try {
        r.corpus = j.value("corpus", "");
        r.model = j.value("model", "");
        if (auto tol = parse_exact(j.value("tolerance", "0.0001"))) r.tolerance = *tol;
        for (const auto& o : j.at("problems")) {
            ProblemOutcome p;
            p.id = o.at("id").get<std::string>();
            if (!o.at("prediction").is_null()) p.prediction = parse_infix(o.at("prediction").get<std::string>());
            if (!o.at("predicted_answer").is_null())
                p.predicted_answer = parse_exact(o.at("predicted_answer").get<std::string>());
            auto gold = parse_exact(o.at("gold").get<std::string>());
            if (!gold) throw std::invalid_argument("bad gold answer for '" + p.id + "'");
            p.gold = *gold;
            p.correct = o.at("correct").get<bool>();
            r.problems.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("malformed evaluation report: ") + e.what());
    }
    return r;
}

Table accuracy_table(const std::vector<std::pair<std::string, Accuracy>>& rows, std::string_view label_column) {
    Table t{{std::string(label_column), "Correct", "Total", "Accuracy"}, {}};
    for (const auto& [label, a] : rows)
        t.rows.push_back({label, std::to_string(a.correct), std::to_string(a.total), a.percent()});
    return t;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

std::map<EquationTemplate, std::size_t> template_counts(const Corpus& c, TemplateOptions options) {
    std::map<EquationTemplate, std::size_t> counts;
    for (const auto& p : c.problems) ++counts[template_of(p.equation, options)];
    return counts;
}

} // namespace

EquationTemplate majority_template(const Corpus& train, TemplateOptions options) {
    if (train.empty()) throw std::invalid_argument("majority template needs a non-empty train corpus");
    const auto counts = template_counts(train, options);
    // std::map iterates in ascending template order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second) best = it;
    return best->first;
}

Predictions majority_template_predict(const Corpus& train, const Corpus& test, TemplateOptions options) {
    const EquationTemplate modal = majority_template(train, options);
    Predictions out;
    for (const auto& p : test.problems) {
        std::vector<std::size_t> slots(p.numbers.size());
        for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
        out[p.id] = instantiate_template(modal, slots);
    }
    return out;
}

TemplateStats template_stats(const Corpus& c, TemplateOptions options) {
    TemplateStats s;
    s.problems = c.size();
    const auto counts = template_counts(c, options);
    s.distinct = counts.size();
    std::size_t ops = 0;
    for (const auto& [t, n] : counts) {
        ops += t.operator_count() * n;
        s.frequencies.emplace_back(t.str(), n);
    }
    s.average_operators = s.problems ? Rational(ops, s.problems) : Rational(0);
    std::stable_sort(s.frequencies.begin(), s.frequencies.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return s;
}

// ---------------------------------------------------------------------------
// Lexical diversity

namespace {

using Counts = std::unordered_map<std::string, int>;

struct NgramProfile {
    Counts unigrams;
    Counts bigrams;
    int unigram_total = 0;
    int bigram_total = 0;
};

NgramProfile profile(const std::vector<std::string>& tokens) {
    NgramProfile p;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        ++p.unigrams[tokens[i]];
        if (i + 1 < tokens.size()) ++p.bigrams[tokens[i] + '\x1f' + tokens[i + 1]];
    }
    p.unigram_total = static_cast<int>(tokens.size());
    p.bigram_total = tokens.empty() ? 0 : static_cast<int>(tokens.size()) - 1;
    return p;
}

double clipped_precision(const Counts& cand, int total, const Counts& ref) {
    if (total == 0) return 0;
    int hits = 0;
    for (const auto& [gram, n] : cand) {
        auto it = ref.find(gram);
        if (it != ref.end()) hits += std::min(n, it->second);
    }
    return static_cast<double>(hits) / total;
}

double directed_bleu2(const NgramProfile& cand, const NgramProfile& ref) {
    const double p1 = clipped_precision(cand.unigrams, cand.unigram_total, ref.unigrams);
    if (cand.bigram_total == 0) return p1;
    const double p2 = clipped_precision(cand.bigrams, cand.bigram_total, ref.bigrams);
    return std::sqrt(p1 * p2);
}

double profile_similarity(const NgramProfile& a, const NgramProfile& b) {
    return std::max(directed_bleu2(a, b), directed_bleu2(b, a));
}

DiversityReport greedy_bleu2(const Corpus& c, const DiversityParams& params) {
    DiversityReport r;
    r.method = "greedy-bleu2";
    r.params = params;
    r.problems = c.size();
    std::vector<NgramProfile> profiles;
    profiles.reserve(c.size());
    for (const auto& p : c.problems) profiles.push_back(profile(diversity_tokens(p)));
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        bool placed = false;
        for (auto& cluster : clusters) {
            for (auto m : cluster) {
                if (profile_similarity(profiles[i], profiles[m]) >= params.threshold) {
                    placed = true;
                    break;
                }
            }
            if (placed) {
                cluster.push_back(i);
                break;
            }
        }
        if (!placed) clusters.push_back({i});
    }
    r.clusters = clusters.size();
    r.value = r.problems > 1 ? static_cast<double>(r.clusters - 1) / static_cast<double>(r.problems - 1) : 0.0;
    return r;
}

struct Registry {
    std::mutex mutex;
    std::map<std::string, DiversityMethod> methods{{"greedy-bleu2", greedy_bleu2}};
};

Registry& registry() {
    static Registry r;
    return r;
}

} // namespace

std::vector<std::string> diversity_tokens(const Problem& p) {
    std::vector<std::string> out;
    for (const auto& t : p.tokens()) {
        if (t.size() == 1 && std::ispunct(static_cast<unsigned char>(t[0]))) continue;
        out.push_back(token_number(t) ? std::string("<num>") : t);
    }
    return out;
}

double bleu2_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    return profile_similarity(profile(a), profile(b));
}

void register_diversity_method(std::string name, DiversityMethod method) {
    std::lock_guard lock(registry().mutex);
    registry().methods[std::move(name)] = std::move(method);
}

std::vector<std::string> diversity_methods() {
    std::lock_guard lock(registry().mutex);
    std::vector<std::string> names;
    for (const auto& [name, _] : registry().methods) names.push_back(name);
    return names;
}

DiversityReport lexical_diversity(const Corpus& c, const DiversityParams& params) {
    if (c.empty()) throw std::invalid_argument("lexical diversity of an empty corpus");
    DiversityMethod method;
    {
        std::lock_guard lock(registry().mutex);
        auto it = registry().methods.find(params.method);
        if (it == registry().methods.end())
            throw std::invalid_argument("unknown diversity method '" + params.method + "'");
        method = it->second;
    }
    DiversityReport r = method(c, params);
    r.value = std::clamp(r.value, 0.0, 1.0);
    return r;
}

Table stats_table(const std::vector<CorpusStatsRow>& rows) {
    Table t{{"Dataset", "# Problems", "# Equation Templates", "# Avg Ops", "CLD"}, {}};
    for (const auto& row : rows) {
        char cld[32];
        std::snprintf(cld, sizeof cld, "%.2f", row.diversity.value);
        t.rows.push_back({row.name, std::to_string(row.templates.problems), std::to_string(row.templates.distinct),
                          format_fixed(row.templates.average_operators, 2), cld});
    }
    return t;
}

json to_json(const CorpusStatsRow& row) {
    json freq = json::array();
    for (const auto& [t, n] : row.templates.frequencies) freq.push_back({{"template", t}, {"count", n}});
    return json{{"dataset", row.name},
                {"problems", row.templates.problems},
                {"templates", row.templates.distinct},
                {"avg_ops", to_exact_string(row.templates.average_operators)},
                {"avg_ops_rounded", format_fixed(row.templates.average_operators, 2)},
                {"template_frequencies", std::move(freq)},
                {"cld",
                 {{"value", row.diversity.value},
                  {"method", row.diversity.method},
                  {"threshold", row.diversity.params.threshold},
                  {"clusters", row.diversity.clusters}}}};
}

// ---------------------------------------------------------------------------
// Breakdowns and ablations

std::string num_count_bucket(std::size_t numbers) {
    if (numbers <= 1) return "<=1";
    if (numbers >= 4) return "4+";
    return std::to_string(numbers);
}

namespace {

std::unordered_map<std::string, const Problem*> index_corpus(const EvalReport& report, const Corpus& c) {
    std::unordered_map<std::string, const Problem*> by_id;
    for (const auto& p : c.problems) by_id[p.id] = &p;
    for (const auto& o : report.problems)
        if (!by_id.count(o.id)) throw std::invalid_argument("report problem '" + o.id + "' is not in the corpus");
    return by_id;
}

} // namespace

std::vector<Bucket> breakdown_by_num_count(const EvalReport& report, const Corpus& c) {
    const auto by_id = index_corpus(report, c);
    std::vector<Bucket> buckets;
    for (const char* label : {"<=1", "2", "3", "4+"}) {
        Accuracy a = report.accuracy_on([&](const ProblemOutcome& o) {
            return num_count_bucket(by_id.at(o.id)->numbers.size()) == label;
        });
        if (a.total) buckets.push_back({label, a});
    }
    return buckets;
}

std::string AblationDelta::delta_points(int digits) const {
    const std::string s = format_fixed(delta() * 100, digits);
    return s.front() == '-' ? s : "+" + s;
}

AblationDelta ablation_delta(const EvalReport& full, const Corpus& c, std::string_view label) {
    const auto by_id = index_corpus(full, c);
    AblationDelta d;
    d.label = canonical_label(label);
    d.full = full.accuracy();
    d.remaining = full.accuracy_on(
        [&](const ProblemOutcome& o) { return !chain_uses(by_id.at(o.id)->variation_chain, label); });
    d.removed = d.full.total - d.remaining.total;
    return d;
}

json to_json(const AblationDelta& d) {
    auto acc = [](const Accuracy& a) {
        return json{{"correct", a.correct}, {"total", a.total}, {"exact", to_exact_string(a.value())},
                    {"percent", a.percent()}};
    };
    return json{{"kind", "ablation_delta"},
                {"label", d.label},
                {"removed", d.removed},
                {"acc_full", acc(d.full)},
                {"acc_remaining", acc(d.remaining)},
                {"delta_exact", to_exact_string(d.delta())},
                {"delta_points", d.delta_points()}};
}

} // namespace mwp
