#include "mwp/probes.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mwp {

using nlohmann::json;

namespace {

constexpr std::string_view kNoqSuffix = "-noq";

Expr literalize_from(const Expr& e, std::size_t first_removed, std::span<const NumberMention> numbers) {
    switch (e.kind()) {
    case Expr::Kind::Literal:
        return e;
    case Expr::Kind::Slot:
        return e.slot_index() < first_removed ? e : Expr::literal(numbers[e.slot_index()].value);
    case Expr::Kind::Binary:
        return Expr::binary(e.op(), literalize_from(e.lhs(), first_removed, numbers),
                            literalize_from(e.rhs(), first_removed, numbers));
    }
    return e;
}

} // namespace

Problem remove_question(const Problem& p) {
    Problem q = p;
    q.question.clear();
    q.question_text.clear();
    std::size_t kept = 0;
    while (kept < p.numbers.size() && p.numbers[kept].token_index < p.body.size()) ++kept;
    q.numbers.resize(kept);
    q.equation = literalize_from(p.equation, kept, p.numbers);
    return q;
}

Corpus remove_questions(const Corpus& c) {
    Corpus out;
    out.name = c.name.ends_with(kNoqSuffix) ? c.name : c.name + std::string(kNoqSuffix);
    out.provenance = c.provenance;
    out.problems.reserve(c.size());
    for (const auto& p : c.problems) out.problems.push_back(remove_question(p));
    return out;
}

EasyHard easy_hard_partition(const EvalReport& noq_report, const Corpus& c) {
    if (noq_report.problems.size() != c.size())
        throw std::invalid_argument("report covers " + std::to_string(noq_report.problems.size()) +
                                    " problems but the corpus has " + std::to_string(c.size()));
    EasyHard out;
    for (const auto& p : c.problems) {
        const ProblemOutcome* o = noq_report.find(p.id);
        if (!o) throw std::invalid_argument("report has no outcome for problem '" + p.id + "'");
        (o->correct ? out.easy : out.hard).insert(p.id);
    }
    return out;
}

bool EasyHardAccuracy::identity_holds() const {
    if (overall.total == 0) return easy.total == 0 && hard.total == 0;
    if (easy.total + hard.total != overall.total) return false;
    const Rational n(overall.total);
    const Rational weighted = Rational(easy.total) / n * easy.value() + Rational(hard.total) / n * hard.value();
    return weighted == overall.value();
}

EasyHardAccuracy easy_hard_accuracy(const EvalReport& report, const EasyHard& split) {
    EasyHardAccuracy out;
    out.overall = report.accuracy();
    out.easy = report.accuracy_on([&](const ProblemOutcome& o) { return split.easy.contains(o.id); });
    out.hard = report.accuracy_on([&](const ProblemOutcome& o) { return split.hard.contains(o.id); });
    return out;
}

NoqProbe noq_probe(const Corpus& c, const Folds& folds, const PredictorFactory& make, const CvOptions& options) {
    CvOptions opts = options;
    opts.views = {{"full", {}}, {"noq", [](const Corpus& test) { return remove_questions(test); }}};
    const CvResult cv = cross_validate(c, folds, make, opts);
    NoqProbe probe;
    probe.corpus = c.name;
    probe.folds = folds.scheme;
    probe.full = cv.report(0);
    probe.noq = cv.report(1);
    probe.model = probe.full.model;
    probe.split = easy_hard_partition(probe.noq, c);
    probe.scores = easy_hard_accuracy(probe.full, probe.split);
    return probe;
}

json to_json(const NoqProbe& probe) {
    auto acc = [](const Accuracy& a) {
        return json{{"correct", a.correct}, {"total", a.total}, {"percent", a.percent(1)}};
    };
    json problems = json::array();
    for (std::size_t i = 0; i < probe.full.problems.size(); ++i) {
        const auto& f = probe.full.problems[i];
        const ProblemOutcome* n = probe.noq.find(f.id);
        problems.push_back({{"id", f.id}, {"correct", f.correct}, {"correct_noq", n && n->correct},
                            {"split", probe.split.easy.contains(f.id) ? "easy" : "hard"}});
    }
    const Accuracy full = probe.full.accuracy();
    const Accuracy noq = probe.noq.accuracy();
    json j;
    j["kind"] = "noq_probe";
    j["corpus"] = probe.corpus;
    j["model"] = probe.model;
    j["folds"] = probe.folds;
    j["full"] = acc(full);
    j["noq"] = acc(noq);
    j["noq_over_full"] = full.correct ? json(format_fixed(noq.value() / full.value(), 4)) : json();
    j["easy"] = acc(probe.scores.easy);
    j["hard"] = acc(probe.scores.hard);
    j["identity_holds"] = probe.scores.identity_holds();
    j["problems"] = std::move(problems);
    return j;
}

Table noq_table(const NoqProbe& probe) {
    Table t;
    t.columns = {"Corpus", "Model", "Full", "Question removed", "Easy", "Hard", "# Easy", "# Hard"};
    t.rows.push_back({probe.corpus, probe.model, probe.full.accuracy().percent(1), probe.noq.accuracy().percent(1),
                      probe.scores.easy.percent(1), probe.scores.hard.percent(1),
                      std::to_string(probe.scores.easy.total), std::to_string(probe.scores.hard.total)});
    return t;
}

// ---------------------------------------------------------------------------

std::size_t AttentionReport::focused_steps(double threshold) const {
    std::size_t n = 0;
    for (const auto& s : steps)
        if (!s.weights.empty() && *std::max_element(s.weights.begin(), s.weights.end()) >= threshold) ++n;
    return n;
}

namespace {

const NeuralModel& attention_model(const Predictor& model) {
    const auto* neural = dynamic_cast<const NeuralModel*>(&model);
    if (!neural) throw std::invalid_argument("model '" + model.name() + "' exposes no attention weights");
    return *neural;
}

AttentionReport report_from(const Decoding& d, const Problem& p, std::size_t top_k) {
    AttentionReport r;
    r.id = p.id;
    r.input_tokens = d.input_tokens;
    r.prediction = d.expr;
    if (d.expr) {
        try {
            r.correct = answer_matches(evaluate(*d.expr, p.number_values()), p.answer);
        } catch (const EvalError&) {
            r.correct = false;
        }
    } else {
        r.correct = false;
    }
    for (std::size_t s = 0; s < d.attention.size(); ++s) {
        AttentionStep step;
        step.output = s < d.output_tokens.size() ? d.output_tokens[s] : std::string(Vocab::kEnd);
        step.weights = d.attention[s];
        std::vector<std::size_t> order(step.weights.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return step.weights[a] > step.weights[b]; });
        order.resize(std::min(top_k, order.size()));
        step.top = std::move(order);
        r.steps.push_back(std::move(step));
    }
    return r;
}

} // namespace

AttentionReport attention_report(const Predictor& model, const Problem& p, std::size_t top_k) {
    return report_from(attention_model(model).decode(p), p, top_k);
}

std::vector<AttentionReport> attention_reports(const Predictor& model, const Corpus& c, std::size_t top_k) {
    const NeuralModel& neural = attention_model(model);
    std::vector<AttentionReport> out;
    constexpr std::size_t chunk = 64;
    for (std::size_t begin = 0; begin < c.size(); begin += chunk) {
        std::vector<const Problem*> batch;
        for (std::size_t i = begin; i < std::min(c.size(), begin + chunk); ++i) batch.push_back(&c.problems[i]);
        const auto decodings = neural.decode(batch);
        for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(report_from(decodings[i], *batch[i], top_k));
    }
    return out;
}

FocusSummary focus_summary(const std::vector<AttentionReport>& reports, double threshold) {
    FocusSummary s;
    s.threshold = threshold;
    for (const auto& r : reports) {
        s.steps += r.steps.size();
        s.focused += r.focused_steps(threshold);
    }
    return s;
}

json to_json(const AttentionReport& r) {
    json steps = json::array();
    for (const auto& s : r.steps) {
        json weights = json::array();
        for (std::size_t i = 0; i < s.weights.size(); ++i) weights.push_back(json::array({r.input_tokens[i], s.weights[i]}));
        steps.push_back({{"output", s.output}, {"attention", std::move(weights)}, {"top", s.top}});
    }
    json j;
    j["id"] = r.id;
    j["input"] = r.input_tokens;
    j["prediction"] = r.prediction ? json(render_infix(*r.prediction)) : json();
    j["correct"] = r.correct ? json(*r.correct) : json();
    j["steps"] = std::move(steps);
    return j;
}

json to_json(const FocusSummary& s) {
    return {{"steps", s.steps}, {"focused", s.focused}, {"threshold", s.threshold}, {"fraction", s.fraction()}};
}

std::string render_heatmap(const AttentionReport& r) {
    static constexpr std::string_view shades = " .:-=+*#%@";
    std::size_t label = 5;
    for (const auto& t : r.input_tokens) label = std::max(label, t.size());
    std::vector<std::size_t> width;
    for (const auto& s : r.steps) width.push_back(std::max<std::size_t>(s.output.size(), 2) + 1);

    std::ostringstream out;
    out << r.id;
    if (r.prediction) out << "  prediction: " << render_infix(*r.prediction);
    if (r.correct) out << (*r.correct ? "  (correct)" : "  (wrong)");
    out << '\n';
    auto pad = [&](const std::string& s, std::size_t w) { out << s << std::string(w > s.size() ? w - s.size() : 0, ' '); };
    pad("", label + 2);
    for (std::size_t s = 0; s < r.steps.size(); ++s) pad(r.steps[s].output, width[s]);
    out << '\n';
    for (std::size_t i = 0; i < r.input_tokens.size(); ++i) {
        pad(r.input_tokens[i], label + 2);
        for (std::size_t s = 0; s < r.steps.size(); ++s) {
            const double w = std::clamp(r.steps[s].weights[i], 0.0, 1.0);
            std::string cell(1, shades[std::min<std::size_t>(9, static_cast<std::size_t>(w * 10))]);
            if (std::find(r.steps[s].top.begin(), r.steps[s].top.end(), i) != r.steps[s].top.end()) cell += '*';
            pad(cell, width[s]);
        }
        out << '\n';
    }
    out << "shades: '" << shades << "' for weights 0 to 1; * marks the top tokens per step\n";
    return out.str();
}

} // namespace mwp
