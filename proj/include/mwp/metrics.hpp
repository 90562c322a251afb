#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/corpus.hpp"
#include "mwp/report.hpp"

namespace mwp {

/// Exact accuracy as a fraction; rendered only at the edges.
struct Accuracy {
    std::size_t correct = 0;
    std::size_t total = 0;

    Rational value() const { return total ? Rational(correct, total) : Rational(0); }
    /// Percentage with `digits` decimals, e.g. "43.8".
    std::string percent(int digits = 1) const;
    friend bool operator==(const Accuracy&, const Accuracy&) = default;
};

/// Predicted expression per problem id; nullopt marks a decode failure.
/// Slots in a prediction index the problem's number list.
using Predictions = std::map<std::string, std::optional<Expr>>;

inline const Rational& default_tolerance() {
    static const Rational tol(1, 10000);
    return tol;
}

/// |predicted - gold| <= tol * max(1, |gold|).
bool answer_matches(const Rational& predicted, const Rational& gold, const Rational& tol = default_tolerance());

struct ProblemOutcome {
    std::string id;
    std::optional<Expr> prediction;
    std::optional<Rational> predicted_answer;
    Rational gold;
    bool correct = false;
};

struct EvalReport {
    std::string corpus;
    std::string model;
    Rational tolerance = default_tolerance();
    std::vector<ProblemOutcome> problems; // corpus order

    Accuracy accuracy() const;
    Accuracy accuracy_on(const std::function<bool(const ProblemOutcome&)>& keep) const;
    const ProblemOutcome* find(std::string_view id) const;
};

/// Throws std::invalid_argument on a prediction for an unknown id or a
/// corpus problem without a prediction.
EvalReport execution_accuracy(const Predictions& predictions, const Corpus& corpus,
                              const Rational& tolerance = default_tolerance());

/// Concatenates per-fold reports into one; ids must be disjoint.
EvalReport merge_reports(const std::vector<EvalReport>& parts, std::string corpus, std::string model);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
Table accuracy_table(const std::vector<std::pair<std::string, Accuracy>>& rows, std::string_view label_column);

// ---------------------------------------------------------------------------
// Templates

/// Most frequent template; ties go to the lexicographically smallest string.
EquationTemplate majority_template(const Corpus& train, TemplateOptions options = {});

/// Binds the placeholders of the train corpus' modal template to each test
/// problem's numbers in textual order.
Predictions majority_template_predict(const Corpus& train, const Corpus& test, TemplateOptions options = {});

struct TemplateStats {
    std::size_t problems = 0;
    std::size_t distinct = 0;
    Rational average_operators;
    /// Frequency table sorted by count (descending), then template string.
    std::vector<std::pair<std::string, std::size_t>> frequencies;
};

TemplateStats template_stats(const Corpus& c, TemplateOptions options = {});

// ---------------------------------------------------------------------------
// Lexical diversity

struct DiversityParams {
    std::string method = "greedy-bleu2";
    double threshold = 0.5;
};

struct DiversityReport {
    double value = 0; // in [0, 1]
    std::string method;
    DiversityParams params;
    std::size_t clusters = 0;
    std::size_t problems = 0;
};

using DiversityMethod = std::function<DiversityReport(const Corpus&, const DiversityParams&)>;

/// Named plug-ins; "greedy-bleu2" is registered by default.
void register_diversity_method(std::string name, DiversityMethod method);
std::vector<std::string> diversity_methods();

/// Throws std::invalid_argument on an empty corpus or an unknown method.
DiversityReport lexical_diversity(const Corpus& c, const DiversityParams& params = {});

/// Symmetrized BLEU-2 style overlap: max over both directions of the
/// geometric mean of clipped unigram and bigram precision, no brevity penalty.
double bleu2_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Tokens used for diversity: punctuation dropped, numbers masked.
std::vector<std::string> diversity_tokens(const Problem& p);

struct CorpusStatsRow {
    std::string name;
    TemplateStats templates;
    DiversityReport diversity;
};

Table stats_table(const std::vector<CorpusStatsRow>& rows);
nlohmann::json to_json(const CorpusStatsRow& row);

// ---------------------------------------------------------------------------
// Breakdowns and ablations

struct Bucket {
    std::string label; // "<=1", "2", "3", "4+"
    Accuracy accuracy;
};

/// Accuracy per count of numbers in the problem text; empty buckets omitted.
std::vector<Bucket> breakdown_by_num_count(const EvalReport& report, const Corpus& c);
std::string num_count_bucket(std::size_t numbers);

struct AblationDelta {
    std::string label;
    std::size_t removed = 0;
    Accuracy full;
    Accuracy remaining;

    /// Acc(Full - X) - Acc(Full), exact.
    Rational delta() const { return remaining.value() - full.value(); }
    /// Signed percentage points, e.g. "+13.7".
    std::string delta_points(int digits = 1) const;
};

/// Removes every problem whose variation chain uses `label` (a variation or a
/// category) and compares accuracies.
AblationDelta ablation_delta(const EvalReport& full, const Corpus& c, std::string_view label);

nlohmann::json to_json(const AblationDelta& d);

} // namespace mwp
