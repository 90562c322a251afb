#pragma once

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/experiment.hpp"
#include "mwp/metrics.hpp"
#include "mwp/neural.hpp"

namespace mwp {

/// Drops the question from one problem. Numbers mentioned only in the
/// question leave the number list; equation slots bound to them become
/// literals, so equation and answer keep their values.
Problem remove_question(const Problem& p);

/// Applies remove_question to every problem and suffixes the name with
/// "-noq" once. Idempotent.
Corpus remove_questions(const Corpus& c);

struct EasyHard {
    std::set<std::string> easy; // correct without the question
    std::set<std::string> hard;
};

/// Throws std::invalid_argument unless the report covers exactly the corpus ids.
EasyHard easy_hard_partition(const EvalReport& noq_report, const Corpus& c);

/// Accuracy of `report` on the Easy and Hard subsets.
struct EasyHardAccuracy {
    Accuracy overall;
    Accuracy easy;
    Accuracy hard;

    /// overall == |E|/|T| Acc(E) + |H|/|T| Acc(H), in exact arithmetic.
    bool identity_holds() const;
};

EasyHardAccuracy easy_hard_accuracy(const EvalReport& report, const EasyHard& split);

struct NoqProbe {
    std::string corpus;
    std::string model;
    std::string folds;
    EvalReport full;
    EvalReport noq;
    EasyHard split;
    EasyHardAccuracy scores; // of the full-question report
};

/// Trains through `make` on each fold's untouched training split and scores
/// the same predictor on the test split with and without questions.
NoqProbe noq_probe(const Corpus& c, const Folds& folds, const PredictorFactory& make, const CvOptions& options = {});

nlohmann::json to_json(const NoqProbe& probe);
Table noq_table(const NoqProbe& probe);

// ---------------------------------------------------------------------------
// Attention

struct AttentionStep {
    std::string output; // emitted token, "<end>" for the final step
    std::vector<double> weights; // over input tokens
    std::vector<std::size_t> top; // indices of the k heaviest tokens, heaviest first
};

struct AttentionReport {
    std::string id;
    std::vector<std::string> input_tokens;
    std::vector<AttentionStep> steps;
    std::optional<Expr> prediction;
    std::optional<bool> correct;

    /// Number of steps whose largest weight is at least `threshold`.
    std::size_t focused_steps(double threshold = 0.9) const;
};

/// Throws std::invalid_argument when `model` exposes no attention.
AttentionReport attention_report(const Predictor& model, const Problem& p, std::size_t top_k = 3);
std::vector<AttentionReport> attention_reports(const Predictor& model, const Corpus& c, std::size_t top_k = 3);

/// Fraction of decode steps, over all reports, whose peak weight reaches `threshold`.
struct FocusSummary {
    std::size_t steps = 0;
    std::size_t focused = 0;
    double threshold = 0.9;

    double fraction() const { return steps ? static_cast<double>(focused) / static_cast<double>(steps) : 0.0; }
};

FocusSummary focus_summary(const std::vector<AttentionReport>& reports, double threshold = 0.9);

nlohmann::json to_json(const AttentionReport& r);
nlohmann::json to_json(const FocusSummary& s);

/// Input tokens down, decode steps across; each cell is a shade for the
/// weight, starred when the token is among the step's top-k.
std::string render_heatmap(const AttentionReport& r);

} // namespace mwp
