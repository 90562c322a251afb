#pragma once

#include <string>

#include "mwp/corpus.hpp"
#include "mwp/metrics.hpp"

namespace mwp::fixture {

/// A one-step problem "He has a and b. How many?" with gold a + b.
inline Problem addition_problem(const std::string& id, int a, int b, std::vector<std::string> chain = {}) {
    RawProblem raw;
    raw.id = id;
    raw.body = "He has " + std::to_string(a) + " red and " + std::to_string(b) + " blue marbles.";
    raw.question = "How many marbles does he have?";
    raw.equation = parse_infix(std::to_string(a) + " + " + std::to_string(b));
    raw.answer = a + b;
    raw.variation_chain = std::move(chain);
    return make_problem(raw);
}

struct AblationFixture {
    Corpus corpus;
    EvalReport report;
};

/// Builds a corpus of `total` problems where the first `removed` carry
/// `label` in their chain, plus an evaluation report in which exactly
/// `removed_correct` of those and `kept_correct` of the rest are correct.
inline AblationFixture ablation_fixture(std::size_t total, std::size_t removed, std::size_t removed_correct,
                                        std::size_t kept_correct, const std::string& label) {
    AblationFixture f;
    f.corpus.name = "synthetic";
    Predictions predictions;
    const Expr right = parse_infix("N1 + N2");
    const Expr wrong = parse_infix("N1 - N2");
    for (std::size_t i = 0; i < total; ++i) {
        const bool in_removed = i < removed;
        std::vector<std::string> chain;
        if (in_removed) chain = {label};
        Problem p = addition_problem("s" + std::to_string(i), 7, 2, chain);
        const bool correct = in_removed ? i < removed_correct : i - removed < kept_correct;
        predictions[p.id] = correct ? right : wrong;
        f.corpus.problems.push_back(std::move(p));
    }
    f.report = execution_accuracy(predictions, f.corpus);
    return f;
}

} // namespace mwp::fixture
