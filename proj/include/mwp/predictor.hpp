#pragma once

#include <optional>
#include <string>

#include "mwp/corpus.hpp"
#include "mwp/metrics.hpp"

namespace mwp {

/// Anything that maps a problem to an expression over its numbers.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::string name() const = 0;
    /// nullopt is a decode failure.
    virtual std::optional<Expr> predict(const Problem& p) const = 0;
    /// Batch prediction; the default calls predict() per problem.
    virtual Predictions predict_all(const Corpus& c) const;
};

/// Always emits one template, bound to the problem's numbers in textual order.
class TemplatePredictor : public Predictor {
public:
    explicit TemplatePredictor(EquationTemplate t) : template_(std::move(t)) {}
    static TemplatePredictor majority(const Corpus& train) { return TemplatePredictor(majority_template(train)); }

    std::string name() const override { return "majority-template"; }
    std::optional<Expr> predict(const Problem& p) const override;
    const EquationTemplate& equation_template() const { return template_; }

private:
    EquationTemplate template_;
};

/// Returns the annotated equation; a plumbing stand-in for a trained model.
class GoldPredictor : public Predictor {
public:
    std::string name() const override { return "gold"; }
    std::optional<Expr> predict(const Problem& p) const override { return p.equation; }
};

} // namespace mwp
