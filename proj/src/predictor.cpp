#include "mwp/predictor.hpp"

namespace mwp {

Predictions Predictor::predict_all(const Corpus& c) const {
    Predictions out;
    for (const auto& p : c.problems) out[p.id] = predict(p);
    return out;
}

std::optional<Expr> TemplatePredictor::predict(const Problem& p) const {
    std::vector<std::size_t> slots(p.numbers.size());
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    return instantiate_template(template_, slots);
}

} // namespace mwp
