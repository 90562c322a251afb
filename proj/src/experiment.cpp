#include "mwp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace mwp {

namespace {

/// Forwards to a shared predictor; lets fixed models pass through a factory.
class SharedPredictor : public Predictor {
public:
    explicit SharedPredictor(std::shared_ptr<const Predictor> inner) : inner_(std::move(inner)) {}
    std::string name() const override { return inner_->name(); }
    std::optional<Expr> predict(const Problem& p) const override { return inner_->predict(p); }
    Predictions predict_all(const Corpus& c) const override { return inner_->predict_all(c); }

private:
    std::shared_ptr<const Predictor> inner_;
};

/// A trained model plus what training reported.
class TrainedPredictor : public SharedPredictor {
public:
    TrainedPredictor(std::shared_ptr<const NeuralModel> model, TrainReport report)
        : SharedPredictor(model), model_(std::move(model)), report_(report) {}
    const NeuralModel& model() const { return *model_; }
    const TrainReport& report() const { return report_; }

private:
    std::shared_ptr<const NeuralModel> model_;
    TrainReport report_;
};

} // namespace

CvResult cross_validate(const Corpus& c, const Folds& folds, const PredictorFactory& make, const CvOptions& options) {
    check_partition(folds, c.size());
    std::vector<TestView> views = options.views;
    if (views.empty()) views.push_back({"full", {}});
    CvResult result;
    for (const auto& v : views) result.views.push_back(v.name);
    result.folds.resize(folds.count());
    std::vector<std::exception_ptr> errors(folds.count());

    auto run_fold = [&](std::size_t k) {
        try {
            Corpus train_split = select(c, folds.train(k), c.name + "-train" + std::to_string(k));
            const Corpus test_split = select(c, folds.test(k), c.name + "-test" + std::to_string(k));
            const std::uint64_t before = fingerprint(train_split);
            auto predictor = make(train_split, k);
            FoldResult& fr = result.folds[k];
            fr.fold = k;
            for (const auto& view : views) {
                const Corpus shown = view.transform ? view.transform(test_split) : test_split;
                EvalReport r = execution_accuracy(predictor->predict_all(shown), shown, options.tolerance);
                r.model = options.model_name.empty() ? predictor->name() : options.model_name;
                fr.reports.push_back(std::move(r));
            }
            if (fingerprint(train_split) != before)
                throw std::runtime_error("fold " + std::to_string(k) + ": training split changed during the run");
            if (auto* trained = dynamic_cast<const TrainedPredictor*>(predictor.get())) {
                fr.training = trained->report();
                fr.log = trained->model().log();
            }
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, folds.count()));
    if (jobs == 1) {
        for (std::size_t k = 0; k < folds.count(); ++k) run_fold(k);
    } else {
        std::mutex mutex;
        std::size_t next = 0;
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                while (true) {
                    std::size_t k;
                    {
                        std::lock_guard lock(mutex);
                        if (next >= folds.count()) return;
                        k = next++;
                    }
                    run_fold(k);
                }
            });
        }
        for (auto& t : workers) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    // Merge back into corpus order.
    std::unordered_map<std::string, std::size_t> order;
    for (std::size_t i = 0; i < c.size(); ++i) order[c.problems[i].id] = i;
    for (std::size_t v = 0; v < views.size(); ++v) {
        std::vector<EvalReport> parts;
        for (const auto& fr : result.folds) parts.push_back(fr.reports[v]);
        const std::string name = views[v].transform ? c.name + "-" + views[v].name : c.name;
        EvalReport merged = merge_reports(parts, name, parts.empty() ? "" : parts.front().model);
        std::stable_sort(merged.problems.begin(), merged.problems.end(),
                         [&](const ProblemOutcome& a, const ProblemOutcome& b) { return order[a.id] < order[b.id]; });
        merged.tolerance = options.tolerance;
        result.merged.push_back(std::move(merged));
    }
    return result;
}

PredictorFactory majority_factory() {
    return [](const Corpus& train, std::size_t) -> std::unique_ptr<Predictor> {
        return std::make_unique<TemplatePredictor>(TemplatePredictor::majority(train));
    };
}

std::pair<Corpus, Corpus> holdout_split(const Corpus& train, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
    std::vector<std::size_t> validation(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
    std::sort(validation.begin(), validation.end());
    std::sort(rest.begin(), rest.end());
    return {select(train, rest, train.name + "-fit"), select(train, validation, train.name + "-val")};
}

PredictorFactory neural_factory(const ModelConfig& config, double validation_fraction,
                                std::function<void(std::size_t, const EpochLog&)> on_epoch) {
    return [config, validation_fraction, on_epoch](const Corpus& train_split,
                                                   std::size_t fold) -> std::unique_ptr<Predictor> {
        ModelConfig cfg = config;
        cfg.seed = derive_seed(config.seed, "fold" + std::to_string(fold));
        auto [fit, validation] = holdout_split(train_split, validation_fraction, derive_seed(cfg.seed, "holdout"));
        auto model = std::make_shared<NeuralModel>(cfg, Vocab::build(fit));
        std::function<void(const EpochLog&)> hook;
        if (on_epoch) hook = [&](const EpochLog& e) { on_epoch(fold, e); };
        TrainReport report = train(*model, fit, validation, hook);
        return std::make_unique<TrainedPredictor>(std::move(model), report);
    };
}

PredictorFactory fixed_factory(std::shared_ptr<const Predictor> predictor) {
    return [predictor](const Corpus&, std::size_t) -> std::unique_ptr<Predictor> {
        return std::make_unique<SharedPredictor>(predictor);
    };
}

} // namespace mwp
