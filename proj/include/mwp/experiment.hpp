#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <utility>

#include "mwp/folds.hpp"
#include "mwp/metrics.hpp"
#include "mwp/neural.hpp"
#include "mwp/predictor.hpp"

namespace mwp {

/// Builds a predictor from one fold's training split. May train.
using PredictorFactory = std::function<std::unique_ptr<Predictor>(const Corpus& train, std::size_t fold)>;

/// One way of presenting a test split to the trained predictor. An empty
/// transform leaves the split as is.
struct TestView {
    std::string name;
    std::function<Corpus(const Corpus&)> transform;
};

struct FoldResult {
    std::size_t fold = 0;
    std::vector<EvalReport> reports; // one per view
    std::optional<TrainReport> training;
    std::vector<EpochLog> log;
};

struct CvResult {
    std::vector<std::string> views;
    std::vector<EvalReport> merged; // one per view, corpus order
    std::vector<FoldResult> folds;

    const EvalReport& report(std::size_t view = 0) const { return merged.at(view); }
};

struct CvOptions {
    std::size_t jobs = 1;
    Rational tolerance = default_tolerance();
    /// Defaults to the single untransformed view "full". Every view is scored
    /// against the same predictor per fold.
    std::vector<TestView> views;
    std::string model_name;
};

/// Runs one job per fold; results do not depend on `jobs`.
/// Throws std::runtime_error if a fold mutates its training split.
CvResult cross_validate(const Corpus& c, const Folds& folds, const PredictorFactory& make, const CvOptions& options);

PredictorFactory majority_factory();

/// Deterministic split of a training fold into (train, validation), holding
/// out round(fraction * n) problems chosen by a seeded shuffle.
std::pair<Corpus, Corpus> holdout_split(const Corpus& train, double fraction, std::uint64_t seed);

/// Trains a fresh model per fold with the fold index mixed into the seed.
/// The vocabulary comes from the fold's training split only.
PredictorFactory neural_factory(const ModelConfig& config, double validation_fraction = 0.1,
                                std::function<void(std::size_t fold, const EpochLog&)> on_epoch = {});

/// Wraps a shared, already trained predictor for every fold.
PredictorFactory fixed_factory(std::shared_ptr<const Predictor> predictor);

} // namespace mwp
