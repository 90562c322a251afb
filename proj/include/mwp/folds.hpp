#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mwp/corpus.hpp"

namespace mwp {

struct FoldScheme {
    enum class Kind { EqualFive, Fixed, SeedGrouped };
    Kind kind = Kind::EqualFive;
    std::vector<std::size_t> sizes; // Fixed only
    std::optional<std::uint64_t> shuffle_seed;

    std::string str() const;
};

/// "equal-five", "fixed:238,238,238,238,266" or "seed-grouped".
FoldScheme parse_fold_scheme(std::string_view text);

/// A partition of corpus indices. Every index appears in exactly one fold.
struct Folds {
    std::string scheme;
    std::vector<std::vector<std::size_t>> folds;

    std::size_t count() const { return folds.size(); }
    std::vector<std::size_t> sizes() const;
    std::vector<std::size_t> test(std::size_t k) const { return folds.at(k); }
    std::vector<std::size_t> train(std::size_t k) const;
};

/// Equal-five gives the remainder to the first folds. Fixed takes contiguous
/// runs in corpus order. Seed-grouped keeps each seed with all its variations
/// and deals seeds of each problem type round-robin across five folds.
/// With a shuffle seed, corpus order (or seed order) is permuted first.
Folds make_folds(const Corpus& corpus, const FoldScheme& scheme);

/// Throws std::invalid_argument unless `folds` partitions [0, n).
void check_partition(const Folds& folds, std::size_t n);

/// The seed group of a problem: its seed id, or its own id when it has none.
std::string seed_group(const Problem& p);

Corpus select(const Corpus& corpus, const std::vector<std::size_t>& indices, std::string name);

} // namespace mwp
