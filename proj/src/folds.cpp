#include "mwp/folds.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "mwp/rng.hpp"

namespace mwp {

namespace {

constexpr std::size_t kFiveFolds = 5;

std::vector<std::size_t> iota_n(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

std::size_t parse_size(std::string_view s) {
    if (s.empty() || s.size() > 12 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw std::invalid_argument("bad fold size '" + std::string(s) + "'");
    return std::stoull(std::string(s));
}

} // namespace

std::string FoldScheme::str() const {
    switch (kind) {
        case Kind::EqualFive: return "equal-five";
        case Kind::SeedGrouped: return "seed-grouped";
        case Kind::Fixed: {
            std::string s = "fixed:";
            for (std::size_t i = 0; i < sizes.size(); ++i) s += (i ? "," : "") + std::to_string(sizes[i]);
            return s;
        }
    }
    return "";
}

FoldScheme parse_fold_scheme(std::string_view text) {
    FoldScheme s;
    if (text == "equal-five") return s;
    if (text == "seed-grouped" || text == "seed-grouped-five") {
        s.kind = FoldScheme::Kind::SeedGrouped;
        return s;
    }
    if (text.starts_with("fixed:")) {
        s.kind = FoldScheme::Kind::Fixed;
        std::string_view rest = text.substr(6);
        while (true) {
            const auto comma = rest.find(',');
            s.sizes.push_back(parse_size(rest.substr(0, comma)));
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
        }
        return s;
    }
    throw std::invalid_argument("unknown fold scheme '" + std::string(text) +
                                "' (expected equal-five, fixed:<sizes> or seed-grouped)");
}

std::vector<std::size_t> Folds::sizes() const {
    std::vector<std::size_t> out;
    for (const auto& f : folds) out.push_back(f.size());
    return out;
}

std::vector<std::size_t> Folds::train(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < folds.size(); ++i)
        if (i != k) out.insert(out.end(), folds[i].begin(), folds[i].end());
    std::sort(out.begin(), out.end());
    return out;
}

std::string seed_group(const Problem& p) { return p.seed_id ? *p.seed_id : p.id; }

Folds make_folds(const Corpus& corpus, const FoldScheme& scheme) {
    const std::size_t n = corpus.size();
    Folds out;
    out.scheme = scheme.str();
    std::vector<std::size_t> order = iota_n(n);
    if (scheme.shuffle_seed && scheme.kind != FoldScheme::Kind::SeedGrouped) {
        Rng rng(*scheme.shuffle_seed);
        rng.shuffle(order);
    }
    switch (scheme.kind) {
        case FoldScheme::Kind::EqualFive: {
            if (n < kFiveFolds) throw std::invalid_argument("fewer problems than folds");
            std::size_t pos = 0;
            for (std::size_t k = 0; k < kFiveFolds; ++k) {
                const std::size_t size = n / kFiveFolds + (k < n % kFiveFolds ? 1 : 0);
                out.folds.emplace_back(order.begin() + pos, order.begin() + pos + size);
                pos += size;
            }
            break;
        }
        case FoldScheme::Kind::Fixed: {
            std::size_t total = 0;
            for (auto s : scheme.sizes) total += s;
            if (total != n)
                throw std::invalid_argument("fold sizes sum to " + std::to_string(total) + " but the corpus has " +
                                            std::to_string(n) + " problems");
            std::size_t pos = 0;
            for (auto size : scheme.sizes) {
                out.folds.emplace_back(order.begin() + pos, order.begin() + pos + size);
                pos += size;
            }
            break;
        }
        case FoldScheme::Kind::SeedGrouped: {
            // Seeds in first-appearance order, then bucketed by problem type.
            std::map<std::string, std::vector<std::size_t>> members;
            std::vector<std::string> seeds;
            std::vector<std::string> missing;
            for (const auto& p : corpus.problems)
                if (!p.seed_id) missing.push_back(p.id);
            if (!missing.empty())
                throw std::invalid_argument("seed-grouped folds need a seed id on every problem; " +
                                            std::to_string(missing.size()) + " missing (first: " + missing.front() +
                                            ")");
            for (std::size_t i = 0; i < n; ++i) {
                auto [it, fresh] = members.try_emplace(seed_group(corpus.problems[i]));
                if (fresh) seeds.push_back(it->first);
                it->second.push_back(i);
            }
            if (scheme.shuffle_seed) {
                Rng rng(*scheme.shuffle_seed);
                rng.shuffle(seeds);
            }
            std::map<std::string, std::vector<std::string>> by_type;
            for (const auto& s : seeds) {
                const Problem& first = corpus.problems[members[s].front()];
                const Problem* seed = corpus.find(s);
                const auto& type = (seed && seed->ptype) ? seed->ptype : first.ptype;
                by_type[type.value_or("")].push_back(s);
            }
            out.folds.assign(kFiveFolds, {});
            std::size_t deal = 0;
            for (const auto& [type, group] : by_type) {
                for (const auto& s : group) {
                    auto& fold = out.folds[deal++ % kFiveFolds];
                    fold.insert(fold.end(), members[s].begin(), members[s].end());
                }
            }
            for (auto& f : out.folds) std::sort(f.begin(), f.end());
            break;
        }
    }
    check_partition(out, n);
    return out;
}

void check_partition(const Folds& folds, std::size_t n) {
    std::vector<int> seen(n, 0);
    for (const auto& f : folds.folds) {
        for (auto i : f) {
            if (i >= n) throw std::invalid_argument("fold index out of range");
            if (seen[i]++) throw std::invalid_argument("problem assigned to two folds");
        }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
        throw std::invalid_argument("problem missing from every fold");
}

Corpus select(const Corpus& corpus, const std::vector<std::size_t>& indices, std::string name) {
    Corpus out;
    out.name = std::move(name);
    out.provenance = corpus.provenance;
    out.problems.reserve(indices.size());
    for (auto i : indices) out.problems.push_back(corpus.problems.at(i));
    return out;
}

} // namespace mwp
