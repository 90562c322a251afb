// Acceptance checks, one line per criterion. Groups:
//   property  - no corpus needed
//   corpus    - needs MWP_DATA_DIR with asdiv-a.*, mawps.*, svamp.*
//   training  - additionally needs MWP_ACCEPTANCE_TRAINING=1 (hours of CPU)
// Exit 0 when everything that ran passed, 1 on any failure, 77 when every
// criterion of the group was skipped.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "mwp/experiment.hpp"
#include "mwp/genesis.hpp"
#include "mwp/metrics.hpp"
#include "mwp/neural.hpp"
#include "mwp/probes.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace mwp;

namespace {

constexpr int kSkipped = 77;

enum class Status { Pass, Fail, Skip };

class Board {
public:
    void record(int id, const std::string& title, Status status, const std::string& detail) {
        static const char* names[] = {"PASS", "FAIL", "SKIP"};
        std::cout << names[static_cast<int>(status)] << "  criterion " << std::setw(2) << id << "  " << title
                  << "  |  " << detail << std::endl;
        ++counts_[static_cast<int>(status)];
    }
    void check(int id, const std::string& title, bool ok, const std::string& detail) {
        record(id, title, ok ? Status::Pass : Status::Fail, detail);
    }
    int exit_code() const {
        if (counts_[1]) return 1;
        if (!counts_[0]) return kSkipped;
        return 0;
    }

private:
    int counts_[3] = {0, 0, 0};
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

template <class F>
void guarded(Board& board, int id, const std::string& title, F&& body) {
    try {
        body();
    } catch (const std::exception& e) {
        board.record(id, title, Status::Fail, std::string("exception: ") + e.what());
    }
}

fs::path data_root() { return fs::path(MWP_SOURCE_DIR) / "data"; }

std::size_t jobs() {
    if (const char* env = std::getenv("MWP_JOBS")) return std::max(1, std::atoi(env));
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Property group

Problem toy(const std::string& id, const std::string& body, const std::string& question, const std::string& eq) {
    RawProblem raw{.id = id, .body = body, .question = question, .equation = parse_infix(eq),
                   .answer = evaluate(parse_infix(eq))};
    return make_problem(raw);
}

Corpus toy_corpus() {
    Corpus c;
    c.name = "toy";
    c.problems = {
        toy("a", "Jack had 8 pens. He gave 3 pens to Mary.", "How many pens does Jack have now?", "8 - 3"),
        toy("b", "Each box holds 6 eggs. There are 4 boxes.", "How many eggs are there?", "6 * 4"),
        toy("c", "Ann has 5 red and 7 blue beads. She buys 2 more.", "How many beads in all?", "5 + 7 + 2"),
        toy("d", "Tom shares 12 cakes among 4 kids.", "How many cakes does each kid get?", "12 / 4"),
    };
    return c;
}

void criterion_4(Board& board) {
    const std::string title = "ablation delta identity (43.8 -> +13.7, Question Sensitivity)";
    guarded(board, 4, title, [&] {
        // 462 per thousand removed; at 1000 problems no integer count gives 57.5%, so the
        // report is built at 20x scale with the same shares.
        auto f = fixture::ablation_fixture(20000, 9240, 2573, 6187, "Diff Obj, Same Struct");
        const AblationDelta d = ablation_delta(f.report, f.corpus, "Question Sensitivity");
        const bool exact = d.delta() == Rational(137, 1000) && d.delta() == d.remaining.value() - d.full.value();
        const bool shown = d.full.percent() == "43.8" && d.delta_points() == "+13.7" &&
                           d.removed * 1000 == 462 * f.corpus.size();
        board.check(4, title, exact && shown,
                    "Acc(Full)=" + d.full.percent() + " removed=" + std::to_string(d.removed) + "/" +
                        std::to_string(f.corpus.size()) + " delta=" + to_exact_string(d.delta()) + " (" +
                        d.delta_points() + ")");
    });
}

void criterion_9(Board& board) {
    const std::string title = "expression oracle equivalence on 10000 random trees";
    guarded(board, 9, title, [&] {
        oracle::RandomTrees gen(20240611);
        const std::vector<Rational> bindings = oracle::slot_bindings();
        std::vector<double> dbindings;
        for (const auto& b : bindings) dbindings.push_back(to_double(b));
        const int n = 10000;
        int failures = 0;
        std::string first;
        for (int i = 0; i < n; ++i) {
            const Expr e = gen.tree(5, /*with_slots=*/true);
            const std::string infix = render_infix(e);
            std::string why;
            if (!(parse_infix(infix) == e)) why = "infix round trip";
            else if (!oracle::same(*oracle::shunting_yard(infix), e)) why = "shunting-yard disagreement";
            else if (!(parse_prefix(to_prefix(e)) == e)) why = "prefix round trip";
            else {
                std::vector<std::string> walk;
                oracle::preorder(e, walk);
                const double exact = to_double(evaluate(e, bindings));
                const double naive = oracle::eval_double(e, dbindings);
                const Expr shifted = substitute_numbers(e, [](const Rational& v) { return v * 3 + 1; });
                if (walk != to_prefix(e)) why = "prefix order";
                else if (std::abs(exact - naive) > 1e-12 * std::max(1.0, std::abs(exact))) why = "evaluation";
                else if (!(template_of(shifted) == template_of(e))) why = "template invariance";
            }
            if (!why.empty() && failures++ == 0) first = why + " on " + infix;
        }
        board.check(9, title, failures == 0,
                    std::to_string(n - failures) + "/" + std::to_string(n) + " trees agree" +
                        (first.empty() ? "" : "; first failure: " + first));
    });
}

ModelConfig tiny(Variant v, int layers) {
    ModelConfig c = ModelConfig::defaults(v);
    c.embedding = 3;
    c.hidden = 4;
    c.layers = layers;
    c.dropout = 0;
    c.seed = 7;
    return c;
}

void criterion_10(Board& board) {
    const std::string title = "gradient checks, max relative error < 1e-3 on every parameter block";
    guarded(board, 10, title, [&] {
        const Corpus c = toy_corpus();
        const Vocab vocab = Vocab::build(c);
        std::vector<const Problem*> batch;
        for (const auto& p : c.problems) batch.push_back(&p);
        bool ok = true;
        std::string detail;
        for (auto [variant, layers] : {std::pair{Variant::Constrained, 1}, std::pair{Variant::Seq2Seq, 2}}) {
            NeuralModel model(tiny(variant, layers), vocab);
            const auto blocks = nn::grad_check_blocks([&](nn::Graph& g) { return model.batch_loss(g, batch); },
                                                      model.parameters(), 1e-5);
            double worst = 0;
            std::string worst_name;
            for (const auto& [name, err] : blocks) {
                if (err > worst) {
                    worst = err;
                    worst_name = name;
                }
            }
            ok = ok && blocks.size() == model.parameters().all().size() && worst < 1e-3;
            std::ostringstream s;
            s << to_string(variant) << ": " << blocks.size() << " blocks, max " << std::scientific
              << std::setprecision(2) << worst << " (" << worst_name << ")";
            detail += (detail.empty() ? "" : "; ") + s.str();
        }
        board.check(10, title, ok, detail);
    });
}

Corpus shipped_generation(std::size_t per_template, std::size_t jobs, GenerationResult* result = nullptr) {
    const auto templates = load_templates(data_root() / "templates");
    const Lexicon lex = Lexicon::load(data_root() / "lexicon.json");
    GenerationOptions options;
    options.per_template = per_template;
    options.seed = 1;
    options.jobs = jobs;
    GenerationResult r = generate(templates, lex, options);
    Corpus c = r.corpus;
    if (result) *result = std::move(r);
    return c;
}

void criterion_11(Board& board) {
    const std::string title = "attention rows sum to 1 +- 1e-6; pooled state invariant to word order";
    guarded(board, 11, title, [&] {
        const Corpus c = shipped_generation(3, 1);
        const Vocab vocab = Vocab::build(c);
        std::vector<const Problem*> all;
        for (const auto& p : c.problems) all.push_back(&p);

        std::size_t rows = 0;
        double worst_sum = 0;
        bool nonnegative = true;
        for (auto variant : {Variant::Constrained, Variant::Seq2Seq}) {
            ModelConfig cfg = ModelConfig::defaults(variant);
            cfg.embedding = 16;
            cfg.hidden = 32;
            NeuralModel model(cfg, vocab);
            for (const auto& d : model.decode(all)) {
                for (const auto& row : d.attention) {
                    double total = 0;
                    for (double w : row) {
                        nonnegative = nonnegative && w >= 0;
                        total += w;
                    }
                    worst_sum = std::max(worst_sum, std::abs(total - 1.0));
                    ++rows;
                }
            }
        }

        ModelConfig cfg = ModelConfig::defaults(Variant::Constrained);
        cfg.embedding = 16;
        cfg.hidden = 32;
        NeuralModel model(cfg, vocab);
        Rng rng(11);
        double worst_pool = 0;
        std::size_t perms = 0;
        for (const auto& p : c.problems) {
            const auto ids = vocab.encode_input(p);
            for (int r = 0; r < 5; ++r) {
                std::vector<std::size_t> perm(ids.size());
                std::iota(perm.begin(), perm.end(), 0);
                rng.shuffle(perm);
                std::vector<int> shuffled(ids.size());
                for (std::size_t i = 0; i < ids.size(); ++i) shuffled[i] = ids[perm[i]];
                const double diff = (model.pooled_state(ids) - model.pooled_state(shuffled)).cwiseAbs().maxCoeff();
                worst_pool = std::max(worst_pool, diff);
                ++perms;
            }
        }
        std::ostringstream s;
        s << rows << " rows, max |sum-1| " << std::scientific << std::setprecision(2) << worst_sum << "; " << perms
          << " permutations, max pooled diff " << worst_pool;
        board.check(11, title, rows > 0 && nonnegative && worst_sum <= 1e-6 && worst_pool <= 1e-12, s.str());
    });
}

bool slot_only(const Expr& e) {
    if (e.is_literal()) return false;
    if (e.is_slot()) return true;
    return slot_only(e.lhs()) && slot_only(e.rhs());
}

void criterion_12(Board& board) {
    const std::string title = "generator: 20 templates x 50 = 1000 valid problems, bit-reproducible";
    guarded(board, 12, title, [&] {
        GenerationResult r;
        const Corpus a = shipped_generation(50, 1, &r);
        const Corpus b = shipped_generation(50, 1);
        const Corpus c = shipped_generation(50, 4);
        std::ostringstream sa, sb, sc;
        write_native(sa, a);
        write_native(sb, b);
        write_native(sc, c);

        std::set<std::string> templates;
        std::size_t invalid = 0;
        for (const auto& p : a.problems) {
            templates.insert(p.id.substr(0, p.id.rfind('-')));
            const bool ok = check_problem(p).empty() && operator_count(p.equation) <= 2 &&
                            operator_count(p.equation) >= 1 && slot_only(p.equation) && p.seed_id.has_value();
            if (!ok) ++invalid;
        }
        const bool reproducible = sa.str() == sb.str() && sa.str() == sc.str();
        std::ostringstream s;
        s << templates.size() << " templates, " << a.size() << " problems, " << invalid << " invalid, "
          << r.failures.size() << " failures, fingerprint " << std::hex << fingerprint(a)
          << (reproducible ? ", identical across reruns and job counts" : ", NOT reproducible");
        board.check(12, title,
                    templates.size() == 20 && a.size() == 1000 && invalid == 0 && r.failures.empty() && reproducible,
                    s.str());
    });
}

int property_group() {
    Board board;
    criterion_4(board);
    criterion_9(board);
    criterion_10(board);
    criterion_11(board);
    criterion_12(board);
    return board.exit_code();
}

// ---------------------------------------------------------------------------
// Corpus group

struct Corpora {
    std::optional<Corpus> asdiv, mawps, svamp;
    std::map<std::string, double> load_seconds;
    std::string problem; // why corpora are unavailable, if they are
};

std::optional<fs::path> find_corpus(const fs::path& dir, const std::string& stem) {
    std::vector<fs::path> hits;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (name.starts_with(stem + ".")) hits.push_back(entry.path());
    }
    if (hits.empty()) return std::nullopt;
    std::sort(hits.begin(), hits.end());
    return hits.front();
}

Corpora load_corpora() {
    Corpora out;
    const char* env = std::getenv("MWP_DATA_DIR");
    if (!env || !*env) {
        out.problem = "MWP_DATA_DIR is not set";
        return out;
    }
    const fs::path dir(env);
    if (!fs::is_directory(dir)) {
        out.problem = "MWP_DATA_DIR is not a directory";
        return out;
    }
    auto load = [&](const std::string& stem, std::optional<Corpus>& slot) {
        const auto path = find_corpus(dir, stem);
        if (!path) return;
        const Stopwatch clock;
        const SourceFormat format = detect_format(*path);
        IngestOptions options;
        options.name = stem;
        options.arithmetic_only = format == SourceFormat::AsdivXml;
        slot = ingest(*path, format, options).corpus;
        out.load_seconds[stem] = clock.seconds();
    };
    load("asdiv-a", out.asdiv);
    load("mawps", out.mawps);
    load("svamp", out.svamp);
    return out;
}

std::string missing(const Corpora& c, const std::vector<std::string>& names) {
    if (!c.problem.empty()) return c.problem;
    return "corpus file missing in MWP_DATA_DIR: " + [&] {
        std::string s;
        for (const auto& n : names) s += (s.empty() ? "" : ", ") + n + ".*";
        return s;
    }();
}

Folds standard_folds(const Corpus& c) {
    return make_folds(c, parse_fold_scheme(c.name == "asdiv-a" ? "fixed:238,238,238,238,266" : "equal-five"));
}

void criterion_1(Board& board, const Corpora& c) {
    const std::string title = "corpus sizes ASDiv-A 1218, MAWPS 2373, SVAMP 1000; ingest < 10 s";
    if (!c.asdiv && !c.mawps && !c.svamp) {
        board.record(1, title, Status::Skip, missing(c, {"asdiv-a", "mawps", "svamp"}));
        return;
    }
    bool ok = true;
    std::string detail;
    for (auto [corpus, expected] : {std::pair{&c.asdiv, 1218}, std::pair{&c.mawps, 2373}, std::pair{&c.svamp, 1000}}) {
        if (!*corpus) {
            ok = false;
            detail += "one corpus missing; ";
            continue;
        }
        const double t = c.load_seconds.at((*corpus)->name);
        ok = ok && (*corpus)->size() == static_cast<std::size_t>(expected) && t < 10;
        detail += (*corpus)->name + " " + std::to_string((*corpus)->size()) + " in " + fixed(t, 2) + " s; ";
    }
    board.check(1, title, ok, detail);
}

void criterion_2(Board& board, const Corpora& c) {
    const std::string title = "template statistics (avg operators, distinct templates) within tolerance";
    if (!c.asdiv || !c.mawps || !c.svamp) {
        board.record(2, title, Status::Skip, missing(c, {"asdiv-a", "mawps", "svamp"}));
        return;
    }
    guarded(board, 2, title, [&] {
        const Stopwatch clock;
        struct Target {
            const Corpus* corpus;
            double ops, ops_tol;
            int distinct, distinct_tol;
        };
        bool ok = true;
        std::string detail;
        for (const Target& t : {Target{&*c.asdiv, 1.23, 0.02, 19, 3}, Target{&*c.mawps, 1.78, 0.05, 39, 5},
                                Target{&*c.svamp, 1.24, 0.02, 26, 3}}) {
            const TemplateStats s = template_stats(*t.corpus);
            const double ops = to_double(s.average_operators);
            ok = ok && std::abs(ops - t.ops) <= t.ops_tol + 1e-12 &&
                 std::abs(static_cast<int>(s.distinct) - t.distinct) <= t.distinct_tol;
            detail += t.corpus->name + " ops " + fixed(ops, 3) + " templates " + std::to_string(s.distinct) + "; ";
        }
        ok = ok && clock.seconds() < 30;
        board.check(2, title, ok, detail + fixed(clock.seconds(), 2) + " s");
    });
}

EvalReport majority_cv(const Corpus& c) {
    return cross_validate(c, standard_folds(c), majority_factory(), {.jobs = jobs(), .tolerance = Rational(1, 10000),
                                                                  .views = {{"full", {}}}, .model_name = ""})
        .report();
}

void criterion_3(Board& board, const Corpora& c) {
    const std::string title = "majority template baseline 5-fold CV: MAWPS 17.7 +- 1.5, ASDiv-A 21.2 +- 1.5";
    if (!c.asdiv || !c.mawps) {
        board.record(3, title, Status::Skip, missing(c, {"asdiv-a", "mawps"}));
        return;
    }
    guarded(board, 3, title, [&] {
        const Stopwatch clock;
        const double mawps = 100 * to_double(majority_cv(*c.mawps).accuracy().value());
        const double asdiv = 100 * to_double(majority_cv(*c.asdiv).accuracy().value());
        const bool ok = std::abs(mawps - 17.7) <= 1.5 && std::abs(asdiv - 21.2) <= 1.5 && clock.seconds() < 60;
        board.check(3, title, ok,
                    "MAWPS " + fixed(mawps, 1) + ", ASDiv-A " + fixed(asdiv, 1) + " in " + fixed(clock.seconds(), 1) +
                        " s");
    });
}

void criterion_13(Board& board, const Corpora& c) {
    const std::string title = "CLD ordering ASDiv-A > MAWPS > SVAMP";
    if (!c.asdiv || !c.mawps || !c.svamp) {
        board.record(13, title, Status::Skip, missing(c, {"asdiv-a", "mawps", "svamp"}));
        return;
    }
    guarded(board, 13, title, [&] {
        const double a = lexical_diversity(*c.asdiv).value;
        const double m = lexical_diversity(*c.mawps).value;
        const double s = lexical_diversity(*c.svamp).value;
        board.check(13, title, a > m && m > s,
                    "ASDiv-A " + fixed(a, 3) + ", MAWPS " + fixed(m, 3) + ", SVAMP " + fixed(s, 3));
    });
}

int corpus_group() {
    Board board;
    const Corpora c = load_corpora();
    criterion_1(board, c);
    criterion_2(board, c);
    criterion_3(board, c);
    criterion_13(board, c);
    return board.exit_code();
}

// ---------------------------------------------------------------------------
// Training group

CvOptions cv_options(std::vector<TestView> views = {{"full", {}}}) {
    CvOptions o;
    o.jobs = jobs();
    o.views = std::move(views);
    return o;
}

double percent(const Accuracy& a) { return 100 * to_double(a.value()); }

PredictorFactory scratch(Variant v, const std::string& corpus) {
    return neural_factory(ModelConfig::defaults(v), 0.1, [corpus, v](std::size_t fold, const EpochLog& e) {
        std::cerr << corpus << " " << to_string(v) << " fold " << fold << " epoch " << e.epoch << " loss "
                  << fixed(e.loss, 4) << std::endl;
    });
}

int training_group() {
    Board board;
    const Corpora c = load_corpora();
    const char* flag = std::getenv("MWP_ACCEPTANCE_TRAINING");
    const bool enabled = flag && std::string(flag) == "1";
    const std::vector<std::pair<int, std::string>> criteria = {
        {5, "Seq2Seq 5-fold CV: MAWPS >= 70, ASDiv-A >= 45"},
        {6, "constrained 5-fold CV: ASDiv-A in [36, 56] and >= majority + 15; MAWPS >= 65"},
        {7, "question-removed Seq2Seq MAWPS >= 60% of full accuracy; Easy/Hard identity exact"},
        {8, "trained on MAWPS+ASDiv-A: SVAMP >= 15 points below ASDiv-A CV accuracy"},
    };
    std::string reason;
    if (!c.asdiv || !c.mawps || !c.svamp) reason = missing(c, {"asdiv-a", "mawps", "svamp"});
    else if (!enabled) reason = "scratch training takes hours; set MWP_ACCEPTANCE_TRAINING=1 to run";
    if (!reason.empty()) {
        for (const auto& [id, title] : criteria) board.record(id, title, Status::Skip, reason);
        return board.exit_code();
    }

    std::map<Variant, double> asdiv_cv;
    guarded(board, 5, criteria[0].second, [&] {
        const double mawps =
            percent(cross_validate(*c.mawps, standard_folds(*c.mawps), scratch(Variant::Seq2Seq, "mawps"), cv_options())
                        .report()
                        .accuracy());
        const double asdiv = percent(
            cross_validate(*c.asdiv, standard_folds(*c.asdiv), scratch(Variant::Seq2Seq, "asdiv-a"), cv_options())
                .report()
                .accuracy());
        asdiv_cv[Variant::Seq2Seq] = asdiv;
        board.check(5, criteria[0].second, mawps >= 70 && asdiv >= 45,
                    "MAWPS " + fixed(mawps, 1) + ", ASDiv-A " + fixed(asdiv, 1));
    });

    guarded(board, 6, criteria[1].second, [&] {
        const double majority = percent(majority_cv(*c.asdiv).accuracy());
        const double asdiv = percent(
            cross_validate(*c.asdiv, standard_folds(*c.asdiv), scratch(Variant::Constrained, "asdiv-a"), cv_options())
                .report()
                .accuracy());
        asdiv_cv[Variant::Constrained] = asdiv;
        const double mawps = percent(
            cross_validate(*c.mawps, standard_folds(*c.mawps), scratch(Variant::Constrained, "mawps"), cv_options())
                .report()
                .accuracy());
        board.check(6, criteria[1].second, asdiv >= 36 && asdiv <= 56 && asdiv >= majority + 15 && mawps >= 65,
                    "ASDiv-A " + fixed(asdiv, 1) + " (majority " + fixed(majority, 1) + "), MAWPS " + fixed(mawps, 1));
    });

    guarded(board, 7, criteria[2].second, [&] {
        const NoqProbe probe = noq_probe(*c.mawps, standard_folds(*c.mawps), scratch(Variant::Seq2Seq, "mawps"),
                                         cv_options());
        const double full = percent(probe.full.accuracy());
        const double noq = percent(probe.noq.accuracy());
        board.check(7, criteria[2].second, noq >= 0.6 * full && probe.scores.identity_holds(),
                    "full " + fixed(full, 1) + ", question removed " + fixed(noq, 1) + " (ratio " +
                        fixed(full > 0 ? noq / full : 0, 3) + "), identity " +
                        (probe.scores.identity_holds() ? "exact" : "broken"));
    });

    guarded(board, 8, criteria[3].second, [&] {
        const Corpus train_set = concat({&*c.mawps, &*c.asdiv}, "mawps+asdiv-a");
        bool ok = true;
        std::string detail;
        for (auto v : {Variant::Seq2Seq, Variant::Constrained}) {
            if (!asdiv_cv.count(v)) {
                ok = false;
                detail += std::string(to_string(v)) + ": no ASDiv-A CV result; ";
                continue;
            }
            auto predictor = scratch(v, "mawps+asdiv-a")(train_set, 0);
            const double svamp = percent(execution_accuracy(predictor->predict_all(*c.svamp), *c.svamp).accuracy());
            ok = ok && svamp <= asdiv_cv[v] - 15;
            detail += std::string(to_string(v)) + ": SVAMP " + fixed(svamp, 1) + " vs ASDiv-A " +
                      fixed(asdiv_cv[v], 1) + "; ";
        }
        board.check(8, criteria[3].second, ok, detail);
    });
    return board.exit_code();
}

} // namespace

int main(int argc, char** argv) {
    const std::string group = argc > 1 ? argv[1] : "property";
    if (group == "property") return property_group();
    if (group == "corpus") return corpus_group();
    if (group == "training") return training_group();
    std::cerr << "usage: mwp_acceptance [property|corpus|training]\n";
    return 2;
}
