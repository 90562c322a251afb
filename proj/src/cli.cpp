#include "mwp/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include "mwp/experiment.hpp"
#include "mwp/genesis.hpp"
#include "mwp/metrics.hpp"
#include "mwp/probes.hpp"
#include "mwp/variations.hpp"

namespace mwp::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::vector<std::string> corpora;
    std::string format = "json";
    std::string folds = "equal-five";
    bool shuffle = false;
    std::string model;
    std::string variant;
    std::string baseline;
    std::uint64_t seed = 1;
    std::string tolerance = "0.0001";
    std::string out_dir;
    std::size_t jobs = 1;
    bool strict = false;
    bool verbose = false;

    std::string from;
    std::string source_format;
    std::string name;
    std::string output;
    bool all_types = false;

    std::optional<int> embedding, hidden, layers, batch, epochs, max_decode;
    std::optional<double> dropout, lr, embedding_lr, clip;
    double validation_fraction = 0.1;
    std::string validation;
    std::vector<std::string> train;

    std::string report;
    std::string full_report;
    std::vector<std::string> labels;
    std::vector<std::string> ids;
    std::size_t top_k = 3;
    std::size_t limit = 0;
    double threshold = 0.9;
    std::string diversity_method = "greedy-bleu2";
    double diversity_threshold = 0.5;

    std::string templates = "data/templates";
    std::string lexicon = "data/lexicon.json";
    std::size_t per_template = 50;
    std::size_t max_operators = 2;
    int attempts = 1000;
    bool no_positive_answer = false;
    bool no_integral_division = false;
    bool no_positive_intermediates = false;
    bool no_distinct_numbers = false;
};

struct Context {
    Options o;
    std::ostream& out;
    std::ostream& err;
    std::vector<std::string> warnings;
    std::mutex mutex;

    void warn(const std::string& message) {
        std::lock_guard lock(mutex);
        err << "warning: " << message << '\n';
        warnings.push_back(message);
    }
    void note(const std::string& message) {
        if (!o.verbose) return;
        std::lock_guard lock(mutex);
        err << message << '\n';
    }
};

// ---------------------------------------------------------------------------
// Helpers

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot write " + path.string());
    f << content;
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot read " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
}

/// "asdiv-a.native.jsonl" -> "asdiv-a".
std::string corpus_name(const fs::path& path) {
    const std::string file = path.filename().string();
    const auto dot = file.find('.');
    return dot == std::string::npos || dot == 0 ? file : file.substr(0, dot);
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

void emit(Context& ctx, const std::string& command, const json& j, const Table& table,
          const std::optional<std::string>& markdown = std::nullopt) {
    const ReportFormat format = *parse_report_format(ctx.o.format);
    std::string body;
    std::string ext;
    switch (format) {
        case ReportFormat::Json:
            body = dump_json(j);
            ext = "json";
            break;
        case ReportFormat::Markdown:
            body = markdown ? *markdown : render_markdown(table);
            ext = "md";
            break;
        case ReportFormat::Csv:
            body = render_csv(table);
            ext = "csv";
            break;
    }
    if (ctx.o.out_dir.empty()) {
        ctx.out << body;
        return;
    }
    const fs::path path = fs::path(ctx.o.out_dir) / (command + "." + ext);
    write_file(path, body);
    ctx.note("wrote " + path.string());
}

Rational tolerance(const Options& o) {
    auto t = parse_decimal(o.tolerance);
    if (!t || *t < 0) throw UsageError("--tolerance must be a non-negative decimal, got '" + o.tolerance + "'");
    return *t;
}

Corpus load_corpus(Context& ctx, const std::string& path_text) {
    const fs::path path(path_text);
    if (!fs::exists(path)) throw UsageError("corpus file not found: " + path_text);
    SourceFormat format;
    if (!ctx.o.source_format.empty()) {
        auto f = parse_source_format(ctx.o.source_format);
        if (!f) throw UsageError("unknown source format '" + ctx.o.source_format + "'");
        format = *f;
    } else {
        format = detect_format(path);
    }
    IngestOptions io;
    io.name = corpus_name(path);
    io.arithmetic_only = format == SourceFormat::AsdivXml && !ctx.o.all_types;
    if (format == SourceFormat::NativeJson) return ingest(path, format, io).corpus;

    const char* cache_env = std::getenv("MWP_CACHE_DIR");
    fs::path cached;
    if (cache_env && *cache_env) {
        const std::string content = read_file(path);
        const std::uint64_t key = fnv1a64(content) ^ (io.arithmetic_only ? 1 : 0);
        cached = fs::path(cache_env) / (io.name + "-" + hex64(key) + ".native.jsonl");
        if (fs::exists(cached)) {
            ctx.note("using cached " + cached.string());
            return ingest(cached, SourceFormat::NativeJson, io).corpus;
        }
    }
    IngestResult r = ingest(path, format, io);
    for (const auto& w : r.corpus.provenance.warnings) ctx.warn(io.name + ": " + w);
    const auto record_warnings = r.report.warnings();
    for (const auto& w : record_warnings) ctx.note(io.name + ": " + w);
    if (!record_warnings.empty())
        ctx.warn(io.name + ": " + std::to_string(record_warnings.size()) + " record warning(s); --verbose lists them");
    if (auto n = r.report.answer_mismatches())
        ctx.warn(io.name + ": " + std::to_string(n) + " problem(s) whose equation disagrees with the answer");
    if (!cached.empty()) {
        std::ostringstream native;
        write_native(native, r.corpus);
        write_file(cached, native.str());
        ctx.note("cached " + cached.string());
    }
    return std::move(r.corpus);
}

Corpus single_corpus(Context& ctx) {
    if (ctx.o.corpora.size() != 1) throw UsageError("expected exactly one --corpus");
    return load_corpus(ctx, ctx.o.corpora.front());
}

ModelConfig model_config(const Options& o) {
    const std::string name = o.variant.empty() ? "constrained" : o.variant;
    auto variant = parse_variant(name);
    if (!variant) throw UsageError("unknown variant '" + name + "' (expected constrained or seq2seq)");
    ModelConfig c = ModelConfig::defaults(*variant);
    c.seed = o.seed;
    if (o.embedding) c.embedding = *o.embedding;
    if (o.hidden) c.hidden = *o.hidden;
    if (o.layers) c.layers = *o.layers;
    if (o.batch) c.batch = *o.batch;
    if (o.epochs) c.epochs = *o.epochs;
    if (o.max_decode) c.max_decode = *o.max_decode;
    if (o.dropout) c.dropout = *o.dropout;
    if (o.lr) c.lr = *o.lr;
    if (o.embedding_lr) c.embedding_lr = *o.embedding_lr;
    if (o.clip) c.clip = *o.clip;
    c.validate();
    return c;
}

std::string log_line(const EpochLog& e) {
    std::ostringstream s;
    s << "epoch " << e.epoch << " loss " << std::fixed << std::setprecision(4) << e.loss;
    if (e.val_acc) s << " val_acc " << std::setprecision(1) << *e.val_acc;
    return s.str();
}

/// Exactly one of --model, --baseline, --variant picks the predictor.
PredictorFactory factory_for(Context& ctx) {
    const Options& o = ctx.o;
    const int chosen = !o.model.empty() + !o.baseline.empty() + !o.variant.empty();
    if (chosen != 1) throw UsageError("give exactly one of --model, --baseline or --variant");
    if (!o.model.empty()) {
        if (!fs::exists(o.model)) throw UsageError("model snapshot not found: " + o.model);
        return fixed_factory(std::make_shared<NeuralModel>(NeuralModel::load(o.model)));
    }
    if (o.baseline == "majority") return majority_factory();
    if (o.baseline == "gold") return fixed_factory(std::make_shared<GoldPredictor>());
    if (!o.baseline.empty()) throw UsageError("unknown baseline '" + o.baseline + "' (expected majority or gold)");
    return neural_factory(model_config(o), o.validation_fraction, [&ctx](std::size_t fold, const EpochLog& e) {
        ctx.note("fold " + std::to_string(fold) + " " + log_line(e));
    });
}

Folds folds_for(const Options& o, const Corpus& c) {
    FoldScheme scheme;
    try {
        scheme = parse_fold_scheme(o.folds);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (o.shuffle) scheme.shuffle_seed = o.seed;
    return make_folds(c, scheme);
}

CvOptions cv_options(const Options& o) {
    CvOptions options;
    options.jobs = o.jobs;
    options.tolerance = tolerance(o);
    return options;
}

json accuracy_json(const Accuracy& a) {
    return {{"correct", a.correct}, {"total", a.total}, {"percent", a.percent(1)}};
}

// ---------------------------------------------------------------------------
// Commands

void cmd_ingest(Context& ctx) {
    const Options& o = ctx.o;
    if (o.from.empty()) throw UsageError("ingest needs --from <file>");
    const fs::path from(o.from);
    if (!fs::exists(from)) throw UsageError("source file not found: " + o.from);
    SourceFormat format;
    if (!o.source_format.empty()) {
        auto f = parse_source_format(o.source_format);
        if (!f) throw UsageError("unknown source format '" + o.source_format + "'");
        format = *f;
    } else {
        format = detect_format(from);
    }
    IngestOptions io;
    io.name = o.name.empty() ? corpus_name(from) : o.name;
    io.arithmetic_only = format == SourceFormat::AsdivXml && !o.all_types;
    IngestResult r = ingest(from, format, io);
    for (const auto& w : r.corpus.provenance.warnings) ctx.warn(w);
    const auto record_warnings = r.report.warnings();
    for (const auto& w : record_warnings) ctx.note(w);
    if (!record_warnings.empty())
        ctx.warn(std::to_string(record_warnings.size()) + " record warning(s); --verbose lists them");
    if (auto n = r.report.answer_mismatches())
        ctx.warn(std::to_string(n) + " problem(s) whose equation disagrees with the answer");

    fs::path dest;
    if (!o.output.empty()) {
        dest = o.output;
    } else {
        fs::path dir = o.out_dir;
        if (dir.empty()) {
            const char* cache = std::getenv("MWP_CACHE_DIR");
            dir = cache && *cache ? fs::path(cache) : fs::path(".");
        }
        dest = dir / (io.name + ".native.jsonl");
    }
    std::ostringstream native;
    write_native(native, r.corpus);
    write_file(dest, native.str());
    ctx.note("wrote " + dest.string());

    json j{{"kind", "ingest"},
           {"corpus", r.corpus.name},
           {"source_format", std::string(to_string(format))},
           {"problems", r.corpus.size()},
           {"fully_aligned", r.report.fully_aligned()},
           {"answer_mismatches", r.report.answer_mismatches()},
           {"record_warnings", record_warnings.size()},
           {"provenance_warnings", r.corpus.provenance.warnings},
           {"output", dest.filename().string()}};
    Table t{{"Corpus", "Format", "# Problems", "Fully aligned", "Answer mismatches", "Warnings"},
            {{r.corpus.name, std::string(to_string(format)), std::to_string(r.corpus.size()),
              std::to_string(r.report.fully_aligned()), std::to_string(r.report.answer_mismatches()),
              std::to_string(record_warnings.size() + r.corpus.provenance.warnings.size())}}};
    emit(ctx, "ingest", j, t);
}

void cmd_stats(Context& ctx) {
    if (ctx.o.corpora.empty()) throw UsageError("stats needs at least one --corpus");
    DiversityParams params{ctx.o.diversity_method, ctx.o.diversity_threshold};
    std::vector<CorpusStatsRow> rows;
    for (const auto& path : ctx.o.corpora) {
        Corpus c = load_corpus(ctx, path);
        if (c.empty()) throw UsageError("corpus " + path + " is empty");
        rows.push_back({c.name, template_stats(c), lexical_diversity(c, params)});
    }
    json list = json::array();
    for (const auto& r : rows) list.push_back(to_json(r));
    emit(ctx, "stats", {{"kind", "stats"}, {"corpora", list}}, stats_table(rows));
}

void cmd_folds(Context& ctx) {
    const Corpus c = single_corpus(ctx);
    const Folds folds = folds_for(ctx.o, c);
    json list = json::array();
    Table t{{"Fold", "Size", "First id", "Last id"}, {}};
    for (std::size_t k = 0; k < folds.count(); ++k) {
        json ids = json::array();
        for (auto i : folds.folds[k]) ids.push_back(c.problems[i].id);
        list.push_back({{"fold", k}, {"size", folds.folds[k].size()}, {"ids", ids}});
        const auto& f = folds.folds[k];
        t.rows.push_back({std::to_string(k), std::to_string(f.size()), f.empty() ? "" : c.problems[f.front()].id,
                          f.empty() ? "" : c.problems[f.back()].id});
    }
    emit(ctx, "folds", {{"kind", "folds"}, {"corpus", c.name}, {"scheme", folds.scheme}, {"sizes", folds.sizes()},
                        {"folds", list}},
         t);
}

void cmd_train(Context& ctx) {
    const Options& o = ctx.o;
    if (o.model.empty() && o.out_dir.empty()) throw UsageError("train needs --model <snapshot> or --out <dir>");
    const Corpus c = single_corpus(ctx);
    const ModelConfig cfg = model_config(o);
    Corpus fit, validation;
    if (!o.validation.empty()) {
        fit = c;
        validation = load_corpus(ctx, o.validation);
    } else {
        std::tie(fit, validation) = holdout_split(c, o.validation_fraction, derive_seed(o.seed, "holdout"));
    }
    NeuralModel model(cfg, Vocab::build(fit));
    const TrainReport tr = train(model, fit, validation, [&](const EpochLog& e) { ctx.note(log_line(e)); });
    if (tr.dropped) ctx.warn(std::to_string(tr.dropped) + " training problem(s) not expressible by the decoder");

    const fs::path snapshot = o.model.empty() ? fs::path(o.out_dir) / "model.mwps" : fs::path(o.model);
    if (snapshot.has_parent_path()) fs::create_directories(snapshot.parent_path());
    model.save(snapshot);
    ctx.note("wrote " + snapshot.string());
    if (!o.out_dir.empty()) write_file(fs::path(o.out_dir) / "train_log.csv", model.log_csv());

    json epochs = json::array();
    Table t{{"Epoch", "Loss", "Validation accuracy"}, {}};
    for (const auto& e : model.log()) {
        epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"val_acc", e.val_acc ? json(*e.val_acc) : json()}});
        std::ostringstream loss, acc;
        loss << std::fixed << std::setprecision(4) << e.loss;
        if (e.val_acc) acc << std::fixed << std::setprecision(1) << *e.val_acc;
        t.rows.push_back({std::to_string(e.epoch), loss.str(), acc.str()});
    }
    emit(ctx, "train",
         {{"kind", "train"},
          {"corpus", c.name},
          {"config", to_json(cfg)},
          {"train_problems", fit.size()},
          {"validation_problems", validation.size()},
          {"used", tr.used},
          {"dropped", tr.dropped},
          {"best_epoch", tr.best_epoch},
          {"epochs", epochs},
          {"snapshot", snapshot.filename().string()}},
         t);
}

void cmd_eval(Context& ctx) {
    const Options& o = ctx.o;
    const Corpus c = single_corpus(ctx);
    const Rational tol = tolerance(o);
    const PredictorFactory make = factory_for(ctx);
    EvalReport report;
    json folds_json;
    std::vector<std::pair<std::string, Accuracy>> rows;

    if (!o.train.empty()) {
        std::vector<Corpus> parts;
        for (const auto& path : o.train) parts.push_back(load_corpus(ctx, path));
        std::vector<const Corpus*> ptrs;
        std::string name;
        for (const auto& p : parts) {
            ptrs.push_back(&p);
            name += (name.empty() ? "" : "+") + p.name;
        }
        const Corpus train_set = concat(ptrs, name);
        auto predictor = make(train_set, 0);
        report = execution_accuracy(predictor->predict_all(c), c, tol);
        report.model = predictor->name();
        rows.push_back({report.model + " (trained on " + name + ")", report.accuracy()});
    } else if (!o.model.empty()) {
        auto predictor = make(Corpus{}, 0);
        report = execution_accuracy(predictor->predict_all(c), c, tol);
        report.model = predictor->name();
        rows.push_back({report.model, report.accuracy()});
    } else {
        const Folds folds = folds_for(o, c);
        const CvResult cv = cross_validate(c, folds, make, cv_options(o));
        report = cv.report();
        json per_fold = json::array();
        for (const auto& fr : cv.folds) {
            per_fold.push_back({{"fold", fr.fold}, {"accuracy", accuracy_json(fr.reports.front().accuracy())}});
            rows.push_back({"fold " + std::to_string(fr.fold), fr.reports.front().accuracy()});
            if (!o.out_dir.empty() && !fr.log.empty()) {
                std::string csv = "epoch,loss,val_acc\n";
                for (const auto& e : fr.log) {
                    std::ostringstream line;
                    line << e.epoch << ',' << std::setprecision(17) << e.loss << ',';
                    if (e.val_acc) line << *e.val_acc;
                    csv += line.str() + "\n";
                }
                write_file(fs::path(o.out_dir) / ("fold" + std::to_string(fr.fold) + "_log.csv"), csv);
            }
        }
        rows.insert(rows.begin(), {report.model + " (" + folds.scheme + ")", report.accuracy()});
        folds_json = {{"scheme", folds.scheme}, {"sizes", folds.sizes()}, {"per_fold", per_fold}};
    }
    json j = to_json(report);
    if (!folds_json.is_null()) j["folds"] = folds_json;
    emit(ctx, "eval", j, accuracy_table(rows, "Model"));
}

void cmd_probe_noq(Context& ctx) {
    const Corpus c = single_corpus(ctx);
    const Folds folds = folds_for(ctx.o, c);
    const NoqProbe probe = noq_probe(c, folds, factory_for(ctx), cv_options(ctx.o));
    if (!probe.scores.identity_holds()) ctx.warn("Easy/Hard weighted accuracy does not reproduce the overall accuracy");
    emit(ctx, "probe-noq", to_json(probe), noq_table(probe));
}

void cmd_partition(Context& ctx) {
    const Options& o = ctx.o;
    if (o.report.empty()) throw UsageError("partition needs --report <question-removed report>");
    const Corpus c = single_corpus(ctx);
    const json source = read_json(o.report);
    EasyHard split;
    if (source.value("kind", "") == "noq_probe") {
        for (const auto& p : source.at("problems"))
            (p.at("correct_noq").get<bool>() ? split.easy : split.hard).insert(p.at("id").get<std::string>());
        std::set<std::string> ids;
        for (const auto& p : c.problems) ids.insert(p.id);
        std::set<std::string> all = split.easy;
        all.insert(split.hard.begin(), split.hard.end());
        if (all != ids) throw UsageError("report and corpus cover different problems");
    } else {
        split = easy_hard_partition(eval_report_from_json(source), c);
    }
    json j{{"kind", "partition"}, {"corpus", c.name}, {"easy", split.easy}, {"hard", split.hard}};
    Table t{{"Subset", "# Problems"}, {}};
    if (!o.full_report.empty()) {
        const EvalReport full = eval_report_from_json(read_json(o.full_report));
        const auto scores = easy_hard_accuracy(full, split);
        j["accuracy"] = {{"overall", accuracy_json(scores.overall)},
                         {"easy", accuracy_json(scores.easy)},
                         {"hard", accuracy_json(scores.hard)},
                         {"identity_holds", scores.identity_holds()}};
        if (!scores.identity_holds()) ctx.warn("Easy/Hard weighted accuracy does not reproduce the overall accuracy");
        t.columns.push_back("Accuracy");
        t.rows = {{"Easy", std::to_string(split.easy.size()), scores.easy.percent(1)},
                  {"Hard", std::to_string(split.hard.size()), scores.hard.percent(1)},
                  {"All", std::to_string(c.size()), scores.overall.percent(1)}};
    } else {
        t.rows = {{"Easy", std::to_string(split.easy.size())}, {"Hard", std::to_string(split.hard.size())}};
    }
    emit(ctx, "partition", j, t);
}

void cmd_attn(Context& ctx) {
    const Options& o = ctx.o;
    if (o.model.empty()) throw UsageError("attn needs --model <snapshot>");
    if (!fs::exists(o.model)) throw UsageError("model snapshot not found: " + o.model);
    const Corpus c = single_corpus(ctx);
    const NeuralModel model = NeuralModel::load(o.model);
    Corpus chosen;
    chosen.name = c.name;
    if (!o.ids.empty()) {
        for (const auto& id : o.ids) {
            const Problem* p = c.find(id);
            if (!p) throw UsageError("no problem '" + id + "' in " + c.name);
            chosen.problems.push_back(*p);
        }
    } else {
        chosen.problems = c.problems;
    }
    if (o.limit && chosen.size() > o.limit) chosen.problems.resize(o.limit);
    const auto reports = attention_reports(model, chosen, o.top_k);
    const FocusSummary summary = focus_summary(reports, o.threshold);

    json list = json::array();
    for (const auto& r : reports) list.push_back(to_json(r));
    json j{{"kind", "attention"}, {"corpus", c.name}, {"model", model.name()}, {"summary", to_json(summary)},
           {"reports", list}};

    std::ostringstream md;
    md << "Peak weight >= " << summary.threshold << " on " << summary.focused << " of " << summary.steps
       << " decode steps (" << std::fixed << std::setprecision(1) << 100.0 * summary.fraction() << "%).\n\n";
    for (const auto& r : reports) md << "```\n" << render_heatmap(r) << "```\n\n";

    Table t{{"id", "step", "output", "position", "token", "weight", "top"}, {}};
    for (const auto& r : reports) {
        for (std::size_t s = 0; s < r.steps.size(); ++s) {
            const auto& step = r.steps[s];
            for (std::size_t i = 0; i < step.weights.size(); ++i) {
                std::ostringstream w;
                w << std::fixed << std::setprecision(6) << step.weights[i];
                const bool top = std::find(step.top.begin(), step.top.end(), i) != step.top.end();
                t.rows.push_back({r.id, std::to_string(s), step.output, std::to_string(i), r.input_tokens[i], w.str(),
                                  top ? "1" : "0"});
            }
        }
    }
    emit(ctx, "attn", j, t, md.str());
}

void cmd_delta(Context& ctx) {
    const Options& o = ctx.o;
    if (o.report.empty()) throw UsageError("delta needs --report <evaluation report>");
    if (o.labels.empty()) throw UsageError("delta needs at least one --label");
    const Corpus c = single_corpus(ctx);
    const EvalReport full = eval_report_from_json(read_json(o.report));
    std::vector<AblationDelta> deltas;
    Table t{{"Label", "# Removed", "Acc(Full)", "Acc(Full - X)", "Delta"}, {}};
    for (const auto& label : o.labels) {
        if (!find_variation(label) && !find_category(label))
            ctx.warn("label '" + label + "' names no variation type or category; matching chains verbatim");
        AblationDelta d = ablation_delta(full, c, label);
        if (d.removed == 0) ctx.warn("no problem in " + c.name + " carries '" + label + "'");
        t.rows.push_back({d.label, std::to_string(d.removed), d.full.percent(1), d.remaining.percent(1),
                          d.delta_points(1)});
        deltas.push_back(std::move(d));
    }
    json j;
    if (deltas.size() == 1) {
        j = to_json(deltas.front());
    } else {
        j = {{"kind", "ablation_deltas"}, {"deltas", json::array()}};
        for (const auto& d : deltas) j["deltas"].push_back(to_json(d));
    }
    emit(ctx, "delta", j, t);
}

void cmd_breakdown(Context& ctx) {
    const Options& o = ctx.o;
    if (o.report.empty()) throw UsageError("breakdown needs --report <evaluation report>");
    const Corpus c = single_corpus(ctx);
    const EvalReport report = eval_report_from_json(read_json(o.report));
    const auto buckets = breakdown_by_num_count(report, c);
    json list = json::array();
    Table t{{"# Numbers", "# Problems", "Accuracy"}, {}};
    std::size_t correct = 0, total = 0;
    for (const auto& b : buckets) {
        list.push_back({{"bucket", b.label}, {"accuracy", accuracy_json(b.accuracy)}});
        t.rows.push_back({b.label, std::to_string(b.accuracy.total), b.accuracy.percent(1)});
        correct += b.accuracy.correct;
        total += b.accuracy.total;
    }
    const Accuracy overall = report.accuracy();
    const bool identity = correct == overall.correct && total == overall.total;
    if (!identity) ctx.warn("bucket counts do not add up to the report");
    t.rows.push_back({"All", std::to_string(overall.total), overall.percent(1)});
    emit(ctx, "breakdown",
         {{"kind", "breakdown"},
          {"corpus", c.name},
          {"model", report.model},
          {"overall", accuracy_json(overall)},
          {"buckets", list},
          {"identity_holds", identity}},
         t);
}

void report_diagnostics(Context& ctx, const std::vector<Diagnostic>& diagnostics) {
    for (const auto& d : diagnostics) {
        if (d.severity == Diagnostic::Severity::Warning) ctx.warn(d.template_id + ": " + d.message + " [" + d.code + "]");
        else ctx.err << d.str() << '\n';
    }
}

json diagnostics_json(const std::vector<Diagnostic>& diagnostics) {
    json list = json::array();
    for (const auto& d : diagnostics)
        list.push_back({{"severity", d.severity == Diagnostic::Severity::Error ? "error" : "warning"},
                        {"template", d.template_id},
                        {"code", d.code},
                        {"message", d.message}});
    return list;
}

std::pair<std::vector<VariationTemplate>, Lexicon> load_generation_inputs(const Options& o) {
    if (!fs::exists(o.templates)) throw UsageError("templates not found: " + o.templates);
    if (!fs::exists(o.lexicon)) throw UsageError("lexicon not found: " + o.lexicon);
    return {load_templates(o.templates), Lexicon::load(o.lexicon)};
}

/// Returns false when validation found errors.
bool cmd_validate_templates(Context& ctx) {
    const auto [templates, lex] = load_generation_inputs(ctx.o);
    const auto diagnostics = validate_templates(templates, lex, ctx.o.max_operators);
    report_diagnostics(ctx, diagnostics);
    Table t{{"Severity", "Template", "Code", "Message"}, {}};
    for (const auto& d : diagnostics)
        t.rows.push_back({d.severity == Diagnostic::Severity::Error ? "error" : "warning", d.template_id, d.code,
                          d.message});
    emit(ctx, "validate-templates",
         {{"kind", "template_validation"},
          {"templates", templates.size()},
          {"errors", std::count_if(diagnostics.begin(), diagnostics.end(),
                                   [](const Diagnostic& d) { return d.severity == Diagnostic::Severity::Error; })},
          {"diagnostics", diagnostics_json(diagnostics)}},
         t);
    return !has_errors(diagnostics);
}

bool cmd_generate(Context& ctx) {
    const Options& o = ctx.o;
    const auto [templates, lex] = load_generation_inputs(o);
    const auto diagnostics = validate_templates(templates, lex, o.max_operators);
    report_diagnostics(ctx, diagnostics);
    if (has_errors(diagnostics)) {
        ctx.err << "error: template validation failed; nothing generated\n";
        return false;
    }
    GenerationOptions g;
    g.per_template = o.per_template;
    g.seed = o.seed;
    g.max_operators = o.max_operators;
    g.jobs = o.jobs;
    g.name = o.name.empty() ? "generated" : o.name;
    g.constraints.positive_answer = !o.no_positive_answer;
    g.constraints.integral_division = !o.no_integral_division;
    g.constraints.positive_intermediates = !o.no_positive_intermediates;
    g.constraints.distinct_numbers = !o.no_distinct_numbers;
    g.constraints.attempts = o.attempts;
    const GenerationResult r = generate(templates, lex, g);
    for (const auto& f : r.failures)
        ctx.warn(f.template_id + (f.instance ? " #" + std::to_string(*f.instance) : std::string()) + ": " + f.message);

    const fs::path dest = !o.output.empty() ? fs::path(o.output)
                                            : fs::path(o.out_dir.empty() ? "." : o.out_dir) / (g.name + ".native.jsonl");
    std::ostringstream native;
    write_native(native, r.corpus);
    write_file(dest, native.str());
    ctx.note("wrote " + dest.string());

    json j = generation_report(r, templates, lex, g);
    j["output"] = dest.filename().string();
    Table t{{"Template", "Requested", "Produced"}, {}};
    for (const auto& entry : j["templates"])
        t.rows.push_back({entry["id"].get<std::string>(), std::to_string(entry["requested"].get<std::size_t>()),
                          std::to_string(entry["produced"].get<std::size_t>())});
    emit(ctx, "generate", j, t);
    return true;
}

// ---------------------------------------------------------------------------
// Command line

void add_common(CLI::App* s, Options& o) {
    s->add_option("--config", o.config, "Key = value file (TOML); [section] names a subcommand; flags win");
    s->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"json", "md", "markdown", "csv"}));
    s->add_option("--out", o.out_dir, "Directory for the report and other outputs (default: standard output)");
    s->add_flag("--strict", o.strict, "Exit with status 1 when warnings were issued");
    s->add_flag("--verbose", o.verbose, "Progress and per-record warnings on standard error");
}

void add_corpus(CLI::App* s, Options& o, const std::string& help) {
    s->add_option("--corpus", o.corpora, help);
    s->add_option("--source-format", o.source_format, "Force the corpus reader: asdiv-xml, mawps-json, svamp-json or native-json");
    s->add_flag("--all-types", o.all_types, "ASDiv: keep non-arithmetic problems");
}

void add_predictor(CLI::App* s, Options& o) {
    s->add_option("--model", o.model, "Trained model snapshot");
    s->add_option("--baseline", o.baseline, "Non-neural predictor: majority or gold");
    s->add_option("--variant", o.variant, "Train a model per fold: constrained or seq2seq");
}

void add_training(CLI::App* s, Options& o) {
    s->add_option("--seed", o.seed, "Seed for initialization, ordering, dropout and holdout");
    s->add_option("--embedding", o.embedding, "Embedding size");
    s->add_option("--hidden", o.hidden, "Hidden size");
    s->add_option("--layers", o.layers, "Recurrent layers (seq2seq encoder and decoder)");
    s->add_option("--dropout", o.dropout, "Dropout rate");
    s->add_option("--lr", o.lr, "Learning rate");
    s->add_option("--embedding-lr", o.embedding_lr, "Embedding learning rate");
    s->add_option("--batch", o.batch, "Batch size");
    s->add_option("--epochs", o.epochs, "Epochs");
    s->add_option("--clip", o.clip, "Gradient norm clip");
    s->add_option("--max-decode", o.max_decode, "Longest decoded prefix equation");
    s->add_option("--validation-fraction", o.validation_fraction, "Share of training problems held out for selection");
}

void add_folds(CLI::App* s, Options& o) {
    s->add_option("--folds", o.folds, "equal-five, fixed:<a,b,c,d,e> or seed-grouped");
    s->add_flag("--shuffle", o.shuffle, "Shuffle before dealing folds, using --seed");
    s->add_option("--jobs", o.jobs, "Folds run in parallel")->check(CLI::PositiveNumber);
}

void add_tolerance(CLI::App* s, Options& o) {
    s->add_option("--tolerance", o.tolerance, "Relative answer tolerance");
}

void add_generation(CLI::App* s, Options& o) {
    s->add_option("--templates", o.templates, "Template file or directory of .txt files");
    s->add_option("--lexicon", o.lexicon, "Lexicon JSON");
    s->add_option("--max-operators", o.max_operators, "Operator cap per equation");
}

/// Subcommand names from the start of `args`, e.g. {"probe", "noq"}.
std::vector<std::string> command_path(CLI::App& app, const std::vector<std::string>& args) {
    std::vector<std::string> path;
    CLI::App* current = &app;
    for (const auto& a : args) {
        if (a.starts_with("-")) continue;
        CLI::App* next = nullptr;
        try {
            next = current->get_subcommand(a);
        } catch (const CLI::OptionNotFound&) {
            break;
        }
        path.push_back(a);
        current = next;
        if (current->get_subcommands({}).empty()) break;
    }
    return path;
}

CLI::App* resolve(CLI::App& app, const std::vector<std::string>& path) {
    CLI::App* current = &app;
    for (const auto& p : path) current = current->get_subcommand(p);
    return current;
}

/// Inserts config-file values right after the subcommand, skipping options
/// the command line sets itself.
std::vector<std::string> apply_config(CLI::App& app, const std::vector<std::string>& args) {
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].starts_with("--config=")) path = args[i].substr(9);
    }
    if (!path) return args;
    const auto command = command_path(app, args);
    if (command.empty()) return args;
    CLI::App* target = resolve(app, command);

    std::ifstream in(*path);
    if (!in) throw UsageError("cannot read config file " + *path);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw UsageError("config file " + *path + ": " + e.what());
    }
    std::string section;
    for (const auto& c : command) section += (section.empty() ? "" : ".") + c;

    std::map<std::string, std::vector<std::string>> values; // section entries override root entries
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& item : items) {
            if (item.name.empty() || item.name == "++" || item.name == "--") continue;
            std::string scope;
            for (const auto& p : item.parents) scope += (scope.empty() ? "" : ".") + p;
            const bool in_section = scope == section || scope == CLI::detail::join(command, "-");
            if ((pass == 0 && !scope.empty()) || (pass == 1 && !in_section)) continue;
            std::string name = item.name;
            std::replace(name.begin(), name.end(), '_', '-');
            if (name == "config") continue;
            if (!target->get_option_no_throw("--" + name)) {
                if (in_section) throw UsageError("config key '" + item.name + "' is not an option of '" + section + "'");
                continue; // a shared manifest may hold keys for other subcommands
            }
            values[name] = item.inputs;
        }
    }

    std::vector<std::string> injected;
    for (const auto& [name, inputs] : values) {
        const std::string flag = "--" + name;
        const bool given = std::any_of(args.begin(), args.end(),
                                       [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
        if (given) continue;
        const CLI::Option* opt = target->get_option_no_throw(flag);
        if (opt->get_expected_max() == 0) {
            const std::string v = inputs.empty() ? "true" : inputs.front();
            if (v == "true" || v == "1" || v == "yes" || v == "on") injected.push_back(flag);
            continue;
        }
        for (const auto& v : inputs) {
            injected.push_back(flag);
            injected.push_back(v);
        }
    }
    // Position right after the last subcommand token.
    std::vector<std::string> out;
    std::size_t matched = 0;
    bool inserted = false;
    for (const auto& a : args) {
        out.push_back(a);
        if (!inserted && matched < command.size() && a == command[matched] && ++matched == command.size()) {
            out.insert(out.end(), injected.begin(), injected.end());
            inserted = true;
        }
    }
    return out;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Context ctx{{}, out, err, {}, {}};
    Options& o = ctx.o;

    CLI::App app{"Probe math word problem corpora for shallow heuristics and generate challenge problems.", "mwp"};
    app.require_subcommand(1);
    app.add_option("--config", o.config, "Key = value file (TOML); [section] names a subcommand; flags win");

    auto* ingest_cmd = app.add_subcommand("ingest", "Convert an ASDiv, MAWPS or SVAMP file into the native format");
    add_common(ingest_cmd, o);
    ingest_cmd->add_option("--from", o.from, "Source file")->required();
    ingest_cmd->add_option("--source-format", o.source_format, "asdiv-xml, mawps-json, svamp-json or native-json (default: detect)");
    ingest_cmd->add_option("--name", o.name, "Corpus name (default: file name up to the first dot)");
    ingest_cmd->add_option("--output", o.output, "Native file to write (default: <out|MWP_CACHE_DIR|.>/<name>.native.jsonl)");
    ingest_cmd->add_flag("--all-types", o.all_types, "ASDiv: keep non-arithmetic problems");

    auto* stats_cmd = app.add_subcommand("stats", "Problem, template, operator and lexical diversity statistics");
    add_common(stats_cmd, o);
    add_corpus(stats_cmd, o, "Corpus file; repeat for several rows");
    stats_cmd->add_option("--diversity-method", o.diversity_method, "Lexical diversity method");
    stats_cmd->add_option("--diversity-threshold", o.diversity_threshold, "Similarity threshold for clustering");

    auto* folds_cmd = app.add_subcommand("folds", "Show the cross-validation partition");
    add_common(folds_cmd, o);
    add_corpus(folds_cmd, o, "Corpus file");
    add_folds(folds_cmd, o);
    folds_cmd->add_option("--seed", o.seed, "Shuffle seed (with --shuffle)");

    auto* train_cmd = app.add_subcommand("train", "Train one model and write a snapshot");
    add_common(train_cmd, o);
    add_corpus(train_cmd, o, "Training corpus");
    train_cmd->add_option("--variant", o.variant, "constrained or seq2seq");
    train_cmd->add_option("--model", o.model, "Snapshot path to write (default: <out>/model.mwps)");
    train_cmd->add_option("--validation", o.validation, "Validation corpus (default: a holdout of the training corpus)");
    add_training(train_cmd, o);

    auto* eval_cmd = app.add_subcommand("eval", "Execution accuracy of a model or baseline");
    add_common(eval_cmd, o);
    add_corpus(eval_cmd, o, "Test corpus");
    add_predictor(eval_cmd, o);
    add_folds(eval_cmd, o);
    add_training(eval_cmd, o);
    add_tolerance(eval_cmd, o);
    eval_cmd->add_option("--train", o.train, "Train on these corpora and test on --corpus instead of cross-validating");

    auto* probe_cmd = app.add_subcommand("probe", "Dataset-artifact probes");
    probe_cmd->require_subcommand(1);
    auto* noq_cmd = probe_cmd->add_subcommand("noq", "Train on full problems, test with and without the question");
    add_common(noq_cmd, o);
    add_corpus(noq_cmd, o, "Corpus file");
    add_predictor(noq_cmd, o);
    add_folds(noq_cmd, o);
    add_training(noq_cmd, o);
    add_tolerance(noq_cmd, o);

    auto* partition_cmd = app.add_subcommand("partition", "Split problems into Easy and Hard from a question-removed run");
    add_common(partition_cmd, o);
    add_corpus(partition_cmd, o, "Corpus the report covers");
    partition_cmd->add_option("--report", o.report, "Question-removed evaluation or probe report");
    partition_cmd->add_option("--full", o.full_report, "Full-question evaluation report to score on Easy and Hard");

    auto* attn_cmd = app.add_subcommand("attn", "Attention weights per decode step");
    add_common(attn_cmd, o);
    add_corpus(attn_cmd, o, "Corpus file");
    attn_cmd->add_option("--model", o.model, "Trained model snapshot");
    attn_cmd->add_option("--id", o.ids, "Problem id; repeat for several (default: all)");
    attn_cmd->add_option("--limit", o.limit, "At most this many problems (0: no limit)");
    attn_cmd->add_option("--top-k", o.top_k, "Tokens highlighted per step");
    attn_cmd->add_option("--threshold", o.threshold, "Peak weight counted as single-token focus");

    auto* delta_cmd = app.add_subcommand("delta", "Accuracy change from removing problems made with a variation");
    add_common(delta_cmd, o);
    add_corpus(delta_cmd, o, "Corpus the report covers");
    delta_cmd->add_option("--report", o.report, "Evaluation report on the full corpus");
    delta_cmd->add_option("--label", o.labels, "Variation type or category; repeat for several");

    auto* breakdown_cmd = app.add_subcommand("breakdown", "Accuracy by how many numbers a problem mentions");
    add_common(breakdown_cmd, o);
    add_corpus(breakdown_cmd, o, "Corpus the report covers");
    breakdown_cmd->add_option("--report", o.report, "Evaluation report");

    auto* generate_cmd = app.add_subcommand("generate", "Instantiate variation templates into a corpus");
    add_common(generate_cmd, o);
    add_generation(generate_cmd, o);
    generate_cmd->add_option("--per-template", o.per_template, "Problems per template");
    generate_cmd->add_option("--seed", o.seed, "Master seed");
    generate_cmd->add_option("--jobs", o.jobs, "Templates run in parallel")->check(CLI::PositiveNumber);
    generate_cmd->add_option("--name", o.name, "Corpus name (default: generated)");
    generate_cmd->add_option("--output", o.output, "Native file to write (default: <out|.>/<name>.native.jsonl)");
    generate_cmd->add_option("--attempts", o.attempts, "Samples tried per instance")->check(CLI::PositiveNumber);
    generate_cmd->add_flag("--no-positive-answer", o.no_positive_answer, "Allow answers <= 0");
    generate_cmd->add_flag("--no-integral-division", o.no_integral_division, "Allow fractional quotients");
    generate_cmd->add_flag("--no-positive-intermediates", o.no_positive_intermediates,
                           "Allow intermediate results <= 0");
    generate_cmd->add_flag("--no-distinct-numbers", o.no_distinct_numbers, "Allow repeated number values");

    auto* validate_cmd = app.add_subcommand("validate-templates", "Check templates against the lexicon and taxonomy");
    add_common(validate_cmd, o);
    add_generation(validate_cmd, o);

    try {
        std::vector<std::string> argv = apply_config(app, args);
        std::reverse(argv.begin(), argv.end());
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kError;
    }

    try {
        bool ok = true;
        if (*ingest_cmd) cmd_ingest(ctx);
        else if (*stats_cmd) cmd_stats(ctx);
        else if (*folds_cmd) cmd_folds(ctx);
        else if (*train_cmd) cmd_train(ctx);
        else if (*eval_cmd) cmd_eval(ctx);
        else if (*noq_cmd) cmd_probe_noq(ctx);
        else if (*partition_cmd) cmd_partition(ctx);
        else if (*attn_cmd) cmd_attn(ctx);
        else if (*delta_cmd) cmd_delta(ctx);
        else if (*breakdown_cmd) cmd_breakdown(ctx);
        else if (*generate_cmd) ok = cmd_generate(ctx);
        else if (*validate_cmd) ok = cmd_validate_templates(ctx);
        if (!ok) return kError;
    } catch (const IngestError& e) {
        err << "error: " << e.what() << '\n';
        for (const auto& r : e.records()) err << "  " << r << '\n';
        return kError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kError;
    }
    if (o.strict && !ctx.warnings.empty()) return kWarnings;
    return kOk;
}

} // namespace mwp::cli
