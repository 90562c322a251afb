#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mwp/cli.hpp"
#include "mwp/experiment.hpp"
#include "mwp/genesis.hpp"
#include "mwp/metrics.hpp"
#include "mwp/neural.hpp"
#include "mwp/probes.hpp"

namespace py = pybind11;
using namespace mwp;
using nlohmann::json;

namespace {

// Structured results cross the boundary as JSON text; the Python package
// turns them into dicts.
std::string dumped(const json& j) { return j.dump(); }

std::vector<Rational> rationals(const std::vector<std::string>& values) {
    std::vector<Rational> out;
    for (const auto& v : values) {
        auto r = parse_decimal(v);
        if (!r) throw std::invalid_argument("not a number: '" + v + "'");
        out.push_back(*r);
    }
    return out;
}

Folds folds_from(const Corpus& c, const std::string& scheme, std::optional<std::uint64_t> shuffle_seed) {
    FoldScheme s = parse_fold_scheme(scheme);
    s.shuffle_seed = shuffle_seed;
    return make_folds(c, s);
}

CvOptions cv_options(std::size_t jobs) {
    CvOptions o;
    o.jobs = jobs;
    return o;
}

PredictorFactory factory(const std::string& predictor) {
    if (predictor == "majority") return majority_factory();
    if (predictor == "gold") return fixed_factory(std::make_shared<GoldPredictor>());
    return fixed_factory(std::make_shared<NeuralModel>(NeuralModel::load(predictor)));
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Math word problem corpora, probes, models and challenge-set generation";

    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<IngestError>(m, "IngestError", PyExc_ValueError);
    py::register_exception<TemplateError>(m, "TemplateError", PyExc_ValueError);

    py::class_<Expr>(m, "Expr")
        .def("infix", [](const Expr& e) { return render_infix(e); })
        .def("prefix", [](const Expr& e) { return to_prefix(e); })
        .def("template", [](const Expr& e) { return template_of(e).str(); })
        .def("operator_count", [](const Expr& e) { return operator_count(e); })
        .def(
            "evaluate",
            [](const Expr& e, const std::vector<std::string>& bindings) {
                return to_exact_string(evaluate(e, rationals(bindings)));
            },
            py::arg("bindings") = std::vector<std::string>{},
            "Exact value as a decimal or fraction string; slot k binds bindings[k - 1].")
        .def("__eq__", [](const Expr& a, const Expr& b) { return a == b; })
        .def("__repr__", [](const Expr& e) { return "Expr('" + render_infix(e) + "')"; });

    m.def("parse_infix", [](const std::string& text) { return parse_infix(text); }, py::arg("text"));
    m.def("parse_prefix", [](const std::string& text) { return parse_prefix(std::string_view(text)); },
          py::arg("text"));

    py::class_<Problem>(m, "Problem")
        .def_readonly("id", &Problem::id)
        .def_readonly("body", &Problem::body_text)
        .def_readonly("question", &Problem::question_text)
        .def_property_readonly("tokens", &Problem::tokens)
        .def_property_readonly("numbers",
                               [](const Problem& p) {
                                   std::vector<std::string> out;
                                   for (const auto& v : p.number_values()) out.push_back(to_exact_string(v));
                                   return out;
                               })
        .def_readonly("equation", &Problem::equation)
        .def_property_readonly("answer", [](const Problem& p) { return to_exact_string(p.answer); })
        .def_readonly("grade", &Problem::grade)
        .def_readonly("type", &Problem::ptype)
        .def_readonly("variation_chain", &Problem::variation_chain)
        .def_readonly("seed_id", &Problem::seed_id)
        .def("__repr__", [](const Problem& p) { return "Problem('" + p.id + "')"; });

    py::class_<Corpus>(m, "Corpus")
        .def_readonly("name", &Corpus::name)
        .def("__len__", &Corpus::size)
        .def(
            "__getitem__",
            [](const Corpus& c, std::ptrdiff_t i) -> const Problem& {
                const auto n = static_cast<std::ptrdiff_t>(c.size());
                if (i < 0) i += n;
                if (i < 0 || i >= n) throw py::index_error();
                return c.problems[static_cast<std::size_t>(i)];
            },
            py::return_value_policy::reference_internal)
        .def(
            "find",
            [](const Corpus& c, const std::string& id) { return c.find(id); },
            py::return_value_policy::reference_internal)
        .def("fingerprint", [](const Corpus& c) { return fingerprint(c); })
        .def("to_native",
             [](const Corpus& c) {
                 std::ostringstream out;
                 write_native(out, c);
                 return out.str();
             })
        .def("__repr__", [](const Corpus& c) {
            return "Corpus('" + c.name + "', " + std::to_string(c.size()) + " problems)";
        });

    m.def(
        "load_corpus",
        [](const std::filesystem::path& path, const std::string& format, std::optional<bool> arithmetic_only,
           const std::string& name) {
            SourceFormat f = detect_format(path);
            if (!format.empty()) {
                auto parsed = parse_source_format(format);
                if (!parsed) throw std::invalid_argument("unknown source format '" + format + "'");
                f = *parsed;
            }
            IngestOptions o;
            o.arithmetic_only = arithmetic_only.value_or(f == SourceFormat::AsdivXml);
            o.name = name;
            return ingest(path, f, o).corpus;
        },
        py::arg("path"), py::arg("format") = "", py::arg("arithmetic_only") = py::none(), py::arg("name") = "");
    m.def(
        "corpus_from_native",
        [](const std::string& text, const std::string& name) {
            IngestOptions o;
            o.name = name;
            return ingest_string(text, SourceFormat::NativeJson, o).corpus;
        },
        py::arg("text"), py::arg("name") = "corpus");

    m.def(
        "template_stats_json",
        [](const Corpus& c, bool canonicalize) {
            const TemplateStats s = template_stats(c, {.canonicalize_commutative = canonicalize});
            json freq = json::array();
            for (const auto& [t, n] : s.frequencies) freq.push_back({t, n});
            return dumped({{"problems", s.problems},
                           {"distinct", s.distinct},
                           {"average_operators", to_exact_string(s.average_operators)},
                           {"frequencies", freq}});
        },
        py::arg("corpus"), py::arg("canonicalize_commutative") = false);
    m.def(
        "lexical_diversity",
        [](const Corpus& c, const std::string& method, double threshold) {
            return lexical_diversity(c, {method, threshold}).value;
        },
        py::arg("corpus"), py::arg("method") = "greedy-bleu2", py::arg("threshold") = 0.5);
    m.def(
        "make_folds",
        [](const Corpus& c, const std::string& scheme, std::optional<std::uint64_t> shuffle_seed) {
            return folds_from(c, scheme, shuffle_seed).folds;
        },
        py::arg("corpus"), py::arg("scheme") = "equal-five", py::arg("shuffle_seed") = py::none());

    m.def(
        "cross_validate_json",
        [](const Corpus& c, const std::string& predictor, const std::string& scheme, std::size_t jobs) {
            py::gil_scoped_release release;
            return dumped(to_json(cross_validate(c, folds_from(c, scheme, std::nullopt), factory(predictor),
                                                 cv_options(jobs))
                                      .report()));
        },
        py::arg("corpus"), py::arg("predictor") = "majority", py::arg("folds") = "equal-five", py::arg("jobs") = 1,
        "predictor: 'majority', 'gold' or a model snapshot path.");
    m.def(
        "noq_probe_json",
        [](const Corpus& c, const std::string& predictor, const std::string& scheme, std::size_t jobs) {
            py::gil_scoped_release release;
            return dumped(to_json(noq_probe(c, folds_from(c, scheme, std::nullopt), factory(predictor),
                                            cv_options(jobs))));
        },
        py::arg("corpus"), py::arg("predictor") = "majority", py::arg("folds") = "equal-five", py::arg("jobs") = 1);
    m.def(
        "ablation_delta_json",
        [](const std::string& report, const Corpus& c, const std::string& label) {
            return dumped(to_json(ablation_delta(eval_report_from_json(json::parse(report)), c, label)));
        },
        py::arg("report"), py::arg("corpus"), py::arg("label"));
    m.def("remove_questions", &remove_questions, py::arg("corpus"));

    py::class_<NeuralModel, std::shared_ptr<NeuralModel>>(m, "Model")
        .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<NeuralModel>(NeuralModel::load(p)); })
        .def_static(
            "train",
            [](const Corpus& train_set, const std::string& config, double validation_fraction) {
                py::gil_scoped_release release;
                const ModelConfig cfg = model_config_from_json(json::parse(config));
                auto [fit, val] = holdout_split(train_set, validation_fraction, derive_seed(cfg.seed, "holdout"));
                auto model = std::make_shared<NeuralModel>(cfg, Vocab::build(fit));
                train(*model, fit, val);
                return model;
            },
            py::arg("corpus"), py::arg("config"), py::arg("validation_fraction") = 0.1,
            "config: JSON object with 'variant' and optional hyperparameters.")
        .def("save", [](const NeuralModel& m, const std::filesystem::path& p) { m.save(p); })
        .def("name", &NeuralModel::name)
        .def("config_json", [](const NeuralModel& m) { return dumped(to_json(m.config())); })
        .def("predict",
             [](const NeuralModel& m, const Corpus& c) {
                 std::map<std::string, std::optional<std::string>> out;
                 for (const auto& [id, e] : m.predict_all(c))
                     out[id] = e ? std::optional<std::string>(render_infix(*e)) : std::nullopt;
                 return out;
             })
        .def("evaluate_json",
             [](const NeuralModel& m, const Corpus& c) {
                 EvalReport r = execution_accuracy(m.predict_all(c), c);
                 r.model = m.name();
                 return dumped(to_json(r));
             })
        .def(
            "attention_json",
            [](const NeuralModel& m, const Corpus& c, std::size_t top_k) {
                json list = json::array();
                for (const auto& r : attention_reports(m, c, top_k)) list.push_back(to_json(r));
                return dumped(list);
            },
            py::arg("corpus"), py::arg("top_k") = 3);

    m.def(
        "generate",
        [](const std::filesystem::path& templates, const std::filesystem::path& lexicon, std::size_t per_template,
           std::uint64_t seed, std::size_t jobs, std::size_t max_operators, const std::string& name) {
            const auto ts = load_templates(templates);
            const Lexicon lex = Lexicon::load(lexicon);
            GenerationOptions o;
            o.per_template = per_template;
            o.seed = seed;
            o.jobs = jobs;
            o.max_operators = max_operators;
            o.name = name;
            GenerationResult r;
            {
                py::gil_scoped_release release;
                r = generate(ts, lex, o);
            }
            return std::make_pair(r.corpus, dumped(generation_report(r, ts, lex, o)));
        },
        py::arg("templates"), py::arg("lexicon"), py::arg("per_template") = 50, py::arg("seed") = 1,
        py::arg("jobs") = 1, py::arg("max_operators") = 2, py::arg("name") = "generated");
    m.def(
        "validate_templates",
        [](const std::filesystem::path& templates, const std::filesystem::path& lexicon, std::size_t max_operators) {
            std::vector<std::string> out;
            for (const auto& d : validate_templates(load_templates(templates), Lexicon::load(lexicon), max_operators))
                out.push_back(d.str());
            return out;
        },
        py::arg("templates"), py::arg("lexicon"), py::arg("max_operators") = 2);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one `mwp` command; returns (exit code, stdout, stderr).");
}
