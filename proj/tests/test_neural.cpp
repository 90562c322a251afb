#include <doctest.h>

#include <filesystem>
#include <numeric>

#include "mwp/neural.hpp"
#include "support/fixtures.hpp"

using namespace mwp;

namespace {

Problem problem(const std::string& id, const std::string& body, const std::string& question,
                const std::string& equation) {
    RawProblem raw{.id = id, .body = body, .question = question, .equation = parse_infix(equation),
                   .answer = evaluate(parse_infix(equation))};
    return make_problem(raw);
}

Corpus toy_corpus() {
    Corpus c;
    c.name = "toy";
    c.problems = {
        problem("a", "Jack had 8 pens. He gave 3 pens to Mary.", "How many pens does Jack have now?", "8 - 3"),
        problem("b", "Each box holds 6 eggs. There are 4 boxes.", "How many eggs are there?", "6 * 4"),
        problem("c", "Ann has 5 red and 7 blue beads.", "How many beads in all?", "5 + 7"),
        problem("d", "Tom shares 12 cakes among 4 kids.", "How many cakes does each kid get?", "12 / 4"),
    };
    return c;
}

ModelConfig tiny(Variant v, int layers = 1) {
    ModelConfig c = ModelConfig::defaults(v);
    c.embedding = 3;
    c.hidden = 4;
    c.layers = layers;
    c.dropout = 0;
    c.seed = 7;
    return c;
}

std::vector<const Problem*> pointers(const Corpus& c, std::size_t n) {
    std::vector<const Problem*> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(&c.problems[i]);
    return out;
}

} // namespace

TEST_CASE("grad_check on simple functions") {
    nn::ParameterStore params;
    auto& theta = params.add("theta", 3, 2);
    theta.value << 0.3, -1.2, 2.0, 0.7, -0.4, 1.1;
    CHECK(nn::grad_check([&](nn::Graph& g) { return g.sum_squares(g.param(theta)); }, params) < 1e-6);
    params.zero_grad();
    {
        nn::Graph g;
        auto out = g.sum_squares(g.param(theta));
        g.backward(out);
    }
    CHECK((params.at("theta").grad - 2 * theta.value).norm() < 1e-12);

    auto constant = [&](nn::Graph& g) {
        g.param(theta);
        return g.constant(nn::Matrix::Constant(1, 1, 4.0));
    };
    CHECK(nn::grad_check(constant, params) == 0.0);
    CHECK(params.at("theta").grad.norm() == 0.0);
    CHECK_THROWS_AS(nn::grad_check(constant, params, 1e-1), std::invalid_argument);
    auto nan = [&](nn::Graph& g) { return g.scale(g.sum_squares(g.param(theta)), std::nan("")); };
    CHECK_THROWS_AS(nn::grad_check(nan, params), std::domain_error);
}

TEST_CASE("grad_check of every engine operation") {
    nn::ParameterStore params;
    auto init = [&](const char* name, int r, int c, double offset) -> nn::Parameter& {
        auto& p = params.add(name, r, c);
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = std::sin(1.7 * i + offset);
        return p;
    };
    auto& A = init("A", 3, 4, 0.1);
    auto& B = init("B", 4, 2, 0.7);
    auto& bias = init("bias", 3, 1, 1.3);
    auto& table = init("table", 3, 5, 2.1);
    auto& r = init("r", 1, 2, 0.4);
    const nn::Matrix mask = (nn::Matrix(3, 2) << 1, 1, 1, 0, 1, 1).finished();
    auto f = [&](nn::Graph& g) {
        auto x = g.add_bias(g.matmul(g.param(A), g.param(B)), g.param(bias));
        auto y = g.hadamard(g.sigmoid(x), g.tanh(g.scale(x, 0.5)));
        auto z = g.gather_cols(g.param(table), {4, 1});
        auto w = g.add(g.relu(g.add(z, g.constant(nn::Matrix::Constant(3, 2, 0.05)))), y);
        auto cat = g.concat_rows({w, g.slice_rows(x, 1, 2)});
        auto scores = g.stack_rows({g.colwise_dot(w, y), g.row(x, 0), g.row(cat, 4)});
        auto alpha = g.softmax_cols(scores, mask);
        auto mixed = g.mul_row_broadcast(w, g.row(alpha, 1));
        auto cols = g.mul_cols(g.mul_const(mixed, nn::Matrix::Constant(3, 2, 1.5)), nn::RowVector::LinSpaced(2, 0.5, 2));
        auto logits = g.sum({cat.graph->slice_rows(cat, 0, 3), cols, g.mul_row_broadcast(y, g.param(r))});
        return g.add(g.cross_entropy(logits, {2, 0}, {0.5, 0.5}), g.scale(g.sum_squares(alpha), 0.1));
    };
    for (const auto& [name, err] : nn::grad_check_blocks(f, params)) {
        INFO(name);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("gradient checks on both model variants") {
    Corpus c = toy_corpus();
    Vocab vocab = Vocab::build(c);
    for (auto [variant, layers] : {std::pair{Variant::Constrained, 1}, std::pair{Variant::Seq2Seq, 2}}) {
        NeuralModel model(tiny(variant, layers), vocab);
        auto batch = pointers(c, 2);
        auto blocks = nn::grad_check_blocks([&](nn::Graph& g) { return model.batch_loss(g, batch); },
                                            model.parameters(), 1e-5);
        CHECK(blocks.size() == model.parameters().all().size());
        for (const auto& [name, err] : blocks) {
            INFO(to_string(variant), " ", name);
            CHECK(err < 1e-3);
        }
    }
}

TEST_CASE("model construction follows the variant") {
    Corpus c = toy_corpus();
    Vocab vocab = Vocab::build(c);
    CHECK(vocab.max_numbers() == 2);
    CHECK(vocab.output() == std::vector<std::string>{"<end>", "+", "-", "*", "/", "N1", "N2"});
    CHECK(vocab.input_tokens(c.problems[0])[2] == "<N1>");

    NeuralModel constrained(tiny(Variant::Constrained), vocab);
    for (const auto* p : constrained.parameters().all()) CHECK_FALSE(p->name.starts_with("enc."));
    CHECK(constrained.parameters().contains("ffn.W1"));
    NeuralModel s2s(tiny(Variant::Seq2Seq, 2), vocab);
    CHECK(s2s.parameters().contains("enc.bwd1.U"));
    CHECK_FALSE(s2s.parameters().contains("ffn.W1"));

    const double bound = 1.0 / std::sqrt(4.0);
    for (const auto* p : s2s.parameters().all()) CHECK(p->value.cwiseAbs().maxCoeff() <= bound);

    auto d = ModelConfig::defaults(Variant::Constrained);
    CHECK(d.embedding == 128);
    CHECK(d.hidden == 384);
    CHECK(d.layers == 1);
    CHECK(d.batch == 16);
    CHECK(d.epochs == 60);
    auto s = ModelConfig::defaults(Variant::Seq2Seq);
    CHECK(s.embedding == 256);
    CHECK(s.hidden == 256);
    CHECK(s.layers == 2);
    CHECK(s.batch == 8);
    CHECK(s.embedding_lr == doctest::Approx(8e-4));
    ModelConfig bad = d;
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("decoded tokens become expressions") {
    std::string why;
    auto e = expr_from_tokens({"*", "N1", "N2"}, 2, &why);
    REQUIRE(e);
    const std::vector<Rational> numbers{3, 8};
    CHECK(evaluate(*e, numbers) == 24);
    CHECK_FALSE(expr_from_tokens({"+", "N1"}, 2, &why));
    CHECK(why.starts_with("ill-formed"));
    CHECK_FALSE(expr_from_tokens({"N3"}, 2, &why));
    CHECK(why == "slot out of range");
    CHECK_FALSE(expr_from_tokens({"-", "N1", "N2", "N1"}, 2));
    CHECK_FALSE(expr_from_tokens({}, 2));
}

TEST_CASE("gold stub predicts the annotated equation") {
    Corpus c = toy_corpus();
    GoldPredictor gold;
    auto e = gold.predict(c.problems[0]);
    REQUIRE(e);
    CHECK(render_infix(*e) == "N1 - N2");
    CHECK(evaluate(*e, c.problems[0].number_values()) == 5);
    CHECK(execution_accuracy(gold.predict_all(c), c).accuracy() == Accuracy{4, 4});
}

TEST_CASE("attention rows are distributions") {
    Corpus c = toy_corpus();
    Vocab vocab = Vocab::build(c);
    for (auto variant : {Variant::Constrained, Variant::Seq2Seq}) {
        ModelConfig cfg = tiny(variant);
        cfg.hidden = 32;
        NeuralModel model(cfg, vocab);
        for (const auto& d : model.decode(pointers(c, 4))) {
            REQUIRE_FALSE(d.attention.empty());
            for (const auto& row : d.attention) {
                CHECK(row.size() == d.input_tokens.size());
                double total = 0;
                for (double w : row) {
                    CHECK(w >= 0);
                    total += w;
                }
                CHECK(std::abs(total - 1.0) < 1e-6);
                // Untrained scores are small, so weights stay close to uniform.
                const double uniform = 1.0 / static_cast<double>(row.size());
                for (double w : row) CHECK(std::abs(w - uniform) < 0.5 * uniform);
            }
        }
    }
}

TEST_CASE("constrained model ignores word order") {
    Corpus c = toy_corpus();
    Vocab vocab = Vocab::build(c);
    ModelConfig cfg = tiny(Variant::Constrained);
    cfg.hidden = 16;
    NeuralModel model(cfg, vocab);
    const auto ids = vocab.encode_input(c.problems[1]);
    std::vector<std::size_t> perm(ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(3);
    rng.shuffle(perm);
    std::vector<int> shuffled(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) shuffled[i] = ids[perm[i]];

    CHECK((model.pooled_state(ids) - model.pooled_state(shuffled)).cwiseAbs().maxCoeff() < 1e-12);
    auto decoded = model.decode_ids({ids, shuffled}, {2, 2});
    CHECK(decoded[0].output_tokens == decoded[1].output_tokens);
    REQUIRE(decoded[0].attention.size() == decoded[1].attention.size());
    for (std::size_t s = 0; s < decoded[0].attention.size(); ++s)
        for (std::size_t i = 0; i < ids.size(); ++i)
            CHECK(decoded[1].attention[s][i] == doctest::Approx(decoded[0].attention[s][perm[i]]).epsilon(1e-9));
}

TEST_CASE("training overfits a handful of problems") {
    Corpus c = toy_corpus();
    ModelConfig cfg = ModelConfig::defaults(Variant::Constrained);
    cfg.embedding = 16;
    cfg.hidden = 32;
    cfg.batch = 4;
    cfg.epochs = 200;
    cfg.lr = 1e-2;
    cfg.embedding_lr = 1e-2;
    cfg.dropout = 0;
    NeuralModel model(cfg, Vocab::build(c));
    auto report = train(model, c, Corpus{});
    CHECK(report.used == 4);
    CHECK(model.log().size() == 200);
    CHECK(model.log().back().loss < model.log().front().loss);
    CHECK(model.token_accuracy(c) >= 0.95);
}

TEST_CASE("training is deterministic and snapshots round trip") {
    Corpus c = toy_corpus();
    ModelConfig cfg = tiny(Variant::Seq2Seq);
    cfg.embedding = 8;
    cfg.hidden = 8;
    cfg.epochs = 4;
    cfg.batch = 2;
    cfg.dropout = 0.1;
    auto run = [&] {
        NeuralModel m(cfg, Vocab::build(c));
        train(m, c, c);
        return m;
    };
    NeuralModel a = run();
    NeuralModel b = run();
    CHECK(a.log_csv() == b.log_csv());
    CHECK(a.log_csv().starts_with("epoch,loss,val_acc\n1,"));

    const auto path = std::filesystem::temp_directory_path() / "mwp_snapshot_test.bin";
    a.save(path);
    NeuralModel loaded = NeuralModel::load(path);
    std::filesystem::remove(path);
    CHECK(loaded.vocab().input() == a.vocab().input());
    CHECK(loaded.config().hidden == a.config().hidden);
    CHECK(loaded.log_csv() == a.log_csv());
    for (const auto* p : a.parameters().all()) {
        const auto& q = loaded.parameters().at(p->name);
        CHECK((p->value - q.value).cwiseAbs().maxCoeff() <= 1e-7 * (1 + p->value.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("training edge cases") {
    Corpus c = toy_corpus();
    Corpus with_literal = c;
    RawProblem raw{.id = "lit", .body = "A week has 7 days.", .question = "How many days in 2 weeks?",
                   .equation = parse_infix("7 * 2 + 0"), .answer = 14};
    with_literal.problems.push_back(make_problem(raw));
    ModelConfig cfg = tiny(Variant::Constrained);
    cfg.epochs = 1;
    NeuralModel m(cfg, Vocab::build(with_literal));
    CHECK(train(m, with_literal, Corpus{}).dropped == 1);

    Corpus only_literal;
    only_literal.problems.push_back(with_literal.problems.back());
    NeuralModel empty(cfg, Vocab::build(with_literal));
    CHECK_THROWS_AS(train(empty, only_literal, Corpus{}), TrainingError);

    NeuralModel broken(cfg, Vocab::build(c));
    broken.parameters().at("out.bs").value(0, 0) = std::nan("");
    CHECK_THROWS_AS(train(broken, c, Corpus{}), TrainingError);
}
