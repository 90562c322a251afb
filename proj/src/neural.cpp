#include "mwp/neural.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mwp {

using nlohmann::json;
using nn::Graph;
using nn::Matrix;
using nn::RowVector;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(Variant v) { return v == Variant::Constrained ? "constrained" : "seq2seq"; }

std::optional<Variant> parse_variant(std::string_view name) {
    if (name == "constrained") return Variant::Constrained;
    if (name == "seq2seq") return Variant::Seq2Seq;
    return std::nullopt;
}

ModelConfig ModelConfig::defaults(Variant v) {
    ModelConfig c;
    c.variant = v;
    if (v == Variant::Seq2Seq) {
        c.embedding = 256;
        c.hidden = 256;
        c.layers = 2;
        c.lr = 1e-3;
        c.embedding_lr = 8e-4;
        c.batch = 8;
    }
    return c;
}

void ModelConfig::validate() const {
    if (embedding <= 0 || hidden <= 0 || layers <= 0 || batch <= 0 || epochs < 0 || max_decode <= 0)
        throw std::invalid_argument("model sizes, batch and decode length must be positive");
    if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("dropout must lie in [0, 1)");
    if (!(lr > 0) || !(embedding_lr > 0)) throw std::invalid_argument("learning rates must be positive");
    if (!(clip > 0)) throw std::invalid_argument("gradient clip must be positive");
}

json to_json(const ModelConfig& c) {
    return json{{"variant", std::string(to_string(c.variant))},
                {"embedding", c.embedding},
                {"hidden", c.hidden},
                {"layers", c.layers},
                {"dropout", c.dropout},
                {"lr", c.lr},
                {"embedding_lr", c.embedding_lr},
                {"batch", c.batch},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"clip", c.clip},
                {"max_decode", c.max_decode}};
}

ModelConfig model_config_from_json(const json& j) {
    const auto variant = parse_variant(j.at("variant").get<std::string>());
    if (!variant) throw std::invalid_argument("unknown model variant");
    ModelConfig c = ModelConfig::defaults(*variant);
    c.embedding = j.value("embedding", c.embedding);
    c.hidden = j.value("hidden", c.hidden);
    c.layers = j.value("layers", c.layers);
    c.dropout = j.value("dropout", c.dropout);
    c.lr = j.value("lr", c.lr);
    c.embedding_lr = j.value("embedding_lr", c.embedding_lr);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.clip = j.value("clip", c.clip);
    c.max_decode = j.value("max_decode", c.max_decode);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

std::string number_token(std::size_t index) { return "<N" + std::to_string(index + 1) + ">"; }

} // namespace

Vocab::Vocab(std::vector<std::string> input, std::size_t max_numbers)
    : input_(std::move(input)), max_numbers_(max_numbers) {
    output_ = {std::string(kEnd), "+", "-", "*", "/"};
    for (std::size_t i = 0; i < max_numbers_; ++i) output_.push_back("N" + std::to_string(i + 1));
    for (std::size_t i = 0; i < input_.size(); ++i) input_index_.emplace(input_[i], static_cast<int>(i));
    if (input_.size() < 2 || input_[0] != kPad || input_[1] != kUnk)
        throw std::invalid_argument("input vocabulary must start with <pad> and <unk>");
}

Vocab Vocab::build(const Corpus& train) {
    std::size_t max_numbers = 0;
    for (const auto& p : train.problems) max_numbers = std::max(max_numbers, p.numbers.size());
    std::vector<std::string> input = {std::string(kPad), std::string(kUnk)};
    for (std::size_t i = 0; i < max_numbers; ++i) input.push_back(number_token(i));
    std::unordered_map<std::string, int> seen;
    for (const auto& t : input) seen.emplace(t, 0);
    Vocab probe(input, max_numbers);
    for (const auto& p : train.problems)
        for (const auto& t : probe.input_tokens(p))
            if (seen.emplace(t, 0).second) input.push_back(t);
    return Vocab(std::move(input), max_numbers);
}

int Vocab::input_id(std::string_view token) const {
    auto it = input_index_.find(std::string(token));
    return it == input_index_.end() ? 1 : it->second;
}

int Vocab::output_id(std::string_view token) const {
    for (std::size_t i = 0; i < output_.size(); ++i)
        if (output_[i] == token) return static_cast<int>(i);
    return -1;
}

std::vector<std::string> Vocab::input_tokens(const Problem& p) const {
    std::vector<std::string> tokens = p.tokens();
    for (std::size_t i = 0; i < p.numbers.size(); ++i) {
        auto& t = tokens.at(p.numbers[i].token_index);
        t = i < max_numbers_ ? number_token(i) : std::string(kUnk);
    }
    return tokens;
}

std::vector<int> Vocab::encode_input(const Problem& p) const {
    std::vector<int> ids;
    for (const auto& t : input_tokens(p)) ids.push_back(input_id(t));
    if (ids.empty()) ids.push_back(1);
    return ids;
}

std::optional<std::vector<int>> Vocab::encode_target(const Expr& equation) const {
    std::vector<int> ids;
    for (const auto& t : to_prefix(equation)) {
        const int id = output_id(t);
        if (id < 0) return std::nullopt;
        ids.push_back(id);
    }
    ids.push_back(end_id());
    return ids;
}

std::optional<Expr> expr_from_tokens(const std::vector<std::string>& tokens, std::size_t numbers_available,
                                     std::string* failure) {
    auto fail = [&](std::string why) -> std::optional<Expr> {
        if (failure) *failure = std::move(why);
        return std::nullopt;
    };
    if (tokens.empty()) return fail("empty output");
    Expr e;
    try {
        e = parse_prefix(std::span<const std::string>(tokens));
    } catch (const ParseError& err) {
        return fail(std::string("ill-formed prefix: ") + err.what());
    }
    if (has_literals(e)) return fail("literal in output");
    if (slot_span(e) > numbers_available) return fail("slot out of range");
    if (failure) failure->clear();
    return e;
}

// ---------------------------------------------------------------------------
// Model internals

/// Maps parameters into one graph, either tracked (training) or as constants.
struct NeuralModel::Binder {
    Graph& g;
    nn::ParameterStore* store;             // tracked when set
    const nn::ParameterStore* const_store; // otherwise
    std::unordered_map<std::string, Var> cache;

    Var operator()(const std::string& name) {
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        Var v = store ? g.param(store->at(name)) : g.constant(const_store->at(name).value);
        cache.emplace(name, v);
        return v;
    }
};

struct NeuralModel::Encoded {
    std::vector<Var> states; // T entries of hidden x B
    Matrix mask;             // T x B
    std::vector<Var> h0;     // per decoder layer
    std::vector<Var> c0;
};

namespace {

Matrix dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
    Matrix m(rows, cols);
    const double keep = 1.0 - p;
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return m;
}

Var maybe_dropout(Graph& g, Var x, Rng* rng, double p) {
    if (!rng || p <= 0) return x;
    return g.mul_const(x, dropout_mask(*rng, g.value(x).rows(), g.value(x).cols(), p));
}

/// LSTM cell with input, forget, candidate and output gates stacked in that
/// order: c' = f * c + i * g, h' = o * tanh(c').
std::pair<Var, Var> lstm_step(Graph& g, Var W, Var U, Var b, Var x, Var h, Var c, Eigen::Index hidden) {
    Var gates = g.add_bias(g.add(g.matmul(W, x), g.matmul(U, h)), b);
    Var i = g.sigmoid(g.slice_rows(gates, 0, hidden));
    Var f = g.sigmoid(g.slice_rows(gates, hidden, hidden));
    Var cand = g.tanh(g.slice_rows(gates, 2 * hidden, hidden));
    Var o = g.sigmoid(g.slice_rows(gates, 3 * hidden, hidden));
    Var c_next = g.add(g.hadamard(f, c), g.hadamard(i, cand));
    Var h_next = g.hadamard(o, g.tanh(c_next));
    return {h_next, c_next};
}

/// Keeps the previous state where the mask is 0 (padding).
Var masked_update(Graph& g, Var next, Var prev, const RowVector& m) {
    return g.add(g.mul_cols(next, m), g.mul_cols(prev, (1.0 - m.array()).matrix()));
}

std::vector<int> column(const std::vector<std::vector<int>>& seqs, std::size_t t, int pad) {
    std::vector<int> ids;
    for (const auto& s : seqs) ids.push_back(t < s.size() ? s[t] : pad);
    return ids;
}

} // namespace

NeuralModel::NeuralModel(ModelConfig config, Vocab vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.validate();
    if (vocab_.input().size() < 2) throw std::invalid_argument("empty input vocabulary");
    init_parameters();
}

void NeuralModel::init_parameters() {
    const int e = config_.embedding, h = config_.hidden;
    const auto vin = static_cast<Eigen::Index>(vocab_.input().size());
    const auto vout = static_cast<Eigen::Index>(vocab_.output().size());
    params_.add("embed.in", e, vin, true);
    if (config_.variant == Variant::Constrained) {
        params_.add("ffn.W1", h, e);
        params_.add("ffn.b1", h, 1);
        params_.add("ffn.W2", h, h);
        params_.add("ffn.b2", h, 1);
    } else {
        for (int l = 0; l < config_.layers; ++l) {
            const int in = l == 0 ? e : h;
            for (const char* dir : {"fwd", "bwd"}) {
                const std::string p = "enc." + std::string(dir) + std::to_string(l);
                params_.add(p + ".W", 4 * h, in);
                params_.add(p + ".U", 4 * h, h);
                params_.add(p + ".b", 4 * h, 1);
            }
        }
    }
    params_.add("embed.out", e, vout + 1, true);
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "dec" + std::to_string(l);
        params_.add(p + ".W", 4 * h, l == 0 ? e : h);
        params_.add(p + ".U", 4 * h, h);
        params_.add(p + ".b", 4 * h, 1);
    }
    params_.add("attn.Wa", h, h);
    params_.add("attn.Wc", h, 2 * h);
    params_.add("attn.bc", h, 1);
    params_.add("out.Ws", vout, h);
    params_.add("out.bs", vout, 1);

    Rng rng(derive_seed(config_.seed, "init"));
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    for (nn::Parameter* p : params_.all())
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-bound, bound);
}

std::string NeuralModel::name() const { return std::string(to_string(config_.variant)); }

NeuralModel::Encoded NeuralModel::encode(Binder& P, const std::vector<std::vector<int>>& inputs,
                                         Rng* dropout_rng) const {
    Graph& g = P.g;
    const auto batch = static_cast<Eigen::Index>(inputs.size());
    std::size_t T = 1;
    for (const auto& s : inputs) T = std::max(T, s.size());
    Encoded enc;
    enc.mask = Matrix::Zero(static_cast<Eigen::Index>(T), batch);
    for (Eigen::Index j = 0; j < batch; ++j)
        for (std::size_t t = 0; t < inputs[j].size(); ++t) enc.mask(static_cast<Eigen::Index>(t), j) = 1.0;

    const Eigen::Index h = config_.hidden;
    std::vector<Var> embedded;
    for (std::size_t t = 0; t < T; ++t)
        embedded.push_back(
            maybe_dropout(g, g.gather_cols(P("embed.in"), column(inputs, t, 0)), dropout_rng, config_.dropout));

    if (config_.variant == Variant::Constrained) {
        // Position-independent feed-forward map, then a masked mean.
        RowVector inv_len(batch);
        for (Eigen::Index j = 0; j < batch; ++j) inv_len(j) = 1.0 / std::max<double>(1.0, enc.mask.col(j).sum());
        std::vector<Var> pooled_terms;
        for (std::size_t t = 0; t < T; ++t) {
            Var hidden1 = g.relu(g.add_bias(g.matmul(P("ffn.W1"), embedded[t]), P("ffn.b1")));
            Var state = g.tanh(g.add_bias(g.matmul(P("ffn.W2"), hidden1), P("ffn.b2")));
            enc.states.push_back(state);
            const RowVector weight = enc.mask.row(static_cast<Eigen::Index>(t)).cwiseProduct(inv_len);
            pooled_terms.push_back(g.mul_cols(state, weight));
        }
        Var pooled = g.sum(pooled_terms);
        Var zero = g.constant(Matrix::Zero(h, batch));
        for (int l = 0; l < config_.layers; ++l) {
            enc.h0.push_back(pooled);
            enc.c0.push_back(zero);
        }
        return enc;
    }

    // Bidirectional LSTM; the two directions are summed at every position and
    // feed the next layer. Final states of both directions initialize the decoder.
    std::vector<Var> layer_input = embedded;
    for (int l = 0; l < config_.layers; ++l) {
        std::vector<Var> fwd(T), bwd(T);
        Var zero = g.constant(Matrix::Zero(h, batch));
        const std::string pf = "enc.fwd" + std::to_string(l), pb = "enc.bwd" + std::to_string(l);
        Var hf = zero, cf = zero;
        for (std::size_t t = 0; t < T; ++t) {
            auto [hn, cn] = lstm_step(g, P(pf + ".W"), P(pf + ".U"), P(pf + ".b"), layer_input[t], hf, cf, h);
            const RowVector m = enc.mask.row(static_cast<Eigen::Index>(t));
            hf = masked_update(g, hn, hf, m);
            cf = masked_update(g, cn, cf, m);
            fwd[t] = hf;
        }
        Var hb = zero, cb = zero;
        for (std::size_t t = T; t-- > 0;) {
            auto [hn, cn] = lstm_step(g, P(pb + ".W"), P(pb + ".U"), P(pb + ".b"), layer_input[t], hb, cb, h);
            const RowVector m = enc.mask.row(static_cast<Eigen::Index>(t));
            hb = masked_update(g, hn, hb, m);
            cb = masked_update(g, cn, cb, m);
            bwd[t] = hb;
        }
        std::vector<Var> outputs(T);
        for (std::size_t t = 0; t < T; ++t) outputs[t] = g.add(fwd[t], bwd[t]);
        enc.h0.push_back(g.add(hf, hb));
        enc.c0.push_back(g.add(cf, cb));
        if (l + 1 < config_.layers)
            for (auto& o : outputs) o = maybe_dropout(g, o, dropout_rng, config_.dropout);
        layer_input = outputs;
    }
    enc.states = layer_input;
    return enc;
}

struct NeuralModel::StepOut {
    Var logits;
    Var alpha;
};

// Multi-layer LSTM on the previous output token, Luong general attention over
// the encoder states, h~ = tanh(Wc [context; h] + bc), logits = Ws h~ + bs.
NeuralModel::StepOut NeuralModel::decoder_step(Binder& P, const Encoded& enc, std::vector<Var>& hs,
                                               std::vector<Var>& cs, const std::vector<int>& previous,
                                               Rng* rng) const {
    Graph& g = P.g;
    Var x = maybe_dropout(g, g.gather_cols(P("embed.out"), previous), rng, config_.dropout);
    for (int l = 0; l < config_.layers; ++l) {
        const std::string pre = "dec" + std::to_string(l);
        auto [hn, cn] = lstm_step(g, P(pre + ".W"), P(pre + ".U"), P(pre + ".b"), x, hs[l], cs[l], config_.hidden);
        hs[l] = hn;
        cs[l] = cn;
        x = l + 1 < config_.layers ? maybe_dropout(g, hn, rng, config_.dropout) : hn;
    }
    Var query = g.matmul(P("attn.Wa"), x);
    std::vector<Var> scores;
    for (Var s : enc.states) scores.push_back(g.colwise_dot(s, query));
    Var alpha = g.softmax_cols(g.stack_rows(scores), enc.mask);
    std::vector<Var> parts;
    for (std::size_t t = 0; t < enc.states.size(); ++t)
        parts.push_back(g.mul_row_broadcast(enc.states[t], g.row(alpha, static_cast<Eigen::Index>(t))));
    Var attended = g.tanh(g.add_bias(g.matmul(P("attn.Wc"), g.concat_rows({g.sum(parts), x})), P("attn.bc")));
    attended = maybe_dropout(g, attended, rng, config_.dropout);
    return StepOut{g.add_bias(g.matmul(P("out.Ws"), attended), P("out.bs")), alpha};
}

nn::Var NeuralModel::batch_loss_ids(Graph& g, const std::vector<std::vector<int>>& inputs,
                                    const std::vector<std::vector<int>>& targets, Rng* dropout_rng) {
    if (inputs.empty() || inputs.size() != targets.size()) throw std::invalid_argument("batch_loss: bad batch");
    Binder P{g, &params_, nullptr, {}};
    Encoded enc = encode(P, inputs, dropout_rng);
    std::vector<Var> hs = enc.h0, cs = enc.c0;
    std::size_t steps = 0;
    for (const auto& t : targets) steps = std::max(steps, t.size());
    const double inv_batch = 1.0 / static_cast<double>(inputs.size());
    std::vector<Var> losses;
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<int> in_ids, out_ids;
        std::vector<double> weights;
        for (const auto& t : targets) {
            in_ids.push_back(s == 0 ? vocab_.begin_id() : (s - 1 < t.size() ? t[s - 1] : vocab_.begin_id()));
            out_ids.push_back(s < t.size() ? t[s] : 0);
            weights.push_back(s < t.size() ? inv_batch : 0.0);
        }
        StepOut step = decoder_step(P, enc, hs, cs, in_ids, dropout_rng);
        losses.push_back(g.cross_entropy(step.logits, out_ids, weights));
    }
    return g.sum(losses);
}

nn::Var NeuralModel::batch_loss(Graph& g, const std::vector<const Problem*>& batch, Rng* dropout_rng) {
    std::vector<std::vector<int>> inputs, targets;
    for (const Problem* p : batch) {
        auto target = vocab_.encode_target(p->equation);
        if (!target) throw std::invalid_argument("problem '" + p->id + "' has an inexpressible equation");
        inputs.push_back(vocab_.encode_input(*p));
        targets.push_back(std::move(*target));
    }
    return batch_loss_ids(g, inputs, targets, dropout_rng);
}

std::vector<Decoding> NeuralModel::decode_ids(const std::vector<std::vector<int>>& inputs,
                                              const std::vector<std::size_t>& numbers_available) const {
    std::vector<Decoding> out(inputs.size());
    if (inputs.empty()) return out;
    Graph g;
    Binder P{g, nullptr, &params_, {}};
    Encoded enc = encode(P, inputs, nullptr);
    std::vector<Var> hs = enc.h0, cs = enc.c0;
    std::vector<int> current(inputs.size(), vocab_.begin_id());
    std::vector<bool> done(inputs.size(), false);
    for (int s = 0; s < config_.max_decode + 1; ++s) {
        StepOut step = decoder_step(P, enc, hs, cs, current, nullptr);
        const Matrix& logits = g.value(step.logits);
        const Matrix& alpha = g.value(step.alpha);
        bool all_done = true;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
            if (done[j]) continue;
            const auto col = static_cast<Eigen::Index>(j);
            Eigen::Index best = 0;
            logits.col(col).maxCoeff(&best);
            std::vector<double> weights(inputs[j].size());
            for (std::size_t t = 0; t < weights.size(); ++t) weights[t] = alpha(static_cast<Eigen::Index>(t), col);
            out[j].attention.push_back(std::move(weights));
            if (best == vocab_.end_id() || s == config_.max_decode) {
                done[j] = true;
                if (best != vocab_.end_id()) out[j].failure = "no end token within the decode limit";
                continue;
            }
            out[j].output_tokens.push_back(vocab_.output()[static_cast<std::size_t>(best)]);
            current[j] = static_cast<int>(best);
            all_done = false;
        }
        if (all_done) break;
    }
    for (std::size_t j = 0; j < out.size(); ++j) {
        if (!out[j].failure.empty()) continue;
        out[j].expr = expr_from_tokens(out[j].output_tokens, numbers_available[j], &out[j].failure);
    }
    return out;
}

std::vector<Decoding> NeuralModel::decode(const std::vector<const Problem*>& problems) const {
    std::vector<std::vector<int>> inputs;
    std::vector<std::size_t> available;
    for (const Problem* p : problems) {
        inputs.push_back(vocab_.encode_input(*p));
        available.push_back(p->numbers.size());
    }
    auto out = decode_ids(inputs, available);
    for (std::size_t j = 0; j < problems.size(); ++j) {
        out[j].input_tokens = vocab_.input_tokens(*problems[j]);
        if (out[j].input_tokens.empty()) out[j].input_tokens.push_back(std::string(Vocab::kUnk));
    }
    return out;
}

Decoding NeuralModel::decode(const Problem& p) const { return decode(std::vector<const Problem*>{&p}).front(); }

std::optional<Expr> NeuralModel::predict(const Problem& p) const { return decode(p).expr; }

Predictions NeuralModel::predict_all(const Corpus& c) const {
    constexpr std::size_t kChunk = 64;
    Predictions out;
    for (std::size_t start = 0; start < c.size(); start += kChunk) {
        std::vector<const Problem*> chunk;
        for (std::size_t i = start; i < std::min(c.size(), start + kChunk); ++i) chunk.push_back(&c.problems[i]);
        auto decoded = decode(chunk);
        for (std::size_t j = 0; j < chunk.size(); ++j) out[chunk[j]->id] = decoded[j].expr;
    }
    return out;
}

Matrix NeuralModel::pooled_state(const std::vector<int>& input_ids) const {
    if (config_.variant != Variant::Constrained) throw std::logic_error("pooled_state is defined for the constrained model");
    Graph g;
    Binder P{g, nullptr, &params_, {}};
    Encoded enc = encode(P, {input_ids}, nullptr);
    return g.value(enc.h0.front());
}

double NeuralModel::token_accuracy(const Corpus& c) const {
    std::size_t hits = 0, total = 0;
    for (const auto& p : c.problems) {
        auto target = vocab_.encode_target(p.equation);
        if (!target) continue;
        // Teacher forcing with argmax at every step.
        Graph g;
        Binder P{g, nullptr, &params_, {}};
        Encoded enc = encode(P, {vocab_.encode_input(p)}, nullptr);
        std::vector<Var> hs = enc.h0, cs = enc.c0;
        int previous = vocab_.begin_id();
        for (int want : *target) {
            StepOut step = decoder_step(P, enc, hs, cs, {previous}, nullptr);
            Eigen::Index best = 0;
            g.value(step.logits).col(0).maxCoeff(&best);
            hits += best == want ? 1 : 0;
            ++total;
            previous = want;
        }
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

std::string NeuralModel::log_csv() const {
    std::ostringstream out;
    out << "epoch,loss,val_acc\n";
    char buf[64];
    for (const auto& e : log_) {
        std::snprintf(buf, sizeof buf, "%.17g", e.loss);
        out << e.epoch << ',' << buf << ',';
        if (e.val_acc) {
            std::snprintf(buf, sizeof buf, "%.17g", *e.val_acc);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

constexpr char kMagic[8] = {'M', 'W', 'P', 'S', 'N', 'A', 'P', '1'};

void write_u32_le(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t read_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated snapshot");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void NeuralModel::save(const std::filesystem::path& path) const {
    json tensors = json::array();
    for (const nn::Parameter* p : params_.all())
        tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    json log = json::array();
    for (const auto& e : log_) {
        json entry{{"epoch", e.epoch}, {"loss", e.loss}};
        entry["val_acc"] = e.val_acc ? json(*e.val_acc) : json();
        log.push_back(std::move(entry));
    }
    const json header{{"format", 1},
                      {"config", to_json(config_)},
                      {"vocab", {{"input", vocab_.input()}, {"max_numbers", vocab_.max_numbers()}}},
                      {"tensors", std::move(tensors)},
                      {"log", std::move(log)}};
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_u32_le(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const nn::Parameter* p : params_.all()) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(p->value.data()[i]));
            write_u32_le(out, bits);
        }
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

NeuralModel NeuralModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error(path.string() + " is not a model snapshot");
    const std::uint32_t length = read_u32_le(in);
    std::string text(length, '\0');
    in.read(text.data(), length);
    if (!in) throw std::runtime_error("truncated snapshot header");
    const json header = json::parse(text);
    if (header.at("format").get<int>() != 1) throw std::runtime_error("unsupported snapshot format");
    Vocab vocab(header.at("vocab").at("input").get<std::vector<std::string>>(),
                header.at("vocab").at("max_numbers").get<std::size_t>());
    NeuralModel model(model_config_from_json(header.at("config")), std::move(vocab));
    for (const auto& t : header.at("tensors")) {
        nn::Parameter& p = model.params_.at(t.at("name").get<std::string>());
        if (p.value.rows() != t.at("rows").get<Eigen::Index>() || p.value.cols() != t.at("cols").get<Eigen::Index>())
            throw std::runtime_error("snapshot tensor '" + p.name + "' does not match the configuration");
        for (Eigen::Index i = 0; i < p.value.size(); ++i)
            p.value.data()[i] = static_cast<double>(std::bit_cast<float>(read_u32_le(in)));
    }
    for (const auto& e : header.at("log")) {
        EpochLog entry{e.at("epoch").get<int>(), e.at("loss").get<double>(), std::nullopt};
        if (!e.at("val_acc").is_null()) entry.val_acc = e.at("val_acc").get<double>();
        model.log_.push_back(entry);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Training

TrainReport train(NeuralModel& model, const Corpus& train_corpus, const Corpus& validation,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    const ModelConfig& cfg = model.config();
    TrainReport report;
    std::vector<const Problem*> usable;
    for (const auto& p : train_corpus.problems) {
        if (model.vocab().encode_target(p.equation)) usable.push_back(&p);
        else ++report.dropped;
    }
    report.used = usable.size();
    if (usable.empty()) throw TrainingError("no trainable problems in the train set");

    nn::Adam adam;
    adam.lr = cfg.lr;
    adam.embedding_lr = cfg.embedding_lr;
    Rng order_rng(derive_seed(cfg.seed, "order"));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

    std::vector<Matrix> best;
    std::optional<double> best_acc;
    auto snapshot = [&] {
        best.clear();
        for (const nn::Parameter* p : model.parameters().all()) best.push_back(p->value);
    };
    snapshot();
    model.log().clear();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order_rng.shuffle(usable);
        double total = 0;
        for (std::size_t start = 0; start < usable.size(); start += static_cast<std::size_t>(cfg.batch)) {
            std::vector<const Problem*> batch(
                usable.begin() + static_cast<std::ptrdiff_t>(start),
                usable.begin() + static_cast<std::ptrdiff_t>(std::min(usable.size(), start + cfg.batch)));
            model.parameters().zero_grad();
            nn::Graph g;
            Var loss = model.batch_loss(g, batch, cfg.dropout > 0 ? &dropout_rng : nullptr);
            const double value = g.value(loss)(0, 0);
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch starting at " << start << " (first problem '"
                    << batch.front()->id << "'); gradient norm before the step " << model.parameters().grad_norm();
                throw TrainingError(msg.str());
            }
            g.backward(loss);
            model.parameters().clip_grad_norm(cfg.clip);
            adam.step(model.parameters());
            total += value * static_cast<double>(batch.size());
        }
        EpochLog entry{epoch, total / static_cast<double>(usable.size()), std::nullopt};
        if (!validation.empty()) {
            const auto acc = execution_accuracy(model.predict_all(validation), validation).accuracy();
            entry.val_acc = to_double(acc.value()) * 100.0;
        }
        model.log().push_back(entry);
        if (on_epoch) on_epoch(entry);
        if (entry.val_acc && (!best_acc || *entry.val_acc > *best_acc)) {
            best_acc = entry.val_acc;
            report.best_epoch = epoch;
            snapshot();
        }
    }
    if (best_acc) {
        auto params = model.parameters().all();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    } else {
        report.best_epoch = cfg.epochs;
    }
    return report;
}

} // namespace mwp
