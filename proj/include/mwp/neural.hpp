#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/nn.hpp"
#include "mwp/predictor.hpp"
#include "mwp/rng.hpp"

namespace mwp {

enum class Variant { Constrained, Seq2Seq };

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct ModelConfig {
    Variant variant = Variant::Constrained;
    int embedding = 128;
    int hidden = 384;
    int layers = 1;
    double dropout = 0.1;
    double lr = 1e-3;
    double embedding_lr = 1e-3;
    int batch = 16;
    int epochs = 60;
    std::uint64_t seed = 1;
    double clip = 5.0;
    int max_decode = 7;

    /// Scratch-embedding defaults for each variant.
    static ModelConfig defaults(Variant v);
    /// Throws std::invalid_argument on non-positive sizes or dropout outside [0, 1).
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Input and output vocabularies. Number mentions enter the encoder as
/// "<N1>", "<N2>", ... by textual position; the decoder emits operators,
/// slot tokens N1..Nmax and "<end>".
class Vocab {
public:
    static constexpr std::string_view kPad = "<pad>";
    static constexpr std::string_view kUnk = "<unk>";
    static constexpr std::string_view kBegin = "<begin>";
    static constexpr std::string_view kEnd = "<end>";

    Vocab() = default;
    Vocab(std::vector<std::string> input, std::size_t max_numbers);

    /// Words in order of first appearance in `train`; Nmax is the largest
    /// number count of any training problem.
    static Vocab build(const Corpus& train);

    const std::vector<std::string>& input() const { return input_; }
    const std::vector<std::string>& output() const { return output_; }
    std::size_t max_numbers() const { return max_numbers_; }

    int input_id(std::string_view token) const;
    int output_id(std::string_view token) const; // -1 when absent
    int end_id() const { return 0; }
    /// Decoder-input index of <begin>, one past the output vocabulary.
    int begin_id() const { return static_cast<int>(output_.size()); }

    /// Tokens as the encoder sees them, numbers masked.
    std::vector<std::string> input_tokens(const Problem& p) const;
    std::vector<int> encode_input(const Problem& p) const;
    /// Prefix token ids followed by <end>, or nullopt when the equation holds
    /// a literal or a slot beyond Nmax.
    std::optional<std::vector<int>> encode_target(const Expr& equation) const;

private:
    std::vector<std::string> input_;
    std::vector<std::string> output_;
    std::size_t max_numbers_ = 0;
    std::unordered_map<std::string, int> input_index_;
};

/// Turns emitted output tokens into an expression over `numbers_available`
/// numbers. Returns nullopt with `failure` set on ill-formed prefix or an
/// out-of-range slot.
std::optional<Expr> expr_from_tokens(const std::vector<std::string>& tokens, std::size_t numbers_available,
                                     std::string* failure = nullptr);

struct Decoding {
    std::vector<std::string> input_tokens;
    std::vector<std::string> output_tokens; // without <end>
    /// One distribution over input tokens per decode step (the <end> step included).
    std::vector<std::vector<double>> attention;
    std::optional<Expr> expr;
    std::string failure;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0;
    std::optional<double> val_acc; // percent
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NeuralModel : public Predictor {
public:
    /// Builds and seeds a fresh model.
    NeuralModel(ModelConfig config, Vocab vocab);

    std::string name() const override;
    std::optional<Expr> predict(const Problem& p) const override;
    Predictions predict_all(const Corpus& c) const override;

    Decoding decode(const Problem& p) const;
    std::vector<Decoding> decode(const std::vector<const Problem*>& problems) const;
    /// Greedy decoding from raw encoder ids, for probes that edit the input.
    std::vector<Decoding> decode_ids(const std::vector<std::vector<int>>& inputs,
                                     const std::vector<std::size_t>& numbers_available) const;

    /// Teacher-forced cross-entropy summed over output tokens, divided by the
    /// batch size. Problems whose target is inexpressible must be filtered out
    /// first. Dropout is applied when `dropout_rng` is given.
    nn::Var batch_loss(nn::Graph& g, const std::vector<const Problem*>& batch, Rng* dropout_rng = nullptr);
    nn::Var batch_loss_ids(nn::Graph& g, const std::vector<std::vector<int>>& inputs,
                           const std::vector<std::vector<int>>& targets, Rng* dropout_rng = nullptr);

    /// Constrained variant: the mean-pooled encoder state that initializes the decoder.
    nn::Matrix pooled_state(const std::vector<int>& input_ids) const;

    /// Teacher-forced next-token accuracy over expressible problems.
    double token_accuracy(const Corpus& c) const;

    const ModelConfig& config() const { return config_; }
    const Vocab& vocab() const { return vocab_; }
    nn::ParameterStore& parameters() { return params_; }
    const nn::ParameterStore& parameters() const { return params_; }
    std::vector<EpochLog>& log() { return log_; }
    const std::vector<EpochLog>& log() const { return log_; }
    std::string log_csv() const;

    /// Binary container: "MWPSNAP1", u32 LE header length, JSON header,
    /// then float32 LE column-major tensors in header order.
    void save(const std::filesystem::path& path) const;
    static NeuralModel load(const std::filesystem::path& path);

private:
    struct Encoded;
    struct Binder;
    struct StepOut;

    void init_parameters();
    Encoded encode(Binder& p, const std::vector<std::vector<int>>& inputs, Rng* dropout_rng) const;
    StepOut decoder_step(Binder& p, const Encoded& enc, std::vector<nn::Var>& hs, std::vector<nn::Var>& cs,
                         const std::vector<int>& previous, Rng* dropout_rng) const;

    ModelConfig config_;
    Vocab vocab_;
    nn::ParameterStore params_;
    std::vector<EpochLog> log_;
};

struct TrainReport {
    std::size_t used = 0;
    std::size_t dropped = 0; // inexpressible targets
    int best_epoch = 0;
};

/// Adam on shuffled mini-batches, gradient norm clipped to config.clip; the
/// model ends in its best-validation state (last epoch without validation).
/// Throws TrainingError on an empty train set or a non-finite loss.
TrainReport train(NeuralModel& model, const Corpus& train, const Corpus& validation,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

} // namespace mwp
