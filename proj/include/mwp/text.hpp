#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mwp/number.hpp"

namespace mwp {

struct NumberMention {
    Rational value;
    std::size_t token_index = 0;

    friend bool operator==(const NumberMention&, const NumberMention&) = default;
};

struct Tokenized {
    std::vector<std::string> tokens;
    std::vector<NumberMention> numbers; // textual order
    std::vector<std::string> warnings;  // e.g. number words outside the lexicon
};

/// Lowercases and splits into word / number / punctuation tokens, and records
/// every numeric token (digits or a number word) as a mention.
///
/// Digits may carry thousands separators ("1,000") and a fractional part.
/// Currency and percent signs become their own tokens ("$ 2"). Ordinals such
/// as "5th" stay single non-numeric tokens. Number words cover zero..twenty,
/// the tens up to ninety and hyphenated compounds ("twenty-one").
Tokenized tokenize(std::string_view text);

/// Value of a single already-lowercased token, if it is numeric.
std::optional<Rational> token_number(std::string_view token);

std::string detokenize(std::span<const std::string> tokens);

/// Sentence segmentation on . ? ! followed by whitespace or end of text.
/// Decimal points and common honorifics ("mr.") do not end a sentence.
std::vector<std::string> split_sentences(std::string_view text);

struct BodyQuestion {
    std::string body;
    std::string question;
    std::vector<std::string> warnings;
};

/// The question is the last sentence containing '?', or the final sentence if
/// none does. Sentences after the question are appended to the body.
BodyQuestion split_body_question(std::string_view text);

std::string trim(std::string_view text);

} // namespace mwp
