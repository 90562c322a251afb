#include "mwp/text.hpp"

#include <array>
#include <cctype>
#include <unordered_map>

namespace mwp {

namespace {

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalpha(u) != 0 || u >= 0x80;
}

const std::unordered_map<std::string_view, int>& number_words() {
    static const std::unordered_map<std::string_view, int> words = {
        {"zero", 0},      {"one", 1},        {"two", 2},       {"three", 3},    {"four", 4},
        {"five", 5},      {"six", 6},        {"seven", 7},     {"eight", 8},    {"nine", 9},
        {"ten", 10},      {"eleven", 11},    {"twelve", 12},   {"thirteen", 13}, {"fourteen", 14},
        {"fifteen", 15},  {"sixteen", 16},   {"seventeen", 17}, {"eighteen", 18}, {"nineteen", 19},
        {"twenty", 20},   {"thirty", 30},    {"forty", 40},    {"fifty", 50},   {"sixty", 60},
        {"seventy", 70},  {"eighty", 80},    {"ninety", 90},
    };
    return words;
}

bool is_large_number_word(std::string_view w) {
    return w == "hundred" || w == "thousand" || w == "million" || w == "billion";
}

bool is_ordinal_suffix(std::string_view s) {
    return s == "st" || s == "nd" || s == "rd" || s == "th";
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::optional<int> word_value(std::string_view w) {
    const auto& words = number_words();
    if (auto it = words.find(w); it != words.end()) return it->second;
    const auto dash = w.find('-');
    if (dash == std::string_view::npos) return std::nullopt;
    const auto tens = words.find(w.substr(0, dash));
    const auto unit = words.find(w.substr(dash + 1));
    if (tens == words.end() || unit == words.end()) return std::nullopt;
    if (tens->second < 20 || tens->second % 10 != 0 || unit->second < 1 || unit->second > 9) return std::nullopt;
    return tens->second + unit->second;
}

bool is_honorific(std::string_view sentence_so_far) {
    static constexpr std::array<std::string_view, 6> titles = {"mr", "mrs", "ms", "dr", "st", "jr"};
    std::size_t end = sentence_so_far.size();
    std::size_t begin = end;
    while (begin > 0 && is_alpha(sentence_so_far[begin - 1])) --begin;
    if (begin == end) return false;
    const std::string word = lower(sentence_so_far.substr(begin, end - begin));
    for (auto t : titles)
        if (word == t) return true;
    return false;
}

} // namespace

std::optional<Rational> token_number(std::string_view token) {
    if (token.empty()) return std::nullopt;
    if (is_digit(token[0]) || (token[0] == '.' && token.size() > 1)) return parse_decimal(token);
    if (auto v = word_value(token)) return Rational(*v);
    return std::nullopt;
}

Tokenized tokenize(std::string_view text) {
    Tokenized out;
    const std::size_t n = text.size();
    std::size_t i = 0;
    auto digit_at = [&](std::size_t k) { return k < n && is_digit(text[k]); };
    auto push_word = [&](std::string word) {
        if (auto v = word_value(word)) {
            out.numbers.push_back({Rational(*v), out.tokens.size()});
        } else if (is_large_number_word(word)) {
            out.warnings.push_back("number word outside lexicon: '" + word + "'");
        }
        out.tokens.push_back(std::move(word));
    };
    while (i < n) {
        const char c = text[i];
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (is_digit(c) || (c == '.' && i + 1 < n && is_digit(text[i + 1]))) {
            std::string digits;
            std::size_t j = i;
            while (j < n) {
                if (is_digit(text[j])) {
                    digits += text[j++];
                } else if (text[j] == ',' && !digits.empty() && digits.find('.') == std::string::npos &&
                           digit_at(j + 1) && digit_at(j + 2) && digit_at(j + 3) && !digit_at(j + 4)) {
                    ++j; // thousands separator
                } else if (text[j] == '.' && j + 1 < n && is_digit(text[j + 1]) &&
                           digits.find('.') == std::string::npos) {
                    digits += text[j++];
                } else {
                    break;
                }
            }
            std::size_t k = j;
            while (k < n && is_alpha(text[k])) ++k;
            const std::string suffix = lower(text.substr(j, k - j));
            if (!suffix.empty() && is_ordinal_suffix(suffix)) {
                out.tokens.push_back(digits + suffix);
                i = k;
                continue;
            }
            if (digits.front() == '.') digits.insert(0, "0");
            out.numbers.push_back({*parse_decimal(digits), out.tokens.size()});
            out.tokens.push_back(digits);
            i = j;
            continue;
        }
        if (is_alpha(c)) {
            std::size_t j = i;
            while (j < n) {
                if (is_alpha(text[j]) || is_digit(text[j])) {
                    ++j;
                } else if ((text[j] == '\'' || text[j] == '-') && j + 1 < n && is_alpha(text[j + 1]) && j > i) {
                    ++j;
                } else {
                    break;
                }
            }
            push_word(lower(text.substr(i, j - i)));
            i = j;
            continue;
        }
        out.tokens.emplace_back(1, c);
        ++i;
    }
    return out;
}

std::string detokenize(std::span<const std::string> tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

std::string trim(std::string_view text) {
    std::size_t b = 0, e = text.size();
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    return std::string(text.substr(b, e - b));
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> sentences;
    std::size_t start = 0;
    const std::size_t n = text.size();
    for (std::size_t i = 0; i < n; ++i) {
        const char c = text[i];
        if (c != '.' && c != '?' && c != '!') continue;
        std::size_t end = i + 1;
        while (end < n && (text[end] == '"' || text[end] == '\'' || text[end] == ')' ||
                           text[end] == '.' || text[end] == '?' || text[end] == '!'))
            ++end;
        if (end < n && !is_space(text[end])) continue;
        if (c == '.' && is_honorific(text.substr(start, i - start))) continue;
        std::string s = trim(text.substr(start, end - start));
        if (!s.empty()) sentences.push_back(std::move(s));
        start = end;
        i = end - 1;
    }
    std::string tail = trim(text.substr(start));
    if (!tail.empty()) sentences.push_back(std::move(tail));
    return sentences;
}

BodyQuestion split_body_question(std::string_view text) {
    BodyQuestion out;
    const auto sentences = split_sentences(text);
    if (sentences.empty()) {
        out.warnings.push_back("empty text");
        return out;
    }
    std::size_t q = sentences.size();
    for (std::size_t i = sentences.size(); i-- > 0;) {
        if (sentences[i].find('?') != std::string::npos) {
            q = i;
            break;
        }
    }
    if (q == sentences.size()) {
        q = sentences.size() - 1;
        out.warnings.push_back("no question mark; using the final sentence as the question");
    } else if (q + 1 != sentences.size()) {
        out.warnings.push_back("question is not the final sentence; trailing sentences moved to the body");
    }
    if (sentences.size() == 1) out.warnings.push_back("single sentence; body is empty");
    out.question = sentences[q];
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (i == q) continue;
        if (!out.body.empty()) out.body += ' ';
        out.body += sentences[i];
    }
    return out;
}

} // namespace mwp
