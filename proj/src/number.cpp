#include "mwp/number.hpp"

#include <cctype>
#include <cstdlib>

namespace mwp {

using boost::multiprecision::cpp_int;

namespace {

cpp_int pow10(int n) {
    cpp_int r = 1;
    for (int i = 0; i < n; ++i) r *= 10;
    return r;
}

// Rounds |num/den| * 10^digits to the nearest integer, halves away from zero.
cpp_int scaled_round(const cpp_int& num, const cpp_int& den, int digits) {
    cpp_int n = num < 0 ? cpp_int(-num) : num;
    cpp_int scaled = n * pow10(digits);
    cpp_int q = scaled / den;
    cpp_int r = scaled % den;
    if (r * 2 >= den) q += 1;
    return q;
}

std::string insert_point(std::string digits, int fraction_digits) {
    if (fraction_digits <= 0) return digits;
    if (static_cast<int>(digits.size()) <= fraction_digits)
        digits.insert(0, fraction_digits - digits.size() + 1, '0');
    digits.insert(digits.size() - fraction_digits, ".");
    return digits;
}

} // namespace

std::optional<Rational> parse_decimal(std::string_view text) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    bool negative = false;
    if (i < n && (text[i] == '+' || text[i] == '-')) {
        negative = text[i] == '-';
        ++i;
    }
    cpp_int mantissa = 0;
    int scale = 0;
    bool any_digit = false;
    while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) {
        mantissa = mantissa * 10 + (text[i] - '0');
        any_digit = true;
        ++i;
    }
    if (i < n && text[i] == '.') {
        ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) {
            mantissa = mantissa * 10 + (text[i] - '0');
            ++scale;
            any_digit = true;
            ++i;
        }
    }
    if (!any_digit) return std::nullopt;
    int exponent = 0;
    if (i < n && (text[i] == 'e' || text[i] == 'E')) {
        ++i;
        bool exp_negative = false;
        if (i < n && (text[i] == '+' || text[i] == '-')) {
            exp_negative = text[i] == '-';
            ++i;
        }
        bool exp_digit = false;
        while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) {
            exponent = exponent * 10 + (text[i] - '0');
            if (exponent > 400) return std::nullopt;
            exp_digit = true;
            ++i;
        }
        if (!exp_digit) return std::nullopt;
        if (exp_negative) exponent = -exponent;
    }
    if (i != n) return std::nullopt;
    const int shift = exponent - scale;
    Rational value = shift >= 0 ? Rational(mantissa * pow10(shift))
                                : Rational(mantissa, pow10(-shift));
    return negative ? Rational(-value) : value;
}

bool is_terminating(const Rational& value) {
    cpp_int den = boost::multiprecision::denominator(value);
    while (den % 2 == 0) den /= 2;
    while (den % 5 == 0) den /= 5;
    return den == 1;
}

std::string to_decimal_string(const Rational& value, int significant) {
    const cpp_int num = boost::multiprecision::numerator(value);
    const cpp_int den = boost::multiprecision::denominator(value);
    const std::string sign = num < 0 ? "-" : "";
    if (den == 1) return num.str();
    if (is_terminating(value)) {
        int digits = 0;
        while (pow10(digits) % den != 0) ++digits;
        return sign + insert_point(scaled_round(num, den, digits).str(), digits);
    }
    // Non-terminating: choose fraction digits so that `significant` digits survive.
    const cpp_int n = num < 0 ? cpp_int(-num) : num;
    const cpp_int int_part = n / den;
    int int_digits = int_part == 0 ? 0 : static_cast<int>(int_part.str().size());
    int fraction_digits = significant - int_digits;
    if (int_part == 0) {
        // count leading zeros after the point
        cpp_int scaled = n * 10;
        while (scaled < den) {
            scaled *= 10;
            ++fraction_digits;
        }
    }
    if (fraction_digits < 1) fraction_digits = 1;
    std::string out = insert_point(scaled_round(num, den, fraction_digits).str(), fraction_digits);
    while (!out.empty() && out.back() == '0') out.pop_back();
    if (!out.empty() && out.back() == '.') out.pop_back();
    return sign + out;
}

std::string format_fixed(const Rational& value, int fraction_digits) {
    const cpp_int num = boost::multiprecision::numerator(value);
    const cpp_int den = boost::multiprecision::denominator(value);
    const cpp_int rounded = scaled_round(num, den, fraction_digits);
    const std::string sign = (num < 0 && rounded != 0) ? "-" : "";
    return sign + insert_point(rounded.str(), fraction_digits);
}

std::string to_exact_string(const Rational& value) {
    if (is_terminating(value)) return to_decimal_string(value);
    return boost::multiprecision::numerator(value).str() + "/" + boost::multiprecision::denominator(value).str();
}

std::optional<Rational> parse_exact(std::string_view text) {
    const auto slash = text.find('/');
    if (slash == std::string_view::npos) return parse_decimal(text);
    auto num = parse_decimal(text.substr(0, slash));
    auto den = parse_decimal(text.substr(slash + 1));
    if (!num || !den || *den == 0) return std::nullopt;
    return *num / *den;
}

double to_double(const Rational& value) { return value.convert_to<double>(); }

Rational abs(const Rational& value) { return value < 0 ? Rational(-value) : value; }

} // namespace mwp
