#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

namespace mwp {

/// Exact rational used for every literal, answer and accuracy value.
using Rational = boost::multiprecision::cpp_rational;

/// Parses "12", "3.50", "-2", ".5", "1e-4". Returns nullopt on anything else.
std::optional<Rational> parse_decimal(std::string_view text);

/// True when the value has a finite decimal expansion (denominator 2^a 5^b).
bool is_terminating(const Rational& value);

/// Exact decimal rendering when terminating ("46", "0.25", "-3.5");
/// otherwise rounded to `significant` significant digits.
std::string to_decimal_string(const Rational& value, int significant = 15);

/// Fixed-point rendering with round-half-away-from-zero ("1.67" for 5/3).
std::string format_fixed(const Rational& value, int fraction_digits);

/// Lossless text: the exact decimal when terminating, else "p/q".
std::string to_exact_string(const Rational& value);
/// Inverse of to_exact_string; also accepts any parse_decimal input.
std::optional<Rational> parse_exact(std::string_view text);

double to_double(const Rational& value);

Rational abs(const Rational& value);

} // namespace mwp
