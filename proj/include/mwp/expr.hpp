#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mwp/number.hpp"

namespace mwp {

enum class Op : char { Add = '+', Sub = '-', Mul = '*', Div = '/' };

std::optional<Op> op_from_char(char c);
inline char op_char(Op op) { return static_cast<char>(op); }

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Immutable arithmetic expression tree. Nodes are shared, so copies are cheap.
///
/// A leaf is either a literal or a slot, where a slot is a 0-based index into a
/// problem's number list. Slots are written `N1`, `N2`, ... in text (1-based).
class Expr {
public:
    enum class Kind { Literal, Slot, Binary };

    Expr(); // literal 0
    static Expr literal(Rational value);
    static Expr slot(std::size_t index);
    static Expr binary(Op op, Expr lhs, Expr rhs);

    Kind kind() const;
    bool is_literal() const { return kind() == Kind::Literal; }
    bool is_slot() const { return kind() == Kind::Slot; }
    bool is_binary() const { return kind() == Kind::Binary; }

    const Rational& value() const;     // Literal only
    std::size_t slot_index() const;    // Slot only
    Op op() const;                     // Binary only
    const Expr& lhs() const;           // Binary only
    const Expr& rhs() const;           // Binary only

    friend bool operator==(const Expr& a, const Expr& b);

private:
    struct Node;
    explicit Expr(std::shared_ptr<const Node> node);
    std::shared_ptr<const Node> node_;
};

/// Parses infix text: numbers, slot markers `N<i>` (i >= 1), + - * /, parentheses.
/// Standard precedence, left associative.
Expr parse_infix(std::string_view text);

struct Equation {
    Expr expr;
    std::optional<Rational> stated_answer;
};

/// Like parse_infix but accepts "expr = answer", "X = expr" and "expr = X".
Equation parse_equation(std::string_view text);

/// Minimal-parenthesis infix rendering; parse_infix(render_infix(e)) == e.
std::string render_infix(const Expr& e);

std::vector<std::string> to_prefix(const Expr& e);
std::string to_prefix_string(const Expr& e);
Expr parse_prefix(std::span<const std::string> tokens);
Expr parse_prefix(std::string_view space_separated);

/// Literal token text for a leaf ("N3" for slot 2, "4.5" for a literal).
std::string leaf_token(const Expr& leaf);

/// Throws EvalError on an unbound slot or a zero divisor.
Rational evaluate(const Expr& e, std::span<const Rational> bindings = {});

std::size_t operator_count(const Expr& e);
std::size_t depth(const Expr& e);

/// Largest slot index + 1, or 0 when the expression has no slots.
std::size_t slot_span(const Expr& e);
bool has_literals(const Expr& e);

/// Replaces every literal value through `f`; slots and structure are kept.
Expr substitute_numbers(const Expr& e, const std::function<Rational(const Rational&)>& f);

/// Replaces every slot with the literal it is bound to.
Expr bind_slots(const Expr& e, std::span<const Rational> bindings);

/// Leaves in left-to-right order.
std::vector<Expr> leaves(const Expr& e);

struct EquationTemplate {
    std::vector<std::string> tokens;

    std::string str() const;
    std::size_t operator_count() const;
    std::size_t placeholder_count() const;

    friend bool operator==(const EquationTemplate&, const EquationTemplate&) = default;
    friend auto operator<=>(const EquationTemplate& a, const EquationTemplate& b) {
        return a.str() <=> b.str();
    }
};

inline constexpr std::string_view kTemplatePlaceholder = "#";

struct TemplateOptions {
    /// Orders the operands of + and * by their template string. Off by default.
    bool canonicalize_commutative = false;
};

EquationTemplate template_of(const Expr& e, TemplateOptions options = {});

/// Parses "+ * # # #".
EquationTemplate parse_template(std::string_view text);

/// Binds the placeholders of `t`, in prefix order, to the given slot indices.
/// Returns nullopt when there are fewer slots than placeholders.
std::optional<Expr> instantiate_template(const EquationTemplate& t, std::span<const std::size_t> slots);

} // namespace mwp
