#include "mwp/expr.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <variant>

namespace mwp {

std::optional<Op> op_from_char(char c) {
    switch (c) {
        case '+': return Op::Add;
        case '-': return Op::Sub;
        case '*': return Op::Mul;
        case '/': return Op::Div;
        default: return std::nullopt;
    }
}

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

struct Expr::Node {
    struct Binary {
        Op op;
        Expr lhs;
        Expr rhs;
    };
    std::variant<Rational, std::size_t, Binary> data;
};

Expr::Expr() : Expr(literal(0)) {}

Expr::Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

Expr Expr::literal(Rational value) {
    return Expr(std::make_shared<const Node>(Node{std::move(value)}));
}

Expr Expr::slot(std::size_t index) {
    return Expr(std::make_shared<const Node>(Node{index}));
}

Expr Expr::binary(Op op, Expr lhs, Expr rhs) {
    return Expr(std::make_shared<const Node>(Node{Node::Binary{op, std::move(lhs), std::move(rhs)}}));
}

Expr::Kind Expr::kind() const {
    switch (node_->data.index()) {
        case 0: return Kind::Literal;
        case 1: return Kind::Slot;
        default: return Kind::Binary;
    }
}

const Rational& Expr::value() const { return std::get<Rational>(node_->data); }
std::size_t Expr::slot_index() const { return std::get<std::size_t>(node_->data); }
Op Expr::op() const { return std::get<Node::Binary>(node_->data).op; }
const Expr& Expr::lhs() const { return std::get<Node::Binary>(node_->data).lhs; }
const Expr& Expr::rhs() const { return std::get<Node::Binary>(node_->data).rhs; }

bool operator==(const Expr& a, const Expr& b) {
    if (a.node_ == b.node_) return true;
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
        case Expr::Kind::Literal: return a.value() == b.value();
        case Expr::Kind::Slot: return a.slot_index() == b.slot_index();
        case Expr::Kind::Binary:
            return a.op() == b.op() && a.lhs() == b.lhs() && a.rhs() == b.rhs();
    }
    return false;
}

// ---------------------------------------------------------------------------
// Infix parsing

namespace {

class InfixParser {
public:
    explicit InfixParser(std::string_view text) : text_(text) {}

    Expr parse() {
        skip_ws();
        if (pos_ == text_.size()) throw ParseError("empty expression", pos_);
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != text_.size()) {
            if (text_[pos_] == ')') throw ParseError("unbalanced ')'", pos_);
            throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_);
        }
        return e;
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    Expr parse_sum() {
        Expr lhs = parse_product();
        for (;;) {
            skip_ws();
            if (pos_ >= text_.size() || (text_[pos_] != '+' && text_[pos_] != '-')) return lhs;
            const Op op = *op_from_char(text_[pos_++]);
            lhs = Expr::binary(op, lhs, parse_product());
        }
    }

    Expr parse_product() {
        Expr lhs = parse_factor();
        for (;;) {
            skip_ws();
            if (pos_ >= text_.size() || (text_[pos_] != '*' && text_[pos_] != '/')) return lhs;
            const Op op = *op_from_char(text_[pos_++]);
            lhs = Expr::binary(op, lhs, parse_factor());
        }
    }

    Expr parse_factor() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("missing operand", pos_);
        const char c = text_[pos_];
        if (c == '(') {
            const std::size_t open = pos_++;
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == ')') throw ParseError("missing operand", pos_);
            Expr inner = parse_sum();
            skip_ws();
            if (pos_ >= text_.size() || text_[pos_] != ')') throw ParseError("unbalanced '('", open);
            ++pos_;
            return inner;
        }
        if (c == 'N') {
            const std::size_t start = pos_++;
            std::size_t index = 0;
            bool any = false;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                index = index * 10 + static_cast<std::size_t>(text_[pos_] - '0');
                any = true;
                ++pos_;
            }
            if (!any || index == 0) throw ParseError("malformed slot marker", start);
            return Expr::slot(index - 1);
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const std::size_t start = pos_;
            while (pos_ < text_.size() &&
                   (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
                ++pos_;
            auto value = parse_decimal(text_.substr(start, pos_ - start));
            if (!value) throw ParseError("malformed number", start);
            return Expr::literal(*value);
        }
        if (c == ')') throw ParseError("missing operand", pos_);
        if (op_from_char(c)) throw ParseError("missing operand", pos_);
        throw ParseError(std::string("malformed token '") + c + "'", pos_);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

bool is_variable_side(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    s = s.substr(b, e - b);
    return s == "x" || s == "X";
}

int precedence(Op op) { return (op == Op::Add || op == Op::Sub) ? 1 : 2; }

void render(const Expr& e, int parent_prec, bool right_child, std::string& out) {
    if (!e.is_binary()) {
        out += leaf_token(e);
        return;
    }
    const int prec = precedence(e.op());
    const bool parens = prec < parent_prec || (prec == parent_prec && right_child);
    if (parens) out += "( ";
    render(e.lhs(), prec, false, out);
    out += ' ';
    out += op_char(e.op());
    out += ' ';
    render(e.rhs(), prec, true, out);
    if (parens) out += " )";
}

void prefix(const Expr& e, std::vector<std::string>& out) {
    if (!e.is_binary()) {
        out.push_back(leaf_token(e));
        return;
    }
    out.emplace_back(1, op_char(e.op()));
    prefix(e.lhs(), out);
    prefix(e.rhs(), out);
}

Expr parse_prefix_at(std::span<const std::string> tokens, std::size_t& pos) {
    if (pos >= tokens.size()) throw ParseError("prefix sequence ends early", pos);
    const std::string& tok = tokens[pos];
    const std::size_t here = pos++;
    if (tok.size() == 1) {
        if (auto op = op_from_char(tok[0])) {
            Expr lhs = parse_prefix_at(tokens, pos);
            Expr rhs = parse_prefix_at(tokens, pos);
            return Expr::binary(*op, lhs, rhs);
        }
    }
    if (!tok.empty() && tok[0] == 'N') {
        std::size_t index = 0;
        for (std::size_t i = 1; i < tok.size(); ++i) {
            if (!std::isdigit(static_cast<unsigned char>(tok[i])))
                throw ParseError("malformed slot token '" + tok + "'", here);
            index = index * 10 + static_cast<std::size_t>(tok[i] - '0');
        }
        if (tok.size() == 1 || index == 0) throw ParseError("malformed slot token '" + tok + "'", here);
        return Expr::slot(index - 1);
    }
    auto value = parse_decimal(tok);
    if (!value) throw ParseError("malformed prefix token '" + tok + "'", here);
    return Expr::literal(*value);
}

void collect_leaves(const Expr& e, std::vector<Expr>& out) {
    if (e.is_binary()) {
        collect_leaves(e.lhs(), out);
        collect_leaves(e.rhs(), out);
    } else {
        out.push_back(e);
    }
}

void template_tokens(const Expr& e, const TemplateOptions& options, std::vector<std::string>& out) {
    if (!e.is_binary()) {
        out.emplace_back(kTemplatePlaceholder);
        return;
    }
    out.emplace_back(1, op_char(e.op()));
    std::vector<std::string> left, right;
    template_tokens(e.lhs(), options, left);
    template_tokens(e.rhs(), options, right);
    if (options.canonicalize_commutative && (e.op() == Op::Add || e.op() == Op::Mul) && right < left)
        std::swap(left, right);
    out.insert(out.end(), left.begin(), left.end());
    out.insert(out.end(), right.begin(), right.end());
}

} // namespace

Expr parse_infix(std::string_view text) { return InfixParser(text).parse(); }

Equation parse_equation(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) return {parse_infix(text), std::nullopt};
    if (text.find('=', eq + 1) != std::string_view::npos)
        throw ParseError("more than one '='", text.find('=', eq + 1));
    const std::string_view lhs = text.substr(0, eq);
    const std::string_view rhs = text.substr(eq + 1);
    if (is_variable_side(lhs)) {
        try {
            return {parse_infix(rhs), std::nullopt};
        } catch (const ParseError& err) {
            throw ParseError(err.what(), eq + 1 + err.offset());
        }
    }
    if (is_variable_side(rhs)) return {parse_infix(lhs), std::nullopt};
    Expr expr = parse_infix(lhs);
    std::string answer(rhs);
    answer.erase(std::remove_if(answer.begin(), answer.end(),
                                [](unsigned char c) { return std::isspace(c); }),
                 answer.end());
    auto value = parse_decimal(answer);
    if (!value) {
        // The right-hand side may itself be an expression ("2*3 = 12/2").
        try {
            value = evaluate(parse_infix(rhs));
        } catch (const std::exception&) {
            throw ParseError("malformed answer after '='", eq + 1);
        }
    }
    return {expr, value};
}

std::string leaf_token(const Expr& leaf) {
    if (leaf.is_slot()) return "N" + std::to_string(leaf.slot_index() + 1);
    return to_decimal_string(leaf.value());
}

std::string render_infix(const Expr& e) {
    std::string out;
    render(e, 0, false, out);
    return out;
}

std::vector<std::string> to_prefix(const Expr& e) {
    std::vector<std::string> out;
    prefix(e, out);
    return out;
}

std::string to_prefix_string(const Expr& e) {
    const auto tokens = to_prefix(e);
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

Expr parse_prefix(std::span<const std::string> tokens) {
    std::size_t pos = 0;
    Expr e = parse_prefix_at(tokens, pos);
    if (pos != tokens.size()) throw ParseError("trailing prefix tokens", pos);
    return e;
}

Expr parse_prefix(std::string_view space_separated) {
    std::vector<std::string> tokens;
    std::istringstream in{std::string(space_separated)};
    for (std::string tok; in >> tok;) tokens.push_back(tok);
    return parse_prefix(tokens);
}

Rational evaluate(const Expr& e, std::span<const Rational> bindings) {
    switch (e.kind()) {
        case Expr::Kind::Literal: return e.value();
        case Expr::Kind::Slot:
            if (e.slot_index() >= bindings.size())
                throw EvalError("unbound slot N" + std::to_string(e.slot_index() + 1));
            return bindings[e.slot_index()];
        case Expr::Kind::Binary: break;
    }
    const Rational a = evaluate(e.lhs(), bindings);
    const Rational b = evaluate(e.rhs(), bindings);
    switch (e.op()) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        case Op::Div:
            if (b == 0) throw EvalError("division by zero");
            return a / b;
    }
    throw EvalError("unknown operator");
}

std::size_t operator_count(const Expr& e) {
    return e.is_binary() ? 1 + operator_count(e.lhs()) + operator_count(e.rhs()) : 0;
}

std::size_t depth(const Expr& e) {
    return e.is_binary() ? 1 + std::max(depth(e.lhs()), depth(e.rhs())) : 0;
}

std::size_t slot_span(const Expr& e) {
    switch (e.kind()) {
        case Expr::Kind::Slot: return e.slot_index() + 1;
        case Expr::Kind::Literal: return 0;
        case Expr::Kind::Binary: return std::max(slot_span(e.lhs()), slot_span(e.rhs()));
    }
    return 0;
}

bool has_literals(const Expr& e) {
    if (e.is_literal()) return true;
    return e.is_binary() && (has_literals(e.lhs()) || has_literals(e.rhs()));
}

Expr substitute_numbers(const Expr& e, const std::function<Rational(const Rational&)>& f) {
    switch (e.kind()) {
        case Expr::Kind::Literal: return Expr::literal(f(e.value()));
        case Expr::Kind::Slot: return e;
        case Expr::Kind::Binary:
            return Expr::binary(e.op(), substitute_numbers(e.lhs(), f), substitute_numbers(e.rhs(), f));
    }
    return e;
}

Expr bind_slots(const Expr& e, std::span<const Rational> bindings) {
    switch (e.kind()) {
        case Expr::Kind::Literal: return e;
        case Expr::Kind::Slot:
            if (e.slot_index() >= bindings.size())
                throw EvalError("unbound slot N" + std::to_string(e.slot_index() + 1));
            return Expr::literal(bindings[e.slot_index()]);
        case Expr::Kind::Binary:
            return Expr::binary(e.op(), bind_slots(e.lhs(), bindings), bind_slots(e.rhs(), bindings));
    }
    return e;
}

std::vector<Expr> leaves(const Expr& e) {
    std::vector<Expr> out;
    collect_leaves(e, out);
    return out;
}

std::string EquationTemplate::str() const {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

std::size_t EquationTemplate::operator_count() const {
    return static_cast<std::size_t>(std::count_if(tokens.begin(), tokens.end(), [](const std::string& t) {
        return t != kTemplatePlaceholder;
    }));
}

std::size_t EquationTemplate::placeholder_count() const { return tokens.size() - operator_count(); }

EquationTemplate template_of(const Expr& e, TemplateOptions options) {
    EquationTemplate t;
    template_tokens(e, options, t.tokens);
    return t;
}

EquationTemplate parse_template(std::string_view text) {
    EquationTemplate t;
    std::istringstream in{std::string(text)};
    for (std::string tok; in >> tok;) {
        if (tok != kTemplatePlaceholder && !(tok.size() == 1 && op_from_char(tok[0])))
            throw ParseError("malformed template token '" + tok + "'", t.tokens.size());
        t.tokens.push_back(tok);
    }
    // Validate shape through the prefix parser.
    std::vector<std::string> probe;
    for (const auto& tok : t.tokens) probe.push_back(tok == kTemplatePlaceholder ? "0" : tok);
    parse_prefix(probe);
    return t;
}

std::optional<Expr> instantiate_template(const EquationTemplate& t, std::span<const std::size_t> slots) {
    std::vector<std::string> tokens;
    std::size_t next = 0;
    for (const auto& tok : t.tokens) {
        if (tok == kTemplatePlaceholder) {
            if (next >= slots.size()) return std::nullopt;
            tokens.push_back("N" + std::to_string(slots[next++] + 1));
        } else {
            tokens.push_back(tok);
        }
    }
    return parse_prefix(tokens);
}

} // namespace mwp
