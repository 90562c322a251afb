#include "mwp/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mwp::nn {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool embedding) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Matrix::Zero(rows, cols);
    p->grad = Matrix::Zero(rows, cols);
    p->m = Matrix::Zero(rows, cols);
    p->v = Matrix::Zero(rows, cols);
    p->embedding = embedding;
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return *p;
    throw std::out_of_range("no parameter '" + name + "'");
}

const Parameter& ParameterStore::at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
}

bool ParameterStore::contains(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return true;
    return false;
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->grad.setZero();
}

double ParameterStore::grad_norm() const {
    double sq = 0;
    for (const auto& p : params_) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

void ParameterStore::clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm <= max_norm || norm == 0) return;
    const double s = max_norm / norm;
    for (auto& p : params_) p->grad *= s;
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::push(Matrix value, std::function<void()> backward) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Graph::g(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var Graph::constant(Matrix value) { return push(std::move(value)); }

Var Graph::param(Parameter& p) {
    Var v = push(p.value);
    nodes_[v.id].param = &p;
    return v;
}

void Graph::backward(Var out) {
    if (value(out).size() != 1) throw std::invalid_argument("backward needs a scalar output");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    g(out.id)(0, 0) = 1.0;
    for (int i = out.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.size() == 0) continue;
        if (n.backward) n.backward();
        if (n.param) nodes_[i].param->grad += nodes_[i].grad;
    }
}

Var Graph::matmul(Var a, Var b) {
    const int ia = a.id, ib = b.id;
    Var out = push(value(a) * value(b));
    const int io = out.id;
    nodes_[io].backward = [this, ia, ib, io] {
        const Matrix& go = nodes_[io].grad;
        g(ia).noalias() += go * nodes_[ib].value.transpose();
        g(ib).noalias() += nodes_[ia].value.transpose() * go;
    };
    return out;
}

Var Graph::add(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw std::invalid_argument("add: shape mismatch");
    const int ia = a.id, ib = b.id;
    Var out = push(value(a) + value(b));
    const int io = out.id;
    nodes_[io].backward = [this, ia, ib, io] {
        g(ia) += nodes_[io].grad;
        g(ib) += nodes_[io].grad;
    };
    return out;
}

Var Graph::add_bias(Var a, Var bias) {
    const int ia = a.id, ib = bias.id;
    Var out = push(value(a).colwise() + value(bias).col(0));
    const int io = out.id;
    nodes_[io].backward = [this, ia, ib, io] {
        g(ia) += nodes_[io].grad;
        g(ib) += nodes_[io].grad.rowwise().sum();
    };
    return out;
}

Var Graph::hadamard(Var a, Var b) {
    const int ia = a.id, ib = b.id;
    Var out = push(value(a).cwiseProduct(value(b)));
    const int io = out.id;
    nodes_[io].backward = [this, ia, ib, io] {
        const Matrix& go = nodes_[io].grad;
        g(ia) += go.cwiseProduct(nodes_[ib].value);
        g(ib) += go.cwiseProduct(nodes_[ia].value);
    };
    return out;
}

Var Graph::scale(Var a, double s) {
    const int ia = a.id;
    Var out = push(value(a) * s);
    const int io = out.id;
    nodes_[io].backward = [this, ia, io, s] { g(ia) += nodes_[io].grad * s; };
    return out;
}

Var Graph::sigmoid(Var a) {
    const int ia = a.id;
    Var out = push(value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
    const int io = out.id;
    nodes_[io].backward = [this, ia, io] {
        const Matrix& y = nodes_[io].value;
        g(ia) += nodes_[io].grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
    };
    return out;
}

Var Graph::tanh(Var a) {
    const int ia = a.id;
    Var out = push(value(a).array().tanh().matrix());
    const int io = out.id;
    nodes_[io].backward = [this, ia, io] {
        const Matrix& y = nodes_[io].value;
        g(ia) += nodes_[io].grad.cwiseProduct((1.0 - y.array().square()).matrix());
    };
    return out;
}

Var Graph::relu(Var a) {
    const int ia = a.id;
    Var out = push(value(a).cwiseMax(0.0));
    const int io = out.id;
    nodes_[io].backward = [this, ia, io] {
        const Matrix& x = nodes_[ia].value;
        g(ia) += nodes_[io].grad.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
    };
    return out;
}

Var Graph::mul_cols(Var a, const RowVector& w) {
    const int ia = a.id;
    Var out = push(value(a) * w.asDiagonal());
    const int io = out.id;
    nodes_[io].backward = [this, ia, io, w] { g(ia) += nodes_[io].grad * w.asDiagonal(); };
    return out;
}

Var Graph::mul_const(Var a, const Matrix& m) {
    const int ia = a.id;
    Var out = push(value(a).cwiseProduct(m));
    const int io = out.id;
    nodes_[io].backward = [this, ia, io, m] { g(ia) += nodes_[io].grad.cwiseProduct(m); };
    return out;
}

Var Graph::gather_cols(Var table, const std::vector<int>& ids) {
    const Matrix& t = value(table);
    Matrix out_value(t.rows(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t j = 0; j < ids.size(); ++j) {
        if (ids[j] < 0 || ids[j] >= t.cols()) throw std::out_of_range("gather_cols: index out of range");
        out_value.col(static_cast<Eigen::Index>(j)) = t.col(ids[j]);
    }
    const int it = table.id;
    Var out = push(std::move(out_value));
    const int io = out.id;
    nodes_[io].backward = [this, it, io, ids] {
        Matrix& gt = g(it);
        const Matrix& go = nodes_[io].grad;
        for (std::size_t j = 0; j < ids.size(); ++j) gt.col(ids[j]) += go.col(static_cast<Eigen::Index>(j));
    };
    return out;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to concatenate");
    Eigen::Index rows = 0;
    const Eigen::Index cols = value(parts[0]).cols();
    for (auto p : parts) {
        if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += value(p).rows();
    }
    Matrix v(rows, cols);
    std::vector<int> ids;
    Eigen::Index r = 0;
    for (auto p : parts) {
        v.middleRows(r, value(p).rows()) = value(p);
        r += value(p).rows();
        ids.push_back(p.id);
    }
    Var out = push(std::move(v));
    const int io = out.id;
    nodes_[io].backward = [this, ids, io] {
        Eigen::Index r = 0;
        for (int id : ids) {
            const Eigen::Index n = nodes_[id].value.rows();
            g(id) += nodes_[io].grad.middleRows(r, n);
            r += n;
        }
    };
    return out;
}

Var Graph::slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > value(a).rows()) throw std::out_of_range("slice_rows");
    const int ia = a.id;
    Var out = push(value(a).middleRows(start, count));
    const int io = out.id;
    nodes_[io].backward = [this, ia, io, start, count] { g(ia).middleRows(start, count) += nodes_[io].grad; };
    return out;
}

Var Graph::colwise_dot(Var a, Var b) {
    const int ia = a.id, ib = b.id;
    Var out = push(value(a).cwiseProduct(value(b)).colwise().sum());
    const int io = out.id;
    nodes_[io].backward = [this, ia, ib, io] {
        const RowVector go = nodes_[io].grad.row(0);
        g(ia) += nodes_[ib].value * go.asDiagonal();
        g(ib) += nodes_[ia].value * go.asDiagonal();
    };
    return out;
}

Var Graph::stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
    const Eigen::Index cols = value(rows[0]).cols();
    Matrix v(static_cast<Eigen::Index>(rows.size()), cols);
    std::vector<int> ids;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        v.row(static_cast<Eigen::Index>(t)) = value(rows[t]).row(0);
        ids.push_back(rows[t].id);
    }
    Var out = push(std::move(v));
    const int io = out.id;
    nodes_[io].backward = [this, ids, io] {
        for (std::size_t t = 0; t < ids.size(); ++t) g(ids[t]).row(0) += nodes_[io].grad.row(static_cast<Eigen::Index>(t));
    };
    return out;
}

Var Graph::row(Var a, Eigen::Index r) {
    const int ia = a.id;
    Var out = push(value(a).row(r));
    const int io = out.id;
    nodes_[io].backward = [this, ia, io, r] { g(ia).row(r) += nodes_[io].grad.row(0); };
    return out;
}

Var Graph::mul_row_broadcast(Var a, Var r) {
    const int ia = a.id, ir = r.id;
    Var out = push(value(a) * value(r).row(0).asDiagonal());
    const int io = out.id;
    nodes_[io].backward = [this, ia, ir, io] {
        const Matrix& go = nodes_[io].grad;
        g(ia) += go * nodes_[ir].value.row(0).asDiagonal();
        g(ir).row(0) += go.cwiseProduct(nodes_[ia].value).colwise().sum();
    };
    return out;
}

Var Graph::softmax_cols(Var a, const Matrix& mask) {
    const Matrix& x = value(a);
    if (mask.rows() != x.rows() || mask.cols() != x.cols()) throw std::invalid_argument("softmax_cols: mask shape");
    Matrix y = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (mask(i, j) != 0) mx = std::max(mx, x(i, j));
        if (!std::isfinite(mx)) continue;
        double total = 0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (mask(i, j) == 0) continue;
            y(i, j) = std::exp(x(i, j) - mx);
            total += y(i, j);
        }
        y.col(j) /= total;
    }
    const int ia = a.id;
    Var out = push(std::move(y));
    const int io = out.id;
    nodes_[io].backward = [this, ia, io] {
        const Matrix& y = nodes_[io].value;
        const Matrix& go = nodes_[io].grad;
        const RowVector dot = go.cwiseProduct(y).colwise().sum();
        g(ia) += y.cwiseProduct(go - Matrix::Ones(go.rows(), 1) * dot);
    };
    return out;
}

Var Graph::sum(const std::vector<Var>& terms) {
    if (terms.empty()) throw std::invalid_argument("sum: no terms");
    Matrix v = value(terms[0]);
    std::vector<int> ids{terms[0].id};
    for (std::size_t i = 1; i < terms.size(); ++i) {
        v += value(terms[i]);
        ids.push_back(terms[i].id);
    }
    Var out = push(std::move(v));
    const int io = out.id;
    nodes_[io].backward = [this, ids, io] {
        for (int id : ids) g(id) += nodes_[io].grad;
    };
    return out;
}

Var Graph::cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<double>& weights) {
    const Matrix& x = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != x.cols() || weights.size() != targets.size())
        throw std::invalid_argument("cross_entropy: batch size mismatch");
    Matrix probs(x.rows(), x.cols());
    double loss = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mx = x.col(j).maxCoeff();
        const Eigen::VectorXd e = (x.col(j).array() - mx).exp().matrix();
        const double z = e.sum();
        probs.col(j) = e / z;
        if (weights[j] != 0) loss += weights[j] * (std::log(z) + mx - x(targets[j], j));
    }
    const int il = logits.id;
    Var out = push(Matrix::Constant(1, 1, loss));
    const int io = out.id;
    nodes_[io].backward = [this, il, io, probs = std::move(probs), targets, weights] {
        const double go = nodes_[io].grad(0, 0);
        Matrix& gl = g(il);
        for (Eigen::Index j = 0; j < probs.cols(); ++j) {
            if (weights[j] == 0) continue;
            Eigen::VectorXd d = probs.col(j);
            d(targets[j]) -= 1.0;
            gl.col(j) += go * weights[j] * d;
        }
    };
    return out;
}

Var Graph::sum_squares(Var a) {
    const int ia = a.id;
    Var out = push(Matrix::Constant(1, 1, value(a).squaredNorm()));
    const int io = out.id;
    nodes_[io].backward = [this, ia, io] { g(ia) += 2.0 * nodes_[io].grad(0, 0) * nodes_[ia].value; };
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer and gradient check

void Adam::step(ParameterStore& params) {
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (Parameter* p : params.all()) {
        const double rate = p->embedding ? embedding_lr : lr;
        p->m = beta1 * p->m + (1.0 - beta1) * p->grad;
        p->v = beta2 * p->v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
        p->value.array() -= rate * (p->m.array() / c1) / ((p->v.array() / c2).sqrt() + eps);
    }
}

std::vector<std::pair<std::string, double>> grad_check_blocks(const std::function<Var(Graph&)>& loss,
                                                              ParameterStore& params, double eps, double floor) {
    if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
    auto evaluate = [&] {
        Graph graph;
        const double v = graph.value(loss(graph))(0, 0);
        if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite loss");
        return v;
    };
    params.zero_grad();
    {
        Graph graph;
        Var out = loss(graph);
        if (!std::isfinite(graph.value(out)(0, 0))) throw std::domain_error("grad_check: non-finite loss");
        graph.backward(out);
    }
    std::vector<std::pair<std::string, double>> result;
    for (Parameter* p : params.all()) {
        const Matrix analytic = p->grad;
        double worst = 0;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            double& x = p->value.data()[i];
            const double saved = x;
            x = saved + eps;
            const double up = evaluate();
            x = saved - eps;
            const double down = evaluate();
            x = saved;
            const double numeric = (up - down) / (2 * eps);
            const double a = analytic.data()[i];
            if (!std::isfinite(a)) throw std::domain_error("grad_check: non-finite gradient");
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            worst = std::max(worst, rel);
        }
        result.emplace_back(p->name, worst);
    }
    return result;
}

double grad_check(const std::function<Var(Graph&)>& loss, ParameterStore& params, double eps) {
    double worst = 0;
    for (const auto& [_, err] : grad_check_blocks(loss, params, eps)) worst = std::max(worst, err);
    return worst;
}

} // namespace mwp::nn
