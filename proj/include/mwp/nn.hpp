#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mwp::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// A trainable tensor with its gradient and Adam moments.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;
    Matrix v;
    bool embedding = false; // trained with the embedding learning rate
};

/// Owns parameters in creation order; references stay valid.
class ParameterStore {
public:
    Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool embedding = false);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::size_t scalar_count() const;

    void zero_grad();
    double grad_norm() const;
    /// Rescales gradients so the global norm is at most `max_norm`.
    void clip_grad_norm(double max_norm);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    int id = -1;
};

/// Reverse-mode tape. Columns are batch examples throughout.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Matrix value);
    Var param(Parameter& p);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    /// Gradient of the last backward() target with respect to `v`.
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(out)/d(out) = 1 for a 1x1 output, runs the tape in reverse and
    /// accumulates into the gradients of referenced parameters.
    void backward(Var out);

    // Operations.
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var add_bias(Var a, Var bias); // bias is a column, broadcast across columns
    Var hadamard(Var a, Var b);
    Var scale(Var a, double s);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var relu(Var a);
    /// Multiplies column j by w(j); w is a constant.
    Var mul_cols(Var a, const RowVector& w);
    /// Elementwise product with a constant (dropout masks).
    Var mul_const(Var a, const Matrix& m);
    /// Column j is column ids[j] of `table` (embedding lookup).
    Var gather_cols(Var table, const std::vector<int>& ids);
    Var concat_rows(const std::vector<Var>& parts);
    Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
    /// 1 x B row of per-column dot products.
    Var colwise_dot(Var a, Var b);
    /// Stacks 1 x B rows into T x B.
    Var stack_rows(const std::vector<Var>& rows);
    Var row(Var a, Eigen::Index r);
    /// Column j of `a` scaled by r(0, j), with r a 1 x B variable.
    Var mul_row_broadcast(Var a, Var r);
    /// Column-wise softmax; entries where mask is 0 get probability 0.
    Var softmax_cols(Var a, const Matrix& mask);
    Var sum(const std::vector<Var>& terms);
    /// sum_j weights[j] * -log softmax(logits.col(j))[targets[j]], as 1 x 1.
    Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<double>& weights);
    /// Sum of squared entries, as 1 x 1.
    Var sum_squares(Var a);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Parameter* param = nullptr;
        std::function<void()> backward;
    };

    Var push(Matrix value, std::function<void()> backward = {});
    Matrix& g(int id);

    std::vector<Node> nodes_;
};

/// Adam with a separate learning rate for embedding tables.
struct Adam {
    double lr = 1e-3;
    double embedding_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t steps = 0;

    void step(ParameterStore& params);
};

/// Gradient check against central finite differences. `loss` must build a
/// 1x1 scalar from the parameters in `params`. Returns the maximum relative
/// error per parameter name, where the relative error of one entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// Throws std::domain_error on non-finite values.
std::vector<std::pair<std::string, double>> grad_check_blocks(const std::function<Var(Graph&)>& loss,
                                                              ParameterStore& params, double eps = 1e-5,
                                                              double floor = 1e-6);
double grad_check(const std::function<Var(Graph&)>& loss, ParameterStore& params, double eps = 1e-5);

} // namespace mwp::nn
