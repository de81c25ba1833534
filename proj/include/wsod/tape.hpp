#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

namespace wsod {

using Mat = Eigen::MatrixXd;
using GradTable = std::map<std::string, Mat>;

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
};

/// Reverse-mode differentiation tape over dense matrices.
///
/// Nodes are evaluated eagerly at construction, so the node list is
/// topologically ordered by creation and the backward pass visits each node
/// exactly once in reverse. The op set is the closed set of primitives the
/// model needs; there is deliberately no general broadcasting — the allowed
/// right-hand shapes for binary ops are documented per op.
class Tape {
public:
    /// Registers a trainable leaf. Each name may be bound at most once per
    /// tape; gradients are reported under this name by parameter_grads().
    Var param(const std::string& name, const Mat& value);

    Var constant(Mat value);
    Var constant(double scalar); // 1x1

    // Binary elementwise ops. b may have the same shape as a, be 1x1
    // (scalar broadcast) or, for add/sub/mul, be a 1xcols(a) row vector
    // (row broadcast).
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b); // b: same shape or 1x1

    Var matmul(Var a, Var b);

    // Unary ops.
    Var transpose(Var a);
    Var relu(Var a);             // subgradient at 0 is 0
    Var exp(Var a);
    Var log_clamped(Var a, double floor); // log(max(a, floor)), grad 0 below floor
    Var sigmoid(Var a);
    Var scale_add(Var a, double scale, double offset); // scale*a + offset

    Var softmax_rows(Var a); // softmax within each row
    Var softmax_cols(Var a); // softmax within each column

    Var row_sum(Var a); // n x m -> n x 1
    Var col_sum(Var a); // n x m -> 1 x m
    Var sum(Var a);     // n x m -> 1 x 1

    Var hcat(const std::vector<Var>& parts);       // column-wise concatenation
    Var gather_rows(Var a, std::vector<int> rows); // repeated indices allowed
    Var elem(Var a, int i, int j);                 // 1x1 view of one entry

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const { return nodes_[v.id].value(0, 0); }

    /// Backpropagates from a scalar (1x1) loss node. Rejects non-scalar
    /// losses. May be called repeatedly; gradients are reset each call.
    void backward(Var loss);

    /// Gradient of the given node after backward().
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }

    /// Gradients of all registered parameters, keyed by name. Parameters
    /// that do not lie on the loss's computational path have exactly zero
    /// gradients.
    GradTable parameter_grads() const;

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        Leaf, Const, Add, Sub, Mul, Div, MatMul, Transpose, Relu, Exp,
        LogClamped, Sigmoid, ScaleAdd, SoftmaxRows, SoftmaxCols, RowSum,
        ColSum, Sum, HCat, GatherRows, Elem,
    };

    struct Node {
        Op op;
        int a = -1, b = -1;
        double c0 = 0.0, c1 = 1.0; // ScaleAdd: c1*a + c0; LogClamped: floor in c0
        std::vector<int> index;    // GatherRows rows, HCat part ids, Elem (i, j)
        std::string name;          // Leaf only
        Mat value;
        Mat grad;
    };

    Var push(Node n);
    void check_binary_shapes(const Mat& a, const Mat& b, bool allow_rowvec) const;
    void accumulate(Node& n);

    std::vector<Node> nodes_;
};

} // namespace wsod
