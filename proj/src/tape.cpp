#include "wsod/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace wsod {

namespace {

Mat softmax_rows_value(const Mat& a) {
    Mat out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        Eigen::RowVectorXd e = (a.row(i).array() - m).exp();
        out.row(i) = e / e.sum();
    }
    return out;
}

Mat softmax_cols_value(const Mat& a) {
    Mat out(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        const double m = a.col(j).maxCoeff();
        Eigen::VectorXd e = (a.col(j).array() - m).exp();
        out.col(j) = e / e.sum();
    }
    return out;
}

// Expands g (which is 1x1, 1xm or same-shape) to the shape of a reference.
bool same_shape(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

bool is_rowvec_for(const Mat& b, const Mat& a) {
    return b.rows() == 1 && b.cols() == a.cols() && a.rows() > 1;
}

// Reduces a full-shape gradient down to the broadcast shape of b.
Mat reduce_to(const Mat& g, const Mat& b) {
    if (same_shape(g, b)) return g;
    if (is_scalar(b)) {
        Mat r(1, 1);
        r(0, 0) = g.sum();
        return r;
    }
    // row-vector broadcast
    return g.colwise().sum();
}

Mat expand_like(const Mat& b, const Mat& a) {
    if (same_shape(b, a)) return b;
    if (is_scalar(b)) return Mat::Constant(a.rows(), a.cols(), b(0, 0));
    return b.replicate(a.rows(), 1);
}

} // namespace

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_binary_shapes(const Mat& a, const Mat& b, bool allow_rowvec) const {
    if (same_shape(a, b) || is_scalar(b)) return;
    if (allow_rowvec && is_rowvec_for(b, a)) return;
    throw std::invalid_argument("tape: incompatible shapes for binary op");
}

Var Tape::param(const std::string& name, const Mat& value) {
    for (const Node& n : nodes_)
        if (n.op == Op::Leaf && n.name == name)
            throw std::invalid_argument("tape: parameter bound twice: " + name);
    Node n;
    n.op = Op::Leaf;
    n.name = name;
    n.value = value;
    return push(std::move(n));
}

Var Tape::constant(Mat value) {
    Node n;
    n.op = Op::Const;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::constant(double scalar) {
    Mat m(1, 1);
    m(0, 0) = scalar;
    return constant(std::move(m));
}

Var Tape::add(Var a, Var b) {
    const Mat& va = nodes_[a.id].value;
    const Mat& vb = nodes_[b.id].value;
    check_binary_shapes(va, vb, true);
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.value = va + expand_like(vb, va);
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    const Mat& va = nodes_[a.id].value;
    const Mat& vb = nodes_[b.id].value;
    check_binary_shapes(va, vb, true);
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.value = va - expand_like(vb, va);
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    const Mat& va = nodes_[a.id].value;
    const Mat& vb = nodes_[b.id].value;
    check_binary_shapes(va, vb, true);
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.value = va.cwiseProduct(expand_like(vb, va));
    return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
    const Mat& va = nodes_[a.id].value;
    const Mat& vb = nodes_[b.id].value;
    check_binary_shapes(va, vb, false);
    Node n;
    n.op = Op::Div;
    n.a = a.id;
    n.b = b.id;
    n.value = va.cwiseQuotient(expand_like(vb, va));
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    const Mat& va = nodes_[a.id].value;
    const Mat& vb = nodes_[b.id].value;
    if (va.cols() != vb.rows())
        throw std::invalid_argument("tape: matmul inner dimensions differ");
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.value = va * vb;
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.value = nodes_[a.id].value.transpose();
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.value = nodes_[a.id].value.cwiseMax(0.0);
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    Node n;
    n.op = Op::Exp;
    n.a = a.id;
    n.value = nodes_[a.id].value.array().exp();
    return push(std::move(n));
}

Var Tape::log_clamped(Var a, double floor) {
    Node n;
    n.op = Op::LogClamped;
    n.a = a.id;
    n.c0 = floor;
    n.value = nodes_[a.id].value.cwiseMax(floor).array().log();
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.id;
    n.value = nodes_[a.id].value.unaryExpr([](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    return push(std::move(n));
}

Var Tape::scale_add(Var a, double scale, double offset) {
    Node n;
    n.op = Op::ScaleAdd;
    n.a = a.id;
    n.c1 = scale;
    n.c0 = offset;
    n.value = (nodes_[a.id].value.array() * scale + offset).matrix();
    return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a.id;
    n.value = softmax_rows_value(nodes_[a.id].value);
    return push(std::move(n));
}

Var Tape::softmax_cols(Var a) {
    Node n;
    n.op = Op::SoftmaxCols;
    n.a = a.id;
    n.value = softmax_cols_value(nodes_[a.id].value);
    return push(std::move(n));
}

Var Tape::row_sum(Var a) {
    Node n;
    n.op = Op::RowSum;
    n.a = a.id;
    n.value = nodes_[a.id].value.rowwise().sum();
    return push(std::move(n));
}

Var Tape::col_sum(Var a) {
    Node n;
    n.op = Op::ColSum;
    n.a = a.id;
    n.value = nodes_[a.id].value.colwise().sum();
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    n.value = Mat::Constant(1, 1, nodes_[a.id].value.sum());
    return push(std::move(n));
}

Var Tape::hcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("tape: hcat of nothing");
    Eigen::Index rows = nodes_[parts[0].id].value.rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        if (nodes_[p.id].value.rows() != rows)
            throw std::invalid_argument("tape: hcat row mismatch");
        cols += nodes_[p.id].value.cols();
    }
    Node n;
    n.op = Op::HCat;
    n.value.resize(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        const Mat& v = nodes_[p.id].value;
        n.value.middleCols(at, v.cols()) = v;
        at += v.cols();
        n.index.push_back(p.id);
    }
    return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
    const Mat& va = nodes_[a.id].value;
    Node n;
    n.op = Op::GatherRows;
    n.a = a.id;
    n.value.resize(static_cast<Eigen::Index>(rows.size()), va.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= va.rows())
            throw std::out_of_range("tape: gather_rows index out of range");
        n.value.row(static_cast<Eigen::Index>(i)) = va.row(rows[i]);
    }
    n.index = std::move(rows);
    return push(std::move(n));
}

Var Tape::elem(Var a, int i, int j) {
    const Mat& va = nodes_[a.id].value;
    if (i < 0 || i >= va.rows() || j < 0 || j >= va.cols())
        throw std::out_of_range("tape: elem index out of range");
    Node n;
    n.op = Op::Elem;
    n.a = a.id;
    n.index = {i, j};
    n.value = Mat::Constant(1, 1, va(i, j));
    return push(std::move(n));
}

void Tape::backward(Var loss) {
    const Mat& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1)
        throw std::invalid_argument("tape: backward requires a scalar loss");
    for (Node& n : nodes_)
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i)
        accumulate(nodes_[static_cast<std::size_t>(i)]);
}

void Tape::accumulate(Node& n) {
    const Mat& g = n.grad;
    switch (n.op) {
    case Op::Leaf:
    case Op::Const:
        break;
    case Op::Add: {
        nodes_[n.a].grad += g;
        nodes_[n.b].grad += reduce_to(g, nodes_[n.b].value);
        break;
    }
    case Op::Sub: {
        nodes_[n.a].grad += g;
        nodes_[n.b].grad -= reduce_to(g, nodes_[n.b].value);
        break;
    }
    case Op::Mul: {
        const Mat& va = nodes_[n.a].value;
        const Mat vb = expand_like(nodes_[n.b].value, va);
        nodes_[n.a].grad += g.cwiseProduct(vb);
        nodes_[n.b].grad += reduce_to(g.cwiseProduct(va), nodes_[n.b].value);
        break;
    }
    case Op::Div: {
        const Mat& va = nodes_[n.a].value;
        const Mat vb = expand_like(nodes_[n.b].value, va);
        nodes_[n.a].grad += g.cwiseQuotient(vb);
        Mat gb = -g.cwiseProduct(va).cwiseQuotient(vb.cwiseProduct(vb));
        nodes_[n.b].grad += reduce_to(gb, nodes_[n.b].value);
        break;
    }
    case Op::MatMul: {
        nodes_[n.a].grad += g * nodes_[n.b].value.transpose();
        nodes_[n.b].grad += nodes_[n.a].value.transpose() * g;
        break;
    }
    case Op::Transpose: {
        nodes_[n.a].grad += g.transpose();
        break;
    }
    case Op::Relu: {
        const Mat& va = nodes_[n.a].value;
        nodes_[n.a].grad += g.cwiseProduct(
            (va.array() > 0.0).cast<double>().matrix());
        break;
    }
    case Op::Exp: {
        nodes_[n.a].grad += g.cwiseProduct(n.value);
        break;
    }
    case Op::LogClamped: {
        const Mat& va = nodes_[n.a].value;
        Mat mask = (va.array() > n.c0).cast<double>().matrix();
        nodes_[n.a].grad += g.cwiseProduct(mask).cwiseQuotient(va.cwiseMax(n.c0));
        break;
    }
    case Op::Sigmoid: {
        Mat d = n.value.cwiseProduct((1.0 - n.value.array()).matrix());
        nodes_[n.a].grad += g.cwiseProduct(d);
        break;
    }
    case Op::ScaleAdd: {
        nodes_[n.a].grad += n.c1 * g;
        break;
    }
    case Op::SoftmaxRows: {
        Mat& ga = nodes_[n.a].grad;
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
            const double dot = g.row(i).dot(n.value.row(i));
            ga.row(i) += n.value.row(i).cwiseProduct(
                (g.row(i).array() - dot).matrix());
        }
        break;
    }
    case Op::SoftmaxCols: {
        Mat& ga = nodes_[n.a].grad;
        for (Eigen::Index j = 0; j < n.value.cols(); ++j) {
            const double dot = g.col(j).dot(n.value.col(j));
            ga.col(j) += n.value.col(j).cwiseProduct(
                (g.col(j).array() - dot).matrix());
        }
        break;
    }
    case Op::RowSum: {
        nodes_[n.a].grad += g.replicate(1, nodes_[n.a].value.cols());
        break;
    }
    case Op::ColSum: {
        nodes_[n.a].grad += g.replicate(nodes_[n.a].value.rows(), 1);
        break;
    }
    case Op::Sum: {
        nodes_[n.a].grad.array() += g(0, 0);
        break;
    }
    case Op::HCat: {
        Eigen::Index at = 0;
        for (int pid : n.index) {
            Mat& gp = nodes_[pid].grad;
            gp += g.middleCols(at, gp.cols());
            at += gp.cols();
        }
        break;
    }
    case Op::GatherRows: {
        Mat& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.index.size(); ++i)
            ga.row(n.index[i]) += g.row(static_cast<Eigen::Index>(i));
        break;
    }
    case Op::Elem: {
        nodes_[n.a].grad(n.index[0], n.index[1]) += g(0, 0);
        break;
    }
    }
}

GradTable Tape::parameter_grads() const {
    GradTable out;
    for (const Node& n : nodes_)
        if (n.op == Op::Leaf)
            out[n.name] = n.grad.size() > 0
                              ? n.grad
                              : Mat::Zero(n.value.rows(), n.value.cols());
    return out;
}

} // namespace wsod
