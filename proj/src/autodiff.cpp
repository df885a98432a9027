// SPDX-License-Identifier: Apache-2.0
#include "dlsm/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dlsm::ad {

namespace {

std::string shape_str(const Mat& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

}  // namespace

void shape_error(const std::string& op, const Mat& a, const Mat& b) {
    throw std::invalid_argument("shape mismatch in " + op + ": " + shape_str(a) +
                                " vs " + shape_str(b));
}

const Mat& Var::value() const { return graph->node(id).value; }
bool Var::requires_grad() const { return graph->node(id).requires_grad; }

Var Graph::emit(Op op, Var a, Var b, Mat value, int aux0, int aux1, double scalar) {
    Node n;
    n.op = op;
    n.in0 = a.valid() ? a.id : -1;
    n.in1 = b.valid() ? b.id : -1;
    n.aux0 = aux0;
    n.aux1 = aux1;
    n.scalar = scalar;
    n.value = std::move(value);
    if (op == Op::Input) {
        n.requires_grad = true;
    } else if (op == Op::Constant || op == Op::ReluMask) {
        n.requires_grad = false;
    } else if (op == Op::MulMask) {
        // The gate acts as a constant 0/1 mask; only the first input is live.
        n.requires_grad = a.valid() && a.requires_grad();
    } else {
        n.requires_grad = (a.valid() && a.requires_grad()) || (b.valid() && b.requires_grad());
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::emit(Op op, Var a, Mat value, int aux0, int aux1, double scalar) {
    return emit(op, a, Var{}, std::move(value), aux0, aux1, scalar);
}

Var Graph::constant(Mat v) { return emit(Op::Constant, Var{}, std::move(v)); }
Var Graph::constant(double v) { return constant(Mat::Constant(1, 1, v)); }
Var Graph::input(Mat v) { return emit(Op::Input, Var{}, std::move(v)); }

Var Graph::add(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_error("add", va, vb);
    return emit(Op::Add, a, b, va + vb);
}

Var Graph::sub(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_error("sub", va, vb);
    return emit(Op::Sub, a, b, va - vb);
}

Var Graph::neg(Var a) { return emit(Op::Neg, a, -a.value()); }

Var Graph::mul(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_error("mul", va, vb);
    return emit(Op::Mul, a, b, va.cwiseProduct(vb));
}

Var Graph::div(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_error("div", va, vb);
    return emit(Op::Div, a, b, va.cwiseQuotient(vb));
}

Var Graph::matmul(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.cols() != vb.rows()) shape_error("matmul", va, vb);
    return emit(Op::MatMul, a, b, va * vb);
}

Var Graph::matmul_nt(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.cols() != vb.cols()) shape_error("matmul_nt", va, vb);
    return emit(Op::MatMulNT, a, b, va * vb.transpose());
}

Var Graph::matmul_tn(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.rows() != vb.rows()) shape_error("matmul_tn", va, vb);
    return emit(Op::MatMulTN, a, b, va.transpose() * vb);
}

Var Graph::transpose(Var a) { return emit(Op::Transpose, a, a.value().transpose()); }

Var Graph::add_rows(Var a, Var row) {
    const Mat &va = a.value(), &vr = row.value();
    if (vr.rows() != 1 || vr.cols() != va.cols()) shape_error("add_rows", va, vr);
    Mat v = va;
    v.rowwise() += vr.row(0);
    return emit(Op::AddRows, a, row, std::move(v));
}

Var Graph::add_cols(Var a, Var col) {
    const Mat &va = a.value(), &vc = col.value();
    if (vc.cols() != 1 || vc.rows() != va.rows()) shape_error("add_cols", va, vc);
    Mat v = va;
    v.colwise() += vc.col(0);
    return emit(Op::AddCols, a, col, std::move(v));
}

Var Graph::scale_rows(Var a, Var col) {
    const Mat &va = a.value(), &vc = col.value();
    if (vc.cols() != 1 || vc.rows() != va.rows()) shape_error("scale_rows", va, vc);
    return emit(Op::ScaleRows, a, col, va.array().colwise() * vc.col(0).array());
}

Var Graph::mul_mask(Var a, Var gate) {
    const Mat &va = a.value(), &vg = gate.value();
    if (va.rows() != vg.rows() || va.cols() != vg.cols()) shape_error("mul_mask", va, vg);
    Mat v = (vg.array() > 0.0).select(va, 0.0);
    return emit(Op::MulMask, a, gate, std::move(v));
}

Var Graph::scale(Var a, double c) { return emit(Op::Scale, a, a.value() * c, 0, 0, c); }

Var Graph::add_scalar(Var a, double c) {
    return emit(Op::AddScalar, a, (a.value().array() + c).matrix(), 0, 0, c);
}

Var Graph::relu(Var a) { return emit(Op::Relu, a, a.value().cwiseMax(0.0)); }

Var Graph::relu_mask(Var a) {
    return emit(Op::ReluMask, a, (a.value().array() > 0.0).cast<double>().matrix());
}

Var Graph::softplus(Var a) {
    // log(1 + e^x), computed as max(x, 0) + log1p(e^{-|x|})
    Mat v = a.value().unaryExpr(
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return emit(Op::Softplus, a, std::move(v));
}

Var Graph::sigmoid(Var a) {
    Mat v = a.value().unaryExpr([](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    return emit(Op::Sigmoid, a, std::move(v));
}

Var Graph::exp(Var a) { return emit(Op::Exp, a, a.value().array().exp().matrix()); }
Var Graph::log(Var a) { return emit(Op::Log, a, a.value().array().log().matrix()); }

Var Graph::sum(Var a) { return emit(Op::Sum, a, Mat::Constant(1, 1, a.value().sum())); }

Var Graph::row_sum(Var a) { return emit(Op::RowSum, a, a.value().rowwise().sum()); }

Var Graph::col_sum(Var a) { return emit(Op::ColSum, a, a.value().colwise().sum()); }

Var Graph::broadcast_rows(Var a, Eigen::Index rows) {
    const Mat& va = a.value();
    if (va.rows() != 1) shape_error("broadcast_rows", va, Mat(1, va.cols()));
    return emit(Op::BroadcastRows, a, va.replicate(rows, 1), static_cast<int>(rows));
}

Var Graph::broadcast_cols(Var a, Eigen::Index cols) {
    const Mat& va = a.value();
    if (va.cols() != 1) shape_error("broadcast_cols", va, Mat(va.rows(), 1));
    return emit(Op::BroadcastCols, a, va.replicate(1, cols), static_cast<int>(cols));
}

Var Graph::broadcast_scalar(Var a, Eigen::Index rows, Eigen::Index cols) {
    const Mat& va = a.value();
    if (va.size() != 1) shape_error("broadcast_scalar", va, Mat(1, 1));
    return emit(Op::BroadcastScalar, a, Mat::Constant(rows, cols, va(0, 0)),
                static_cast<int>(rows), static_cast<int>(cols));
}

Var Graph::concat_cols(Var a, Var b) {
    const Mat &va = a.value(), &vb = b.value();
    if (va.rows() != vb.rows()) shape_error("concat_cols", va, vb);
    Mat v(va.rows(), va.cols() + vb.cols());
    v << va, vb;
    return emit(Op::ConcatCols, a, b, std::move(v));
}

Var Graph::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    const Mat& va = a.value();
    if (start < 0 || count < 0 || start + count > va.cols())
        throw std::invalid_argument("slice_cols: range out of bounds");
    return emit(Op::SliceCols, a, va.middleCols(start, count), static_cast<int>(start),
                static_cast<int>(va.cols()));
}

Var Graph::mean(Var a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var Graph::squared_norm(Var a) { return sum(mul(a, a)); }

Var Graph::row_squared_norm(Var a) { return row_sum(mul(a, a)); }

Var Graph::logsumexp_rows(Var a) {
    // Rowwise max is a constant shift: the exact gradient is unchanged.
    Mat mx = a.value().rowwise().maxCoeff();
    Var shift = constant(mx);
    Var centered = add_cols(a, constant(-mx));
    return add(log(row_sum(exp(centered))), shift);
}

Var Graph::log_softmax(Var a) {
    return add_cols(a, neg(logsumexp_rows(a)));
}

Var Graph::gather_cols(Var a, const Eigen::VectorXi& idx) {
    const Mat& va = a.value();
    if (idx.size() != va.rows())
        throw std::invalid_argument("gather_cols: index count does not match rows");
    Mat onehot = Mat::Zero(va.rows(), va.cols());
    for (Eigen::Index i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= va.cols())
            throw std::invalid_argument("gather_cols: index out of range");
        onehot(i, idx[i]) = 1.0;
    }
    return row_sum(mul(a, constant(std::move(onehot))));
}

void Graph::backward_into(int id, Var adj, std::vector<int>& adjoints) {
    auto accumulate = [&](int target, Var contrib) {
        if (target < 0) return;
        if (!nodes_[static_cast<std::size_t>(target)].requires_grad) return;
        if (adjoints[static_cast<std::size_t>(target)] < 0) {
            adjoints[static_cast<std::size_t>(target)] = contrib.id;
        } else {
            Var prev{this, adjoints[static_cast<std::size_t>(target)]};
            adjoints[static_cast<std::size_t>(target)] = add(prev, contrib).id;
        }
    };

    const Node n = nodes_[static_cast<std::size_t>(id)];  // copy: vector may grow
    Var a{this, n.in0};
    Var b{this, n.in1};
    switch (n.op) {
        case Op::Constant:
        case Op::Input:
        case Op::ReluMask:
            break;
        case Op::Add:
            accumulate(n.in0, adj);
            accumulate(n.in1, adj);
            break;
        case Op::Sub:
            accumulate(n.in0, adj);
            accumulate(n.in1, neg(adj));
            break;
        case Op::Neg:
            accumulate(n.in0, neg(adj));
            break;
        case Op::Mul:
            accumulate(n.in0, mul(adj, b));
            accumulate(n.in1, mul(adj, a));
            break;
        case Op::Div:
            accumulate(n.in0, div(adj, b));
            accumulate(n.in1, neg(div(mul(adj, Var{this, id}), b)));
            break;
        case Op::MatMul:
            accumulate(n.in0, matmul_nt(adj, b));
            accumulate(n.in1, matmul_tn(a, adj));
            break;
        case Op::MatMulNT:  // a * b^T
            accumulate(n.in0, matmul(adj, b));
            accumulate(n.in1, matmul_tn(adj, a));
            break;
        case Op::MatMulTN:  // a^T * b
            accumulate(n.in0, matmul_nt(b, adj));
            accumulate(n.in1, matmul(a, adj));
            break;
        case Op::Transpose:
            accumulate(n.in0, transpose(adj));
            break;
        case Op::AddRows:
            accumulate(n.in0, adj);
            accumulate(n.in1, col_sum(adj));
            break;
        case Op::AddCols:
            accumulate(n.in0, adj);
            accumulate(n.in1, row_sum(adj));
            break;
        case Op::ScaleRows:
            accumulate(n.in0, scale_rows(adj, b));
            accumulate(n.in1, row_sum(mul(adj, a)));
            break;
        case Op::MulMask:
            accumulate(n.in0, mul_mask(adj, b));
            break;
        case Op::Scale:
            accumulate(n.in0, scale(adj, n.scalar));
            break;
        case Op::AddScalar:
            accumulate(n.in0, adj);
            break;
        case Op::Relu:
            accumulate(n.in0, mul_mask(adj, a));
            break;
        case Op::Softplus:
            accumulate(n.in0, mul(adj, sigmoid(a)));
            break;
        case Op::Sigmoid: {
            Var s{this, id};
            accumulate(n.in0, mul(adj, mul(s, add_scalar(neg(s), 1.0))));
            break;
        }
        case Op::Exp:
            accumulate(n.in0, mul(adj, Var{this, id}));
            break;
        case Op::Log:
            accumulate(n.in0, div(adj, a));
            break;
        case Op::Sum:
            accumulate(n.in0, broadcast_scalar(adj, a.value().rows(), a.value().cols()));
            break;
        case Op::RowSum:
            accumulate(n.in0, broadcast_cols(adj, a.value().cols()));
            break;
        case Op::ColSum:
            accumulate(n.in0, broadcast_rows(adj, a.value().rows()));
            break;
        case Op::BroadcastRows:
            accumulate(n.in0, col_sum(adj));
            break;
        case Op::BroadcastCols:
            accumulate(n.in0, row_sum(adj));
            break;
        case Op::BroadcastScalar:
            accumulate(n.in0, sum(adj));
            break;
        case Op::ConcatCols:
            accumulate(n.in0, slice_cols(adj, 0, a.value().cols()));
            accumulate(n.in1, slice_cols(adj, a.value().cols(), b.value().cols()));
            break;
        case Op::SliceCols: {
            const Eigen::Index start = n.aux0;
            const Eigen::Index total = n.aux1;
            Mat padded = Mat::Zero(adj.value().rows(), total);
            padded.middleCols(start, adj.value().cols()) = adj.value();
            Var pv = emit(Op::PadCols, adj, std::move(padded), n.aux0, n.aux1);
            accumulate(n.in0, pv);
            break;
        }
        case Op::PadCols:
            accumulate(n.in0, slice_cols(adj, n.aux0, a.value().cols()));
            break;
    }
}

std::vector<Var> Graph::grad(Var output, const std::vector<Var>& wrt) {
    if (!output.valid() || output.graph != this)
        throw std::invalid_argument("grad: output is not a node of this graph");
    if (output.value().size() != 1)
        throw std::invalid_argument("grad: output must be scalar, got " +
                                    shape_str(output.value()));

    std::vector<int> adjoints(static_cast<std::size_t>(output.id) + 1, -1);
    adjoints[static_cast<std::size_t>(output.id)] = constant(1.0).id;
    for (int id = output.id; id >= 0; --id) {
        if (adjoints[static_cast<std::size_t>(id)] < 0) continue;
        if (!nodes_[static_cast<std::size_t>(id)].requires_grad) continue;
        backward_into(id, Var{this, adjoints[static_cast<std::size_t>(id)]}, adjoints);
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
        if (!w.valid() || w.graph != this)
            throw std::invalid_argument("grad: wrt entry is not a node of this graph");
        const int aid = w.id <= output.id ? adjoints[static_cast<std::size_t>(w.id)] : -1;
        if (aid >= 0) {
            out.push_back(Var{this, aid});
        } else {
            out.push_back(constant(Mat::Zero(w.value().rows(), w.value().cols())));
        }
    }
    return out;
}

double finite_diff_check(const ScalarFn& f, const Mat& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");

    Graph g;
    Var xv = g.input(x);
    Var y = f(g, xv);
    if (y.value().size() != 1 || !std::isfinite(y.value()(0, 0)))
        throw std::invalid_argument("finite_diff_check: f(x) is not a finite scalar");
    Mat analytic = g.grad(y, {xv})[0].value();

    auto eval = [&](const Mat& point) {
        Graph gg;
        Var v = gg.input(point);
        return f(gg, v).value()(0, 0);
    };

    double max_err = 0.0;
    Mat xp = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double orig = x(i, j);
            xp(i, j) = orig + h;
            const double fp = eval(xp);
            xp(i, j) = orig - h;
            const double fm = eval(xp);
            xp(i, j) = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err =
                std::abs(analytic(i, j) - numeric) / std::max(1.0, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace dlsm::ad
