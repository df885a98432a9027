// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

namespace dlsm::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape over dense float64 matrices (rank <= 2). The backward
// pass appends gradient nodes to the same tape, so gradients are first-class
// values and can themselves be differentiated (needed for parameter
// gradients of losses that contain input gradients of a network).
class Graph;

struct Var {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Mat& value() const;
    bool requires_grad() const;
};

enum class Op {
    Constant,
    Input,
    Add,
    Sub,
    Neg,
    Mul,        // elementwise
    Div,        // elementwise
    MatMul,
    MatMulNT,   // a * b^T without materializing the transpose
    MatMulTN,   // a^T * b without materializing the transpose
    Transpose,
    AddRows,    // m x n + 1 x n, row vector added to every row
    AddCols,    // m x n + m x 1, column vector added to every column
    ScaleRows,  // m x n scaled per row by an m x 1 vector
    MulMask,    // a .* (gate > 0); the gate is constant under re-differentiation
    Scale,      // by compile-time constant scalar
    AddScalar,  // constant scalar offset
    Relu,
    ReluMask,   // 0/1 mask, treated as constant under re-differentiation
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Sum,            // full reduction -> 1x1
    RowSum,         // m x n -> m x 1
    ColSum,         // m x n -> 1 x n
    BroadcastRows,  // 1 x n -> m x n
    BroadcastCols,  // m x 1 -> m x n
    BroadcastScalar,// 1 x 1 -> m x n
    ConcatCols,
    SliceCols,
    PadCols,        // zero-pad columns; adjoint of SliceCols
};

struct Node {
    Op op;
    int in0 = -1;
    int in1 = -1;
    int aux0 = 0;
    int aux1 = 0;
    double scalar = 0.0;
    bool requires_grad = false;
    Mat value;
};

class Graph {
public:
    Var constant(Mat v);
    Var constant(double v);
    Var input(Mat v);  // differentiable leaf

    // Detached copy: same value, no gradient tracking.
    Var detach(Var a) { return constant(node(a.id).value); }

    // Gradients of a scalar output w.r.t. each of `wrt`, as graph nodes.
    // Unreachable wrt entries yield zero constants of matching shape.
    std::vector<Var> grad(Var output, const std::vector<Var>& wrt);

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // primitive ops
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var neg(Var a);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var matmul_tn(Var a, Var b);  // a^T * b
    Var transpose(Var a);
    Var add_rows(Var a, Var row);   // broadcast add of a 1 x n row
    Var add_cols(Var a, Var col);   // broadcast add of an m x 1 column
    Var scale_rows(Var a, Var col); // per-row scaling by an m x 1 column
    Var mul_mask(Var a, Var gate);  // a .* (gate > 0); no gradient into gate
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var relu(Var a);
    Var relu_mask(Var a);
    Var softplus(Var a);
    Var sigmoid(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var sum(Var a);
    Var row_sum(Var a);
    Var col_sum(Var a);
    Var broadcast_rows(Var a, Eigen::Index rows);
    Var broadcast_cols(Var a, Eigen::Index cols);
    Var broadcast_scalar(Var a, Eigen::Index rows, Eigen::Index cols);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);

    // composites
    Var mean(Var a);
    Var squared_norm(Var a);                  // sum of squares, 1x1
    Var row_squared_norm(Var a);              // m x n -> m x 1
    Var log_softmax(Var a);                   // rowwise
    Var logsumexp_rows(Var a);                // m x n -> m x 1
    Var gather_cols(Var a, const Eigen::VectorXi& idx);  // pick a(i, idx[i]) -> m x 1

private:
    Var emit(Op op, Var a, Var b, Mat value, int aux0 = 0, int aux1 = 0, double scalar = 0.0);
    Var emit(Op op, Var a, Mat value, int aux0 = 0, int aux1 = 0, double scalar = 0.0);
    void backward_into(int id, Var adj, std::vector<int>& adjoints);

    std::vector<Node> nodes_;
};

// Compares the analytic gradient of f at x against central finite
// differences with step h; returns the max over components of
// |analytic - numeric| / max(1, |numeric|).
using ScalarFn = std::function<Var(Graph&, Var)>;
double finite_diff_check(const ScalarFn& f, const Mat& x, double h);

[[noreturn]] void shape_error(const std::string& op, const Mat& a, const Mat& b);

}  // namespace dlsm::ad
