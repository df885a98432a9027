// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "dlsm/autodiff.hpp"

namespace dlsm {

enum class ModelKind { Score, Classifier };

struct MlpSpec {
    ModelKind kind = ModelKind::Score;
    int input_dim = 2;                   // data dimension d; ln(sigma) is appended internally
    std::vector<int> hidden{128, 64, 32};
    int output_dim = 2;                  // d for score model, class count for classifier
    std::uint64_t seed = 0;
};

struct TrainingMeta {
    std::uint64_t iterations = 0;
    std::string loss_kind;
};

// Per-layer weights/biases of a relu MLP conditioned on ln(sigma) via an
// extra input coordinate.
struct ModelParams {
    MlpSpec spec;
    std::vector<Eigen::MatrixXd> weights;  // fan_in x fan_out
    std::vector<Eigen::MatrixXd> biases;   // 1 x fan_out
    TrainingMeta meta;

    std::size_t layer_count() const { return weights.size(); }
};

// He-uniform weights scaled by fan-in, zero biases; deterministic in seed.
ModelParams init_model(const MlpSpec& spec);

// --- graph builders (training / differentiable paths) ---

// Registers parameters on the graph; trainable ones become Input leaves.
std::vector<ad::Var> param_vars(ad::Graph& g, const ModelParams& params, bool trainable);

// Raw MLP output for inputs already carrying the ln(sigma) column.
// `vars` is the flat [W0, b0, W1, b1, ...] list from param_vars.
ad::Var mlp_forward_node(ad::Graph& g, const std::vector<ad::Var>& vars, ad::Var batch_in);

// Appends a per-sample ln(sigma) column to an x batch node.
ad::Var with_sigma_column(ad::Graph& g, ad::Var x, const Eigen::VectorXd& sigmas);

// --- plain Eigen evaluation (sampling / metrics; no graph) ---

// Score model: s(x; phi, sigma), one sample per row, per-row sigma. The MLP
// output is interpreted as sigma * s (a noise prediction, O(1) at every noise
// level) and divided by sigma here.
Eigen::MatrixXd score_eval(const ModelParams& params, const Eigen::MatrixXd& x,
                           const Eigen::VectorXd& sigmas);
Eigen::MatrixXd score_eval(const ModelParams& params, const Eigen::MatrixXd& x, double sigma);

// Classifier: rowwise log p(y | x; theta, sigma).
Eigen::MatrixXd classifier_log_prob(const ModelParams& params, const Eigen::MatrixXd& x,
                                    const Eigen::VectorXd& sigmas);
Eigen::MatrixXd classifier_log_prob(const ModelParams& params, const Eigen::MatrixXd& x,
                                    double sigma);

// Gradient of the selected class log-probability w.r.t. x only (the sigma
// coordinate is dropped). Manual backprop; checked against the graph route
// in tests.
Eigen::MatrixXd classifier_input_grad(const ModelParams& params, const Eigen::MatrixXd& x,
                                      const Eigen::VectorXi& classes,
                                      const Eigen::VectorXd& sigmas);
Eigen::MatrixXd classifier_input_grad(const ModelParams& params, const Eigen::MatrixXd& x,
                                      int cls, double sigma);

// Graph route for the classifier input gradient: returns d/dx of the summed
// selected-class log-probabilities, as a B x d node re-differentiable w.r.t.
// the classifier parameters in `vars`.
ad::Var classifier_input_grad_node(ad::Graph& g, const std::vector<ad::Var>& vars,
                                   const Eigen::MatrixXd& x, const Eigen::VectorXi& classes,
                                   const Eigen::VectorXd& sigmas);

// Versioned binary checkpoint: magic "DLSM", u32 format version, length-
// prefixed JSON spec, little-endian float64 blocks in layer order.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);
ModelParams load_checkpoint(const std::string& path, ModelKind expected);

}  // namespace dlsm
