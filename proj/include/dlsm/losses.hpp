// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "dlsm/autodiff.hpp"
#include "dlsm/dataset.hpp"
#include "dlsm/models.hpp"
#include "dlsm/oracle.hpp"
#include "dlsm/rng.hpp"

namespace dlsm {

// Geometric noise schedule sigma_t = sigma_min (sigma_max/sigma_min)^{t/T}.
struct NoiseSchedule {
    double sigma_min = 0.01;
    double sigma_max = 10.0;  // 50 for image-scale runs
    int T = 1000;

    double sigma_at(double t) const;
};

// Per-sigma weighting of the sigma-averaged losses plus the Total-loss
// balancing coefficient.
struct LossWeights {
    std::function<double(double sigma)> lambda_dsm;
    std::function<double(double sigma)> lambda_dlsm;
    std::function<double(double sigma)> lambda_ce;
    double lambda_balance = 0.125;

    static LossWeights toy_defaults();
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    int iterations = 40000;
    int batch_size = 4000;
    double learning_rate = 6.5e-4;  // 2.0e-5 for the classifier
    // > 0: decay the step size geometrically from learning_rate down to this
    // value over the run; 0 keeps it constant.
    double final_learning_rate = 0.0;
    AdamConfig adam;
    std::uint64_t seed = 0;
};

enum class ClassifierLoss { CE, DlsmPrime, Total };
std::string to_string(ClassifierLoss kind);

// x_tilde = x + sigma z; target = (x - x_tilde)/sigma^2 = -z/sigma.
struct PerturbedBatch {
    Eigen::MatrixXd x;        // clean points
    Eigen::MatrixXd x_tilde;
    Eigen::MatrixXd target;
    Eigen::VectorXd sigmas;
    Eigen::VectorXi labels;
};

void perturb(const Eigen::VectorXd& x, double sigma, Rng& rng, Eigen::VectorXd& x_tilde,
             Eigen::VectorXd& target);

// Draws a batch with replacement, samples t ~ U[0, T] per sample, perturbs.
PerturbedBatch sample_training_batch(const LabeledDataset& data, const NoiseSchedule& schedule,
                                     int batch_size, Rng& rng);

// ---- graph builders (differentiable; used by trainers and tests) ----

// sigma-averaged DSM: mean_i lambda_dsm(sigma_i) ||s(x_i~) - target_i||^2
ad::Var dsm_loss_node(ad::Graph& g, const std::vector<ad::Var>& score_vars,
                      const PerturbedBatch& batch, const LossWeights& weights);

// sigma-averaged CE: mean_i lambda_ce(sigma_i) (-log p(y_i | x_i~))
ad::Var ce_loss_node(ad::Graph& g, const std::vector<ad::Var>& clf_vars,
                     const PerturbedBatch& batch, const LossWeights& weights);

// sigma-averaged DLSM': mean_i lambda_dlsm(sigma_i)
//   ||grad_x log p(y_i|x_i~) + s_frozen(x_i~) - target_i||^2
ad::Var dlsm_prime_loss_node(ad::Graph& g, const std::vector<ad::Var>& clf_vars,
                             const ModelParams& frozen_score, const PerturbedBatch& batch,
                             const LossWeights& weights);

// Generic posterior-matching residual with explicit prior scores and targets
// (constants): mean_i c ||grad_x log p(y_i|x_i~) + prior_i - target_i||^2.
// With target = (x - x~)/sigma^2 and the 1/2 factor this is the DLSM loss in
// oracle form; with target = oracle posterior score it is its Rao-
// Blackwellized variant.
ad::Var posterior_matching_loss_node(ad::Graph& g, const std::vector<ad::Var>& clf_vars,
                                     const Eigen::MatrixXd& x_tilde,
                                     const Eigen::VectorXd& sigmas,
                                     const Eigen::VectorXi& labels,
                                     const Eigen::MatrixXd& prior_scores,
                                     const Eigen::MatrixXd& targets, double coeff = 0.5);

// ELSM: mean_i c ||grad_x log p(y_i|x_i~) - likelihood_i||^2
ad::Var elsm_loss_node(ad::Graph& g, const std::vector<ad::Var>& clf_vars,
                       const Eigen::MatrixXd& x_tilde, const Eigen::VectorXd& sigmas,
                       const Eigen::VectorXi& labels, const Eigen::MatrixXd& likelihood_scores,
                       double coeff = 0.5);

// ---- scalar conveniences matching the per-operation contracts ----

double dsm_loss(const ModelParams& score, const LabeledDataset& data,
                const NoiseSchedule& schedule, const LossWeights& weights, int batch_size,
                Rng& rng);
double esm_loss(const ModelParams& score, const ParzenOracle& oracle,
                const Eigen::MatrixXd& x_tilde, double sigma);
double ce_loss(const ModelParams& classifier, const PerturbedBatch& batch,
               const LossWeights& weights);
double dlsm_prime_loss(const ModelParams& classifier, const ModelParams& frozen_score,
                       const PerturbedBatch& batch, const LossWeights& weights);
double dlsm_loss_oracle(const ModelParams& classifier, const ParzenOracle& oracle,
                        const PerturbedBatch& batch, const LossWeights& weights);
double elsm_loss(const ModelParams& classifier, const ParzenOracle& oracle,
                 const Eigen::MatrixXd& x_tilde, const Eigen::VectorXi& labels, double sigma);
double total_loss(const ModelParams& classifier, const ModelParams& frozen_score,
                  const PerturbedBatch& batch, const LossWeights& weights);

// ---- training drivers (Fig-3 two-stage procedure) ----

struct TraceRow {
    int iter = 0;
    double loss = 0.0;
    double ce_component = 0.0;
    double dlsm_component = 0.0;
};

using TrainCallback = std::function<void(int iter, const ModelParams&)>;

struct TrainResult {
    ModelParams params;
    std::vector<TraceRow> trace;
};

TrainResult train_score_model(const LabeledDataset& data, const NoiseSchedule& schedule,
                              const TrainConfig& cfg, const LossWeights& weights,
                              const TrainCallback& callback = nullptr);

TrainResult train_classifier(const LabeledDataset& data, const ModelParams& frozen_score,
                             const NoiseSchedule& schedule, const TrainConfig& cfg,
                             ClassifierLoss kind, const LossWeights& weights,
                             const TrainCallback& callback = nullptr);

void save_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

}  // namespace dlsm
