// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dlsm/dataset.hpp"
#include "dlsm/losses.hpp"
#include "dlsm/models.hpp"
#include "dlsm/oracle.hpp"

namespace dlsm {

struct GridConfig {
    Eigen::VectorXd lo;       // per-dim lower bounds
    Eigen::VectorXd hi;       // per-dim upper bounds
    int count = 1225;         // total points; perfect d-th power in regular mode
    bool regular = true;      // lattice vs seeded uniform draws
    std::uint64_t seed = 0;
};

Eigen::MatrixXd uniform_grid(const GridConfig& cfg);

// Maps a batch of query points to one vector per row.
using FieldFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

// mean_x ||estimated(x) - oracle(x)|| over the grid rows (Euclidean norm).
double score_error_expectation(const FieldFn& estimated, const FieldFn& oracle,
                               const Eigen::MatrixXd& grid);

struct ScoreField {
    Eigen::MatrixXd grid_points;  // G x d
    Eigen::MatrixXd vectors;      // G x d
    double sigma = 0.0;
    std::optional<int> label;
    std::string kind;             // "posterior" | "likelihood" | "prior"
};

void save_field_csv(const ScoreField& field, const std::string& path);

struct Prdc {
    double precision = 0.0;
    double recall = 0.0;
    double density = 0.0;
    double coverage = 0.0;
};

// k-NN manifold precision/recall/density/coverage; exact O(n^2) distances,
// ties at the k-th neighbor radius count as inside.
Prdc prdc(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated, int k = 3);

struct MetricsReport {
    std::vector<double> exp_dp;  // per class
    std::vector<double> exp_dl;  // per class
    Prdc sample_quality;
    int k = 3;
};

// ---- classifier-training ablation (score error + CE over iterations) ----

struct AblationConfig {
    TrainConfig train;               // seed is the base; seed+s per repeat
    ClassifierLoss kind = ClassifierLoss::Total;
    LossWeights weights;
    int eval_every = 1000;
    int n_seeds = 5;
    double sigma_eval = 5.0;         // noise level of the evaluated fields
    Eigen::MatrixXd grid;
    int ce_eval_size = 2000;         // fixed perturbed set for the CE trace
};

struct AblationSeries {
    std::vector<int> iters;
    // [seed][checkpoint]
    std::vector<std::vector<double>> score_error;
    std::vector<std::vector<double>> cross_entropy;
    // across-seed mean and 95% CI half-width, per checkpoint
    std::vector<double> score_error_mean, score_error_ci;
    std::vector<double> ce_mean, ce_ci;
};

// Trains n_seeds classifiers with the given loss; at every eval_every
// iterations (plus iteration 0) records the class-averaged likelihood-score
// error on the grid and the cross entropy on a fixed perturbed set.
AblationSeries ablation_trace(const LabeledDataset& data, const ModelParams& frozen_score,
                              const NoiseSchedule& schedule, const ParzenOracle& oracle,
                              const AblationConfig& cfg);

void save_ablation_csv(const AblationSeries& series, const std::string& path);

}  // namespace dlsm
