// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <string>

namespace dlsm {

// N labeled points in R^d; the empirical distribution the Parzen oracle and
// all training is built on.
struct LabeledDataset {
    Eigen::MatrixXd points;   // N x d
    Eigen::VectorXi labels;   // N, values in [0, class_count)
    int class_count = 1;

    Eigen::Index size() const { return points.rows(); }
    Eigen::Index dim() const { return points.cols(); }
};

struct MoonConfig {
    int samples_per_class = 2000;
    double noise_std = 0.05;    // jitter applied before centering/scaling
    double scale_factor = 20.0;
    bool center = true;
    std::uint64_t seed = 0;
};

// Two interleaving crescents: upper (cos x, sin x) labeled 0, lower
// (1 - cos x, 0.5 - sin x) labeled 1, x uniform on [0, pi]; Gaussian jitter,
// then mean-centering, then coordinate scaling.
LabeledDataset generate_moons(const MoonConfig& cfg);

LabeledDataset subset_by_class(const LabeledDataset& data, int cls);

// CSV format: header "x0,...,x{d-1},label", 17-significant-digit decimals.
void save_csv(const LabeledDataset& data, const std::string& path);
LabeledDataset load_csv(const std::string& path);

}  // namespace dlsm
