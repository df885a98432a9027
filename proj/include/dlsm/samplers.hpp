// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "dlsm/dataset.hpp"
#include "dlsm/losses.hpp"
#include "dlsm/models.hpp"
#include "dlsm/oracle.hpp"
#include "dlsm/rng.hpp"

namespace dlsm {

// Batched noise-conditional score: rows of x share one sigma.
using ScoreFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, double sigma)>;

enum class GuidanceMethod { Base, Scaling, PosteriorSM, Ours, Oracle };
std::string to_string(GuidanceMethod m);
GuidanceMethod guidance_method_from_string(const std::string& name);

struct GuidanceConfig {
    GuidanceMethod method = GuidanceMethod::Base;
    double alpha = 10.0;  // Scaling only
    int class_label = 0;
};

// Whatever the chosen guidance method needs; unused members may stay null.
struct GuidanceModels {
    const ModelParams* score = nullptr;             // unconditional s(x; phi)
    const ModelParams* classifier = nullptr;        // Base / Scaling / Ours
    const std::vector<ModelParams>* class_scores = nullptr;  // PosteriorSM
    const ParzenOracle* oracle = nullptr;
};

// Composed conditional score S_P for one class at one noise level.
Eigen::MatrixXd conditional_score(const GuidanceConfig& guidance, const GuidanceModels& models,
                                  const Eigen::MatrixXd& x_tilde, double sigma, int cls);

// Binds guidance + models + class into a ScoreFn for the samplers.
ScoreFn conditional_score_fn(const GuidanceConfig& guidance, const GuidanceModels& models,
                             int cls);

// Plain Langevin diffusion x_t = x_{t-1} + (eps^2/2) score(x_{t-1}) + eps z.
// `score` here is sigma-free (a fixed target density). Returns the final
// batch; if `trajectory` is non-null every intermediate state is appended.
Eigen::MatrixXd langevin_chain(const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& score,
                               const Eigen::MatrixXd& x0, double epsilon, int steps, Rng& rng,
                               std::vector<Eigen::MatrixXd>* trajectory = nullptr);

struct SamplerConfig {
    NoiseSchedule schedule;
    double corrector_snr = 0.16;  // r in eps_t = 2 (r ||z|| / ||s||)^2
    int corrector_steps_per_t = 1;
    std::uint64_t seed = 0;
    int n_samples = 1000;
};

// Predictor-corrector sampler for the variance-exploding SDE over the
// geometric schedule. Anneals from N(0, sigma_max^2 I) down to sigma_min.
Eigen::MatrixXd pc_sample(const SamplerConfig& cfg, const ScoreFn& score, int dim);

// Runs pc_sample once per class and stacks the results into a labeled set;
// class c uses RNG stream cfg.seed + c.
LabeledDataset pc_sample_classes(const SamplerConfig& cfg, const GuidanceConfig& guidance,
                                 const GuidanceModels& models,
                                 const std::vector<int>& counts_per_class, int dim);

}  // namespace dlsm
