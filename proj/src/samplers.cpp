// SPDX-License-Identifier: Apache-2.0
#include "dlsm/samplers.hpp"

#include <cmath>
#include <stdexcept>

namespace dlsm {

std::string to_string(GuidanceMethod m) {
    switch (m) {
        case GuidanceMethod::Base: return "base";
        case GuidanceMethod::Scaling: return "scaling";
        case GuidanceMethod::PosteriorSM: return "posterior-sm";
        case GuidanceMethod::Ours: return "ours";
        case GuidanceMethod::Oracle: return "oracle";
    }
    return "unknown";
}

GuidanceMethod guidance_method_from_string(const std::string& name) {
    if (name == "base") return GuidanceMethod::Base;
    if (name == "scaling") return GuidanceMethod::Scaling;
    if (name == "posterior-sm") return GuidanceMethod::PosteriorSM;
    if (name == "ours") return GuidanceMethod::Ours;
    if (name == "oracle") return GuidanceMethod::Oracle;
    throw std::invalid_argument("unknown guidance method: " + name);
}

Eigen::MatrixXd conditional_score(const GuidanceConfig& guidance, const GuidanceModels& models,
                                  const Eigen::MatrixXd& x_tilde, double sigma, int cls) {
    if (!(guidance.alpha > 0.0)) throw std::invalid_argument("guidance alpha must be > 0");
    switch (guidance.method) {
        case GuidanceMethod::Base:
        case GuidanceMethod::Scaling:
        case GuidanceMethod::Ours: {
            if (!models.score || !models.classifier)
                throw std::invalid_argument("guidance requires a score model and a classifier");
            const Eigen::VectorXi classes =
                Eigen::VectorXi::Constant(x_tilde.rows(), cls);
            const Eigen::VectorXd sigmas =
                Eigen::VectorXd::Constant(x_tilde.rows(), sigma);
            Eigen::MatrixXd grad =
                classifier_input_grad(*models.classifier, x_tilde, classes, sigmas);
            const double a = guidance.method == GuidanceMethod::Scaling ? guidance.alpha : 1.0;
            return a * grad + score_eval(*models.score, x_tilde, sigma);
        }
        case GuidanceMethod::PosteriorSM: {
            if (!models.class_scores ||
                cls >= static_cast<int>(models.class_scores->size()) || cls < 0)
                throw std::invalid_argument("posterior-sm guidance: no score model for class " +
                                            std::to_string(cls));
            return score_eval((*models.class_scores)[cls], x_tilde, sigma);
        }
        case GuidanceMethod::Oracle: {
            if (!models.oracle)
                throw std::invalid_argument("oracle guidance requires a ParzenOracle");
            return models.oracle->with_sigma(sigma).posterior_score_batch(x_tilde, cls);
        }
    }
    throw std::logic_error("unreachable guidance method");
}

ScoreFn conditional_score_fn(const GuidanceConfig& guidance, const GuidanceModels& models,
                             int cls) {
    return [guidance, models, cls](const Eigen::MatrixXd& x, double sigma) {
        return conditional_score(guidance, models, x, sigma, cls);
    };
}

Eigen::MatrixXd langevin_chain(
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& score,
    const Eigen::MatrixXd& x0, double epsilon, int steps, Rng& rng,
    std::vector<Eigen::MatrixXd>* trajectory) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("langevin_chain: epsilon must be > 0");
    Eigen::MatrixXd x = x0;
    for (int t = 0; t < steps; ++t) {
        Eigen::MatrixXd z = rng.normal_matrix(x.rows(), x.cols());
        x += 0.5 * epsilon * epsilon * score(x) + epsilon * z;
        if (!x.allFinite())
            throw std::runtime_error("langevin_chain: non-finite state at step " +
                                     std::to_string(t));
        if (trajectory) trajectory->push_back(x);
    }
    return x;
}

Eigen::MatrixXd pc_sample(const SamplerConfig& cfg, const ScoreFn& score, int dim) {
    if (cfg.schedule.T < 1) throw std::invalid_argument("pc_sample: T must be >= 1");
    if (!(cfg.corrector_snr > 0.0))
        throw std::invalid_argument("pc_sample: corrector_snr must be > 0");
    if (cfg.n_samples < 1) throw std::invalid_argument("pc_sample: n_samples must be >= 1");

    Rng rng(cfg.seed);
    const int n = cfg.n_samples;
    Eigen::MatrixXd x = cfg.schedule.sigma_max * rng.normal_matrix(n, dim);

    for (int t = cfg.schedule.T - 1; t >= 0; --t) {
        const double s_hi = cfg.schedule.sigma_at(t + 1);
        const double s_lo = cfg.schedule.sigma_at(t);
        const double beta = s_hi * s_hi - s_lo * s_lo;

        Eigen::MatrixXd z = rng.normal_matrix(n, dim);
        x += beta * score(x, s_hi) + std::sqrt(beta) * z;

        for (int c = 0; c < cfg.corrector_steps_per_t; ++c) {
            Eigen::MatrixXd s = score(x, s_lo);
            z = rng.normal_matrix(n, dim);
            for (int i = 0; i < n; ++i) {
                const double s_norm = s.row(i).norm();
                if (s_norm == 0.0) continue;  // no drift direction
                const double ratio = cfg.corrector_snr * z.row(i).norm() / s_norm;
                const double eps = 2.0 * ratio * ratio;
                x.row(i) += eps * s.row(i) + std::sqrt(2.0 * eps) * z.row(i);
            }
        }
        if (!x.allFinite())
            throw std::runtime_error("pc_sample: non-finite state at t=" + std::to_string(t));
    }
    return x;
}

LabeledDataset pc_sample_classes(const SamplerConfig& cfg, const GuidanceConfig& guidance,
                                 const GuidanceModels& models,
                                 const std::vector<int>& counts_per_class, int dim) {
    int total = 0;
    for (int c : counts_per_class) {
        if (c < 0) throw std::invalid_argument("per-class sample count must be >= 0");
        total += c;
    }
    LabeledDataset out;
    out.points.resize(total, dim);
    out.labels.resize(total);
    out.class_count = static_cast<int>(counts_per_class.size());

    int row = 0;
    for (int cls = 0; cls < out.class_count; ++cls) {
        if (counts_per_class[cls] == 0) continue;
        SamplerConfig per = cfg;
        per.seed = cfg.seed + static_cast<std::uint64_t>(cls);
        per.n_samples = counts_per_class[cls];
        Eigen::MatrixXd pts = pc_sample(per, conditional_score_fn(guidance, models, cls), dim);
        out.points.middleRows(row, pts.rows()) = pts;
        out.labels.segment(row, pts.rows()).setConstant(cls);
        row += static_cast<int>(pts.rows());
    }
    return out;
}

}  // namespace dlsm
