// SPDX-License-Identifier: Apache-2.0
#include "dlsm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dlsm/rng.hpp"

namespace dlsm {

namespace {

// integer n with n^d == count, or 0 if none exists
int lattice_side(int count, int d) {
    int n = static_cast<int>(std::round(std::pow(static_cast<double>(count), 1.0 / d)));
    for (int cand = std::max(1, n - 1); cand <= n + 1; ++cand) {
        long long p = 1;
        for (int i = 0; i < d; ++i) p *= cand;
        if (p == count) return cand;
    }
    return 0;
}

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd d2 = -2.0 * a * b.transpose();
    d2.colwise() += a.rowwise().squaredNorm();
    d2.rowwise() += b.rowwise().squaredNorm().transpose();
    return d2.cwiseMax(0.0).cwiseSqrt();
}

// distance from each point to its k-th nearest neighbor within the same set
Eigen::VectorXd knn_radii(const Eigen::MatrixXd& points, int k) {
    const Eigen::Index n = points.rows();
    Eigen::MatrixXd d = pairwise_distances(points, points);
    Eigen::VectorXd radii(n);
    std::vector<double> row(static_cast<std::size_t>(n) - 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) row[m++] = d(i, j);
        std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
        radii[i] = row[static_cast<std::size_t>(k) - 1];
    }
    return radii;
}

bool all_rows_equal(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 1; i < m.rows(); ++i)
        if (m.row(i) != m.row(0)) return false;
    return true;
}

double ci95_half_width(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= (n - 1.0);
    return 1.96 * std::sqrt(var / n);
}

}  // namespace

Eigen::MatrixXd uniform_grid(const GridConfig& cfg) {
    const int d = static_cast<int>(cfg.lo.size());
    if (d < 1 || cfg.hi.size() != d) throw std::invalid_argument("uniform_grid: bad bounds");
    for (int i = 0; i < d; ++i)
        if (!(cfg.lo[i] < cfg.hi[i]))
            throw std::invalid_argument("uniform_grid: lo must be < hi in every dimension");
    if (cfg.count < 1) throw std::invalid_argument("uniform_grid: count must be >= 1");

    Eigen::MatrixXd grid(cfg.count, d);
    if (!cfg.regular) {
        Rng rng(cfg.seed);
        for (int i = 0; i < cfg.count; ++i)
            for (int j = 0; j < d; ++j) grid(i, j) = rng.uniform(cfg.lo[j], cfg.hi[j]);
        return grid;
    }

    const int side = lattice_side(cfg.count, d);
    if (side == 0)
        throw std::invalid_argument("uniform_grid: count is not a perfect d-th power");
    for (int i = 0; i < cfg.count; ++i) {
        int rem = i;
        for (int j = d - 1; j >= 0; --j) {
            const int idx = rem % side;
            rem /= side;
            grid(i, j) = side == 1 ? cfg.lo[j]
                                   : cfg.lo[j] + (cfg.hi[j] - cfg.lo[j]) * idx / (side - 1);
        }
    }
    return grid;
}

double score_error_expectation(const FieldFn& estimated, const FieldFn& oracle,
                               const Eigen::MatrixXd& grid) {
    Eigen::MatrixXd diff = estimated(grid) - oracle(grid);
    return diff.rowwise().norm().mean();
}

void save_field_csv(const ScoreField& field, const std::string& path) {
    if (field.grid_points.rows() != field.vectors.rows() ||
        field.grid_points.cols() != field.vectors.cols())
        throw std::invalid_argument("save_field_csv: grid/vector shape mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_field_csv: cannot open " + path);
    f << "x0,x1,v0,v1,sigma,class,kind\n";
    f.precision(17);
    for (Eigen::Index i = 0; i < field.grid_points.rows(); ++i) {
        f << field.grid_points(i, 0) << "," << field.grid_points(i, 1) << ","
          << field.vectors(i, 0) << "," << field.vectors(i, 1) << "," << field.sigma << ",";
        if (field.label) f << *field.label;
        f << "," << field.kind << "\n";
    }
}

Prdc prdc(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated, int k) {
    if (k < 1) throw std::invalid_argument("prdc: k must be >= 1");
    if (real.rows() <= k || generated.rows() <= k)
        throw std::invalid_argument("prdc: need more than k points in each set");
    if (real.cols() != generated.cols())
        throw std::invalid_argument("prdc: dimension mismatch");
    if (all_rows_equal(real) || all_rows_equal(generated))
        throw std::invalid_argument("prdc: degenerate point set (all points identical)");

    Eigen::VectorXd real_r = knn_radii(real, k);
    Eigen::VectorXd gen_r = knn_radii(generated, k);
    Eigen::MatrixXd cross = pairwise_distances(generated, real);  // |G| x |R|

    const Eigen::Index ng = generated.rows(), nr = real.rows();
    long long prec_hits = 0, density_hits = 0, recall_hits = 0, cover_hits = 0;
    for (Eigen::Index g = 0; g < ng; ++g) {
        bool in_real_manifold = false;
        for (Eigen::Index r = 0; r < nr; ++r) {
            if (cross(g, r) <= real_r[r]) {
                in_real_manifold = true;
                ++density_hits;
            }
        }
        if (in_real_manifold) ++prec_hits;
    }
    for (Eigen::Index r = 0; r < nr; ++r) {
        bool in_gen_manifold = false, covered = false;
        for (Eigen::Index g = 0; g < ng; ++g) {
            if (cross(g, r) <= gen_r[g]) in_gen_manifold = true;
            if (cross(g, r) <= real_r[r]) covered = true;
        }
        if (in_gen_manifold) ++recall_hits;
        if (covered) ++cover_hits;
    }

    Prdc out;
    out.precision = static_cast<double>(prec_hits) / static_cast<double>(ng);
    out.recall = static_cast<double>(recall_hits) / static_cast<double>(nr);
    out.density = static_cast<double>(density_hits) / (static_cast<double>(k) * ng);
    out.coverage = static_cast<double>(cover_hits) / static_cast<double>(nr);
    return out;
}

AblationSeries ablation_trace(const LabeledDataset& data, const ModelParams& frozen_score,
                              const NoiseSchedule& schedule, const ParzenOracle& oracle,
                              const AblationConfig& cfg) {
    if (cfg.eval_every < 1) throw std::invalid_argument("ablation_trace: eval_every >= 1");
    if (cfg.n_seeds < 1) throw std::invalid_argument("ablation_trace: n_seeds >= 1");

    const ParzenOracle at_sigma = oracle.with_sigma(cfg.sigma_eval);
    std::vector<Eigen::MatrixXd> oracle_lik(data.class_count);
    for (int c = 0; c < data.class_count; ++c)
        oracle_lik[c] = at_sigma.likelihood_score_batch(cfg.grid, c);

    // one fixed perturbed evaluation set shared by all seeds and checkpoints
    Rng eval_rng(cfg.train.seed ^ 0x9e3779b97f4a7c15ull);
    PerturbedBatch eval_set =
        sample_training_batch(data, schedule, cfg.ce_eval_size, eval_rng);
    LossWeights plain = cfg.weights;
    plain.lambda_ce = [](double) { return 1.0; };  // report unweighted CE

    AblationSeries out;
    const Eigen::VectorXd sig_col =
        Eigen::VectorXd::Constant(cfg.grid.rows(), cfg.sigma_eval);

    auto record = [&](std::vector<double>& errs, std::vector<double>& ces,
                      const ModelParams& params) {
        double err = 0.0;
        for (int c = 0; c < data.class_count; ++c) {
            const Eigen::VectorXi cls = Eigen::VectorXi::Constant(cfg.grid.rows(), c);
            Eigen::MatrixXd est = classifier_input_grad(params, cfg.grid, cls, sig_col);
            err += (est - oracle_lik[c]).rowwise().norm().mean();
        }
        errs.push_back(err / data.class_count);
        ces.push_back(ce_loss(params, eval_set, plain));
    };

    for (int s = 0; s < cfg.n_seeds; ++s) {
        TrainConfig tc = cfg.train;
        tc.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
        std::vector<double> errs, ces;
        std::vector<int> iters;
        auto cb = [&](int iter, const ModelParams& params) {
            if (iter % cfg.eval_every != 0) return;
            iters.push_back(iter);
            record(errs, ces, params);
        };
        train_classifier(data, frozen_score, schedule, tc, cfg.kind, cfg.weights, cb);
        if (s == 0) out.iters = iters;
        out.score_error.push_back(std::move(errs));
        out.cross_entropy.push_back(std::move(ces));
    }

    const std::size_t points = out.iters.size();
    for (std::size_t p = 0; p < points; ++p) {
        std::vector<double> errs, ces;
        for (int s = 0; s < cfg.n_seeds; ++s) {
            errs.push_back(out.score_error[s][p]);
            ces.push_back(out.cross_entropy[s][p]);
        }
        double e_mean = 0.0, c_mean = 0.0;
        for (double v : errs) e_mean += v;
        for (double v : ces) c_mean += v;
        out.score_error_mean.push_back(e_mean / cfg.n_seeds);
        out.ce_mean.push_back(c_mean / cfg.n_seeds);
        out.score_error_ci.push_back(ci95_half_width(errs));
        out.ce_ci.push_back(ci95_half_width(ces));
    }
    return out;
}

void save_ablation_csv(const AblationSeries& series, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_ablation_csv: cannot open " + path);
    f << "iter,score_error_mean,score_error_ci95,ce_mean,ce_ci95\n";
    f.precision(12);
    for (std::size_t i = 0; i < series.iters.size(); ++i)
        f << series.iters[i] << "," << series.score_error_mean[i] << ","
          << series.score_error_ci[i] << "," << series.ce_mean[i] << ","
          << series.ce_ci[i] << "\n";
}

}  // namespace dlsm
