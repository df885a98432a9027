// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance gate. Runs ten numbered criteria and prints exactly
// one PASS/FAIL line per criterion; exits nonzero if any fail.
//
// Criteria 1-5 are property suites with machine-precision or statistical
// bounds. Criteria 6-10 reproduce the two-moons experiment. The training
// profile is selected with the DLSM_PROFILE environment variable:
//   ci    (default) 10k iterations, batch 128 — ordering criteria
//   paper 40k iterations, batch 4000 — point-value reproduction
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "dlsm/autodiff.hpp"
#include "dlsm/dataset.hpp"
#include "dlsm/losses.hpp"
#include "dlsm/metrics.hpp"
#include "dlsm/models.hpp"
#include "dlsm/oracle.hpp"
#include "dlsm/rng.hpp"
#include "dlsm/samplers.hpp"

namespace {

using dlsm::ad::Graph;
using dlsm::ad::Var;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------- profiles

struct Profile {
    const char* name;
    int score_iters, clf_iters, batch;
    double score_lr, clf_lr;
    int n_seeds;
    int gen_per_class;        // generated samples per class, trained methods
    int oracle_gen_per_class; // generated samples per class, oracle sampling
    int corrector_steps;
};

// CI: the classifier learning rate is raised to compensate for the ~125x
// smaller sample budget (10k x 128 vs the paper's 40k x 4000); orderings are
// preserved. The paper profile keeps the published hyperparameters.
constexpr Profile kCi{"ci", 10000, 10000, 128, 6.5e-4, 2.0e-4, 5, 10000, 5000, 2};
constexpr Profile kPaper{"paper", 40000, 40000, 4000, 6.5e-4, 2.0e-5, 5, 10000, 10000, 2};

// sigma at which Table-1 score fields are compared (see README: the scaling
// row pins it, (alpha-1)*||likelihood score|| ~ 2.7 only near sigma = 5)
constexpr double kSigmaEval = 5.0;
constexpr int kGridCount = 1225;

// tolerances, pinned
constexpr double kFdFirst = 1e-5;    // first-order finite differences
constexpr double kFdSecond = 1e-4;   // gradient-of-gradient path
constexpr double kParzenTol = 1e-8;  // closed form vs autodiff
constexpr double kRbTol = 1e-9;      // Rao-Blackwellized gradient equality
constexpr double kRenormTol = 1e-9;  // alpha=1 identity

dlsm::LossWeights experiment_weights() {
    dlsm::LossWeights w = dlsm::LossWeights::toy_defaults();
    return w;
}

dlsm::GridConfig table_grid() {
    dlsm::GridConfig g;
    g.lo = Eigen::Vector2d(-25.0, -40.0);
    g.hi = Eigen::Vector2d(25.0, 40.0);
    g.count = kGridCount;
    return g;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// ---------------------------------------------------------- criterion 1

bool criterion1_autodiff(std::string& detail) {
    dlsm::Rng rng(101);
    double worst_first = 0.0, worst_second = 0.0;
    const double h = 1e-5;

    auto check = [&](const dlsm::ad::ScalarFn& f, const Mat& at, double& worst) {
        worst = std::max(worst, dlsm::ad::finite_diff_check(f, at, h));
    };
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index r = 2 + static_cast<Eigen::Index>(rng.uniform_int(3));
        const Eigen::Index c = 2 + static_cast<Eigen::Index>(rng.uniform_int(3));
        Mat x = rng.normal_matrix(r, c);
        Mat other = rng.normal_matrix(r, c);
        Mat m = rng.normal_matrix(c, 2);
        Eigen::VectorXi idx(r);
        for (Eigen::Index k = 0; k < r; ++k) idx[k] = static_cast<int>(rng.uniform_int(c));
        // shift values away from zero so relu kinks cannot straddle the FD step
        Mat xr = x.unaryExpr([](double t) { return t + (t >= 0.0 ? 0.2 : -0.2); });

        auto K = [&](auto body) {
            check([&](Graph& g, Var v) { return body(g, v); }, x, worst_first);
        };
        K([&](Graph& g, Var v) { return g.sum(g.add(v, g.constant(other))); });
        K([&](Graph& g, Var v) { return g.sum(g.sub(g.constant(other), v)); });
        K([&](Graph& g, Var v) { return g.sum(g.neg(v)); });
        K([&](Graph& g, Var v) { return g.sum(g.mul(v, g.constant(other))); });
        K([&](Graph& g, Var v) { return g.sum(g.div(g.constant(other), g.add_scalar(g.mul(v, v), 1.0))); });
        K([&](Graph& g, Var v) { return g.sum(g.matmul(v, g.constant(m))); });
        K([&](Graph& g, Var v) { return g.squared_norm(g.matmul_nt(v, g.constant(Mat(m.transpose())))); });
        K([&](Graph& g, Var v) { return g.squared_norm(g.matmul_tn(v, g.constant(x))); });
        K([&](Graph& g, Var v) { return g.sum(g.transpose(v)); });
        K([&](Graph& g, Var v) { return g.sum(g.scale(v, 2.5)); });
        K([&](Graph& g, Var v) { return g.sum(g.add_scalar(v, 0.7)); });
        K([&](Graph& g, Var v) { return g.sum(g.softplus(v)); });
        K([&](Graph& g, Var v) { return g.sum(g.sigmoid(v)); });
        K([&](Graph& g, Var v) { return g.sum(g.exp(g.scale(v, 0.3))); });
        K([&](Graph& g, Var v) { return g.mean(v); });
        K([&](Graph& g, Var v) { return g.sum(g.mul(g.row_sum(v), g.row_sum(v))); });
        K([&](Graph& g, Var v) { return g.sum(g.mul(g.col_sum(v), g.col_sum(v))); });
        K([&](Graph& g, Var v) { return g.squared_norm(g.add_rows(v, g.col_sum(v))); });
        K([&](Graph& g, Var v) { return g.squared_norm(g.add_cols(v, g.row_sum(v))); });
        K([&](Graph& g, Var v) { return g.squared_norm(g.scale_rows(v, g.row_sum(v))); });
        K([&](Graph& g, Var v) { return g.squared_norm(g.concat_cols(v, g.mul(v, v))); });
        K([&](Graph& g, Var v) { return g.squared_norm(g.slice_cols(v, 1, c - 1)); });
        K([&](Graph& g, Var v) { return g.sum(g.log_softmax(v)); });
        K([&](Graph& g, Var v) { return g.sum(g.logsumexp_rows(v)); });
        K([&](Graph& g, Var v) { return g.sum(g.gather_cols(v, idx)); });
        K([&](Graph& g, Var v) {
            return g.sum(g.mul(g.broadcast_cols(g.row_sum(v), c), g.broadcast_rows(g.col_sum(v), r)));
        });
        K([&](Graph& g, Var v) { return g.sum(g.broadcast_scalar(g.mean(v), r, c)); });
        // kink-free inputs for relu; masks have constant gates so any gate works
        check([&](Graph& g, Var v) { return g.sum(g.relu(v)); }, xr, worst_first);
        check([&](Graph& g, Var v) { return g.sum(g.mul(g.relu_mask(g.constant(other)), v)); }, x,
              worst_first);
        check([&](Graph& g, Var v) { return g.squared_norm(g.mul_mask(v, g.constant(other))); }, x,
              worst_first);
        check([&](Graph& g, Var v) { return g.sum(g.log(g.add_scalar(g.mul(v, v), 1.0))); }, x,
              worst_first);
    }

    // composite losses on a small model: DSM (first-order) and DLSM'
    // (contains an input-gradient, so parameter gradients are second-order)
    dlsm::LossWeights w = experiment_weights();
    for (int i = 0; i < 100; ++i) {
        dlsm::ModelParams score =
            dlsm::init_model({dlsm::ModelKind::Score, 2, {8, 6}, 2, 500 + static_cast<std::uint64_t>(i)});
        dlsm::ModelParams clf = dlsm::init_model(
            {dlsm::ModelKind::Classifier, 2, {8, 6}, 2, 900 + static_cast<std::uint64_t>(i)});
        dlsm::PerturbedBatch b;
        b.x = 3.0 * rng.normal_matrix(4, 2);
        b.sigmas = Eigen::VectorXd::Constant(4, 0.5 + rng.uniform());
        b.x_tilde = b.x + b.sigmas(0) * rng.normal_matrix(4, 2);
        b.target = (b.x - b.x_tilde) / (b.sigmas(0) * b.sigmas(0));
        b.labels = Eigen::VectorXi::Zero(4);
        b.labels(1) = 1;
        b.labels(3) = 1;

        const std::size_t layer = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(score.layer_count())));
        check(
            [&](Graph& g, Var v) {
                std::vector<Var> vars = dlsm::param_vars(g, score, false);
                vars[2 * layer] = v;
                return dlsm::dsm_loss_node(g, vars, b, w);
            },
            score.weights[layer], worst_first);
        check(
            [&](Graph& g, Var v) {
                std::vector<Var> vars = dlsm::param_vars(g, clf, false);
                vars[2 * layer] = v;
                return dlsm::dlsm_prime_loss_node(g, vars, score, b, w);
            },
            clf.weights[layer], worst_second);
    }

    char buf[128];
    std::snprintf(buf, sizeof buf, "max rel err %.2e first-order, %.2e second-order",
                  worst_first, worst_second);
    detail = buf;
    return worst_first < kFdFirst && worst_second < kFdSecond;
}

// ---------------------------------------------------------- criterion 2

bool criterion2_parzen(std::string& detail) {
    dlsm::LabeledDataset data = dlsm::generate_moons({200, 0.05, 20.0, true, 29});
    dlsm::Rng rng(7);
    double worst = 0.0;
    for (double sigma : {0.01, 0.3, 10.0}) {
        dlsm::ParzenOracle oracle(data, sigma);
        for (int i = 0; i < 1000; ++i) {
            // queries both near and far from the manifold
            Eigen::VectorXd q =
                data.points.row(static_cast<Eigen::Index>(rng.uniform_int(data.size()))).transpose();
            q += (1.0 + 10.0 * rng.uniform()) * Eigen::Vector2d(rng.normal(), rng.normal());
            Eigen::VectorXd closed = oracle.prior_score(q);
            Graph g;
            Var xv = g.input(Mat(q.transpose()));
            Var logp = oracle.prior_log_density_node(g, xv);
            Mat ad_grad = g.grad(logp, {xv})[0].value();
            worst = std::max(worst, (ad_grad.transpose() - closed).cwiseAbs().maxCoeff());
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "max |closed-form - autodiff| = %.2e", worst);
    detail = buf;
    return worst < kParzenTol;
}

// ---------------------------------------------------------- criterion 3

std::vector<Mat> param_grads(Graph& g, std::vector<Var>& vars, Var loss) {
    std::vector<Var> gv = g.grad(loss, vars);
    std::vector<Mat> out;
    out.reserve(gv.size());
    for (Var v : gv) out.push_back(v.value());
    return out;
}

bool criterion3_theorem1(std::string& detail) {
    // ten points, two classes
    dlsm::Rng rng(11);
    dlsm::LabeledDataset data;
    data.points = 5.0 * rng.normal_matrix(10, 2);
    data.labels = Eigen::VectorXi(10);
    for (int i = 0; i < 10; ++i) data.labels[i] = i % 2;
    data.class_count = 2;
    dlsm::ParzenOracle oracle(data, 1.0);
    dlsm::ModelParams clf = dlsm::init_model({dlsm::ModelKind::Classifier, 2, {16, 8}, 2, 77});

    // (i) Rao-Blackwellized denoising target == explicit likelihood target
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const double sigma = std::exp(rng.uniform(std::log(0.1), std::log(5.0)));
        const dlsm::ParzenOracle at = oracle.with_sigma(sigma);
        Mat xt = 8.0 * rng.normal_matrix(1, 2);
        Eigen::VectorXi y(1);
        y << static_cast<int>(rng.uniform_int(2));
        Eigen::VectorXd sig = Eigen::VectorXd::Constant(1, sigma);

        Graph g1;
        std::vector<Var> v1 = dlsm::param_vars(g1, clf, true);
        std::vector<Mat> ga =
            param_grads(g1, v1,
                        dlsm::posterior_matching_loss_node(g1, v1, xt, sig, y,
                                                           at.prior_score_batch(xt),
                                                           at.posterior_score_batch(xt, y[0])));
        Graph g2;
        std::vector<Var> v2 = dlsm::param_vars(g2, clf, true);
        std::vector<Mat> gb = param_grads(
            g2, v2, dlsm::elsm_loss_node(g2, v2, xt, sig, y, at.likelihood_score_batch(xt, y[0])));
        for (std::size_t k = 0; k < ga.size(); ++k)
            worst = std::max(worst, (ga[k] - gb[k]).cwiseAbs().maxCoeff());
    }

    // (ii) Monte-Carlo gradient converges toward the exact one at O(n^{-1/2})
    const double sigma = 2.0;
    const dlsm::ParzenOracle at = oracle.with_sigma(sigma);
    Mat xt = 4.0 * rng.normal_matrix(1, 2);
    const int y = 1;
    Eigen::VectorXi yv(1);
    yv << y;
    Eigen::VectorXd sig1 = Eigen::VectorXd::Constant(1, sigma);

    Graph ge;
    std::vector<Var> ve = dlsm::param_vars(ge, clf, true);
    std::vector<Mat> exact = param_grads(
        ge, ve, dlsm::elsm_loss_node(ge, ve, xt, sig1, yv, at.likelihood_score_batch(xt, y)));

    dlsm::LabeledDataset cls = dlsm::subset_by_class(data, y);
    Eigen::VectorXd logw(cls.size());
    for (Eigen::Index i = 0; i < cls.size(); ++i)
        logw[i] = dlsm::kernel_log_density(xt.row(0).transpose(), cls.points.row(i).transpose(),
                                           sigma);
    Eigen::VectorXd w = (logw.array() - logw.maxCoeff()).exp();
    w /= w.sum();

    // one Monte-Carlo draw: resample x | x_tilde, y and take the gradient of
    // the denoising objective 1/2 || grad log p(y|x~) + prior - (x - x~)/s^2 ||^2
    auto chunk_grad = [&](int n, dlsm::Rng& r) {
        Mat xs(n, 2);
        for (int i = 0; i < n; ++i) {
            double u = r.uniform(), acc = 0.0;
            Eigen::Index pick = cls.size() - 1;
            for (Eigen::Index j = 0; j < cls.size(); ++j) {
                acc += w[j];
                if (u <= acc) { pick = j; break; }
            }
            xs.row(i) = cls.points.row(pick);
        }
        Mat xrep = xt.replicate(n, 1);
        Mat targets = (xs - xrep) / (sigma * sigma);
        Eigen::VectorXi ys = Eigen::VectorXi::Constant(n, y);
        Eigen::VectorXd sn = Eigen::VectorXd::Constant(n, sigma);
        Graph g;
        std::vector<Var> vs = dlsm::param_vars(g, clf, true);
        return param_grads(
            g, vs, dlsm::posterior_matching_loss_node(g, vs, xrep, sn, ys,
                                                      at.prior_score_batch(xrep), targets));
    };

    bool mc_ok = true;
    double prev_dev = 0.0;
    for (int n : {100, 10000}) {
        const int chunks = 10, per = n / 10;
        dlsm::Rng r(31);
        std::vector<std::vector<Mat>> gs;
        for (int c = 0; c < chunks; ++c) gs.push_back(chunk_grad(per, r));
        int checked = 0, outside = 0;
        double dev = 0.0;
        for (std::size_t k = 0; k < exact.size(); ++k) {
            Mat mean = Mat::Zero(exact[k].rows(), exact[k].cols());
            for (auto& g : gs) mean += g[k] / chunks;
            Mat var = Mat::Zero(exact[k].rows(), exact[k].cols());
            for (auto& g : gs) var += (g[k] - mean).cwiseProduct(g[k] - mean) / (chunks - 1);
            Mat se = (var / chunks).cwiseSqrt();
            for (Eigen::Index i = 0; i < mean.size(); ++i) {
                ++checked;
                dev = std::max(dev, std::abs(mean(i) - exact[k](i)));
                if (std::abs(mean(i) - exact[k](i)) > 3.0 * se(i) + 1e-12) ++outside;
            }
        }
        // 3-sigma misses happen by chance; allow the binomial tail
        if (outside > std::max(3, checked / 33)) mc_ok = false;
        if (n == 100) prev_dev = dev; else if (dev > prev_dev) mc_ok = false;
    }

    char buf[128];
    std::snprintf(buf, sizeof buf, "RB gradient gap %.2e; MC within 3 SE and shrinking", worst);
    detail = buf;
    return worst < kRbTol && mc_ok;
}

// ---------------------------------------------------------- criterion 4

dlsm::Prdc prdc_reference(const Mat& real, const Mat& gen, int k) {
    auto kth = [&](const Mat& pts, Eigen::Index i) {
        std::vector<double> ds;
        for (Eigen::Index j = 0; j < pts.rows(); ++j)
            if (j != i) ds.push_back((pts.row(j) - pts.row(i)).norm());
        std::sort(ds.begin(), ds.end());
        return ds[static_cast<std::size_t>(k) - 1];
    };
    dlsm::Prdc out;
    double density = 0.0;
    for (Eigen::Index g = 0; g < gen.rows(); ++g) {
        bool hit = false;
        for (Eigen::Index r = 0; r < real.rows(); ++r)
            if ((gen.row(g) - real.row(r)).norm() <= kth(real, r)) {
                hit = true;
                density += 1.0;
            }
        out.precision += hit ? 1.0 : 0.0;
    }
    for (Eigen::Index r = 0; r < real.rows(); ++r) {
        bool in_gen = false, covered = false;
        for (Eigen::Index g = 0; g < gen.rows(); ++g) {
            if ((gen.row(g) - real.row(r)).norm() <= kth(gen, g)) in_gen = true;
            if ((gen.row(g) - real.row(r)).norm() <= kth(real, r)) covered = true;
        }
        out.recall += in_gen ? 1.0 : 0.0;
        out.coverage += covered ? 1.0 : 0.0;
    }
    out.precision /= static_cast<double>(gen.rows());
    out.recall /= static_cast<double>(real.rows());
    out.coverage /= static_cast<double>(real.rows());
    out.density = density / (static_cast<double>(k) * gen.rows());
    return out;
}

bool criterion4_prdc(std::string& detail) {
    dlsm::Rng rng(41);
    bool ok = true;
    for (int inst = 0; inst < 50; ++inst) {
        const int nr = 5 + static_cast<int>(rng.uniform_int(16));  // 5..20
        const int ng = 5 + static_cast<int>(rng.uniform_int(16));
        Mat real = rng.normal_matrix(nr, 2);
        Mat gen = 0.8 * rng.normal_matrix(ng, 2);
        dlsm::Prdc a = dlsm::prdc(real, gen, 3);
        dlsm::Prdc b = prdc_reference(real, gen, 3);
        ok = ok && a.precision == b.precision && a.recall == b.recall &&
             a.coverage == b.coverage && std::abs(a.density - b.density) < 1e-12;
    }
    Mat same = dlsm::Rng(5).normal_matrix(12, 2);
    dlsm::Prdc s = dlsm::prdc(same, same, 3);
    ok = ok && s.precision == 1.0 && s.recall == 1.0 && s.coverage == 1.0;
    detail = "50 random instances match brute force exactly; identical sets give 1.0";
    return ok;
}

// ---------------------------------------------------------- criterion 5

bool criterion5_renorm(std::string& detail) {
    dlsm::RenormConfig cfg;
    cfg.alpha = 1.0;
    dlsm::RenormResult id = dlsm::renormalized_posterior_1d(cfg);
    double worst = 0.0;
    for (int c = 0; c < 2; ++c)
        worst = std::max(worst,
                         (id.renormalized[static_cast<std::size_t>(c)] -
                          id.posterior[static_cast<std::size_t>(c)]).abs().maxCoeff());

    auto variance = [](const Eigen::ArrayXd& grid, const Eigen::ArrayXd& p) {
        const double mean = dlsm::trapezoid(grid, grid * p);
        return dlsm::trapezoid(grid, (grid - mean).square() * p);
    };
    std::vector<double> vars;
    for (double alpha : {0.2, 1.0, 5.0}) {
        cfg.alpha = alpha;
        dlsm::RenormResult r = dlsm::renormalized_posterior_1d(cfg);
        vars.push_back(variance(r.grid, r.renormalized[0]));
    }
    bool decreasing = vars[0] > vars[1] && vars[1] > vars[2];

    char buf[128];
    std::snprintf(buf, sizeof buf, "alpha=1 gap %.2e; var %.3f > %.3f > %.3f", worst, vars[0],
                  vars[1], vars[2]);
    detail = buf;
    return worst < kRenormTol && decreasing;
}

// ------------------------------------------------- shared moon experiment

struct FieldErrors {
    // [class] -> E[D_P], E[D_L]
    double dp[2] = {0, 0};
    double dl[2] = {0, 0};
};

struct SeedRun {
    dlsm::ModelParams score;
    dlsm::ModelParams clf_ce, clf_total, clf_dlsm;
    std::vector<dlsm::ModelParams> class_scores;
    // trace checkpoints for criterion 10 (recorded every clf_iters/10)
    std::vector<double> dl_ce, dl_total, dl_dlsm;   // class-averaged E[D_L]
    std::vector<double> ce_ce, ce_total, ce_dlsm;   // CE on a fixed eval set
};

struct MoonLab {
    dlsm::LabeledDataset data;
    dlsm::ParzenOracle oracle;
    Mat grid;
    Mat oracle_prior;
    Mat oracle_post[2], oracle_lik[2];
    dlsm::NoiseSchedule schedule;
    dlsm::LossWeights weights;

    explicit MoonLab(const dlsm::LabeledDataset& d)
        : data(d), oracle(d, kSigmaEval), grid(dlsm::uniform_grid(table_grid())) {
        weights = experiment_weights();
        oracle_prior = oracle.prior_score_batch(grid);
        for (int c : {0, 1}) {
            oracle_post[c] = oracle.posterior_score_batch(grid, c);
            oracle_lik[c] = oracle_post[c] - oracle_prior;
        }
    }

    FieldErrors eval_guided(const dlsm::ModelParams& score, const dlsm::ModelParams& clf,
                            double alpha) const {
        FieldErrors e;
        Eigen::VectorXd sv = Eigen::VectorXd::Constant(grid.rows(), kSigmaEval);
        Mat s_est = dlsm::score_eval(score, grid, sv);
        for (int c : {0, 1}) {
            Eigen::VectorXi cv = Eigen::VectorXi::Constant(grid.rows(), c);
            Mat g = alpha * dlsm::classifier_input_grad(clf, grid, cv, sv);
            e.dl[c] = (g - oracle_lik[c]).rowwise().norm().mean();
            e.dp[c] = (g + s_est - oracle_post[c]).rowwise().norm().mean();
        }
        return e;
    }

    FieldErrors eval_class_scores(const std::vector<dlsm::ModelParams>& models) const {
        FieldErrors e;
        Eigen::VectorXd sv = Eigen::VectorXd::Constant(grid.rows(), kSigmaEval);
        for (int c : {0, 1}) {
            Mat s_c = dlsm::score_eval(models[static_cast<std::size_t>(c)], grid, sv);
            e.dp[c] = (s_c - oracle_post[c]).rowwise().norm().mean();
            e.dl[c] = (s_c - oracle_prior - oracle_lik[c]).rowwise().norm().mean();
        }
        return e;
    }

    // class-averaged likelihood-score error of a classifier (Fig-4 metric)
    double class_avg_dl(const dlsm::ModelParams& clf) const {
        Eigen::VectorXd sv = Eigen::VectorXd::Constant(grid.rows(), kSigmaEval);
        double acc = 0.0;
        for (int c : {0, 1}) {
            Eigen::VectorXi cv = Eigen::VectorXi::Constant(grid.rows(), c);
            Mat g = dlsm::classifier_input_grad(clf, grid, cv, sv);
            acc += 0.5 * (g - oracle_lik[c]).rowwise().norm().mean();
        }
        return acc;
    }
};

SeedRun train_seed(const MoonLab& lab, const Profile& prof, int seed) {
    SeedRun run;
    dlsm::TrainConfig sc;
    sc.iterations = prof.score_iters;
    sc.batch_size = prof.batch;
    sc.learning_rate = prof.score_lr;
    sc.seed = static_cast<std::uint64_t>(1000 + seed);
    run.score = dlsm::train_score_model(lab.data, lab.schedule, sc, lab.weights).params;

    for (int c : {0, 1}) {
        dlsm::TrainConfig xc = sc;
        xc.seed = static_cast<std::uint64_t>(2000 + 10 * seed + c);
        run.class_scores.push_back(
            dlsm::train_score_model(dlsm::subset_by_class(lab.data, c), lab.schedule, xc,
                                    lab.weights).params);
    }

    // fixed perturbed evaluation set for the cross-entropy traces
    dlsm::Rng eval_rng(static_cast<std::uint64_t>(seed) ^ 0x9e3779b97f4a7c15ull);
    dlsm::PerturbedBatch eval_batch =
        dlsm::sample_training_batch(lab.data, lab.schedule, 2000, eval_rng);
    dlsm::LossWeights unweighted = lab.weights;
    unweighted.lambda_ce = [](double) { return 1.0; };

    dlsm::TrainConfig cc = sc;
    cc.iterations = prof.clf_iters;
    cc.learning_rate = prof.clf_lr;
    cc.seed = static_cast<std::uint64_t>(3000 + seed);
    const int every = std::max(1, prof.clf_iters / 10);

    auto train_clf = [&](dlsm::ClassifierLoss kind, std::vector<double>& dls,
                         std::vector<double>& ces) {
        auto cb = [&](int iter, const dlsm::ModelParams& p) {
            if (iter % every != 0) return;
            dls.push_back(lab.class_avg_dl(p));
            ces.push_back(dlsm::ce_loss(p, eval_batch, unweighted));
        };
        return dlsm::train_classifier(lab.data, run.score, lab.schedule, cc, kind, lab.weights, cb)
            .params;
    };
    run.clf_ce = train_clf(dlsm::ClassifierLoss::CE, run.dl_ce, run.ce_ce);
    run.clf_total = train_clf(dlsm::ClassifierLoss::Total, run.dl_total, run.ce_total);
    run.clf_dlsm = train_clf(dlsm::ClassifierLoss::DlsmPrime, run.dl_dlsm, run.ce_dlsm);
    return run;
}

// ---------------------------------------------------------- criterion 6

bool criterion6_oracle(const MoonLab& lab, const Profile& prof, std::string& detail) {
    dlsm::GuidanceModels models;
    models.oracle = &lab.oracle;

    // oracle guidance reproduces the oracle fields identically => D == 0
    double dp = 0.0, dl = 0.0;
    for (int c : {0, 1}) {
        Mat cond = dlsm::conditional_score({dlsm::GuidanceMethod::Oracle, 1.0, c}, models,
                                           lab.grid, kSigmaEval, c);
        dp = std::max(dp, (cond - lab.oracle_post[c]).rowwise().norm().mean());
        dl = std::max(dl, (cond - lab.oracle_prior - lab.oracle_lik[c]).rowwise().norm().mean());
    }

    double pmin = 1.0, rmin = 1.0;
    for (int c : {0, 1}) {
        dlsm::SamplerConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(600 + c);
        cfg.n_samples = prof.oracle_gen_per_class;
        cfg.corrector_steps_per_t = prof.corrector_steps;
        Mat gen = dlsm::pc_sample(
            cfg, dlsm::conditional_score_fn({dlsm::GuidanceMethod::Oracle, 1.0, c}, models, c), 2);
        dlsm::Prdc q = dlsm::prdc(dlsm::subset_by_class(lab.data, c).points, gen, 3);
        pmin = std::min(pmin, q.precision);
        rmin = std::min(rmin, q.recall);
    }

    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "E[D_P]=%g E[D_L]=%g (exact); oracle sampling P>=%.4f R>=%.4f", dp, dl, pmin,
                  rmin);
    detail = buf;
    return dp == 0.0 && dl == 0.0 && pmin >= 0.99 && rmin >= 0.99;
}

// ------------------------------------------------- criteria 7, 8, 9, 10

struct TableStats {
    // medians across seeds, [class]
    double base_dp[2], base_dl[2];
    double scaling_dp[2], scaling_dl[2];
    double ours_dp[2], ours_dl[2];
    double postsm_dp[2];
};

TableStats table_medians(const MoonLab& lab, const std::vector<SeedRun>& runs) {
    TableStats t{};
    std::vector<double> acc;
    auto med = [&](auto get, double out[2]) {
        for (int c : {0, 1}) {
            acc.clear();
            for (const SeedRun& r : runs) acc.push_back(get(r, c));
            out[c] = median(acc);
        }
    };
    med([&](const SeedRun& r, int c) { return lab.eval_guided(r.score, r.clf_ce, 1.0).dp[c]; },
        t.base_dp);
    med([&](const SeedRun& r, int c) { return lab.eval_guided(r.score, r.clf_ce, 1.0).dl[c]; },
        t.base_dl);
    med([&](const SeedRun& r, int c) { return lab.eval_guided(r.score, r.clf_ce, 10.0).dp[c]; },
        t.scaling_dp);
    med([&](const SeedRun& r, int c) { return lab.eval_guided(r.score, r.clf_ce, 10.0).dl[c]; },
        t.scaling_dl);
    med([&](const SeedRun& r, int c) { return lab.eval_guided(r.score, r.clf_total, 1.0).dp[c]; },
        t.ours_dp);
    med([&](const SeedRun& r, int c) { return lab.eval_guided(r.score, r.clf_total, 1.0).dl[c]; },
        t.ours_dl);
    med([&](const SeedRun& r, int c) { return lab.eval_class_scores(r.class_scores).dp[c]; },
        t.postsm_dp);
    return t;
}

bool criterion7_orderings(const TableStats& t, std::string& detail) {
    bool ok = true;
    for (int c : {0, 1}) {
        ok = ok && t.ours_dp[c] < t.base_dp[c] && t.ours_dp[c] / t.base_dp[c] <= 0.6;
        ok = ok && t.scaling_dp[c] >= 5.0 * t.base_dp[c];
        ok = ok && t.ours_dl[c] < t.base_dl[c];
        ok = ok && t.ours_dp[c] <= 2.0 * t.postsm_dp[c];
    }
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "D_P base %.3f/%.3f scaling %.2f/%.2f ours %.3f/%.3f post-SM %.3f/%.3f",
                  t.base_dp[0], t.base_dp[1], t.scaling_dp[0], t.scaling_dp[1], t.ours_dp[0],
                  t.ours_dp[1], t.postsm_dp[0], t.postsm_dp[1]);
    detail = buf;
    return ok;
}

bool criterion8_point_values(const TableStats& t, const Profile& prof, std::string& detail) {
    const double tol = 0.08;
    bool ok = std::abs(t.base_dp[0] - 0.198) <= tol && std::abs(t.base_dp[1] - 0.197) <= tol &&
              std::abs(t.ours_dp[0] - 0.066) <= tol && std::abs(t.ours_dp[1] - 0.064) <= tol &&
              std::abs(t.ours_dl[0] - 0.052) <= tol && std::abs(t.ours_dl[1] - 0.052) <= tol;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "[%s profile] base D_P %.3f/%.3f (ref 0.198/0.197), ours D_P %.3f/%.3f "
                  "(ref 0.066/0.064), ours D_L %.3f/%.3f (ref 0.052/0.052)",
                  prof.name, t.base_dp[0], t.base_dp[1], t.ours_dp[0], t.ours_dp[1], t.ours_dl[0],
                  t.ours_dl[1]);
    detail = buf;
    return ok;
}

bool criterion9_sampling(const MoonLab& lab, const SeedRun& run, const Profile& prof,
                         std::string& detail) {
    dlsm::GuidanceModels models;
    models.score = &run.score;
    models.class_scores = &run.class_scores;
    models.oracle = &lab.oracle;

    auto sample_prdc = [&](dlsm::GuidanceMethod m, const dlsm::ModelParams* clf, double alpha,
                           dlsm::Prdc out[2]) {
        dlsm::GuidanceModels g = models;
        g.classifier = clf;
        for (int c : {0, 1}) {
            dlsm::SamplerConfig cfg;
            cfg.seed = static_cast<std::uint64_t>(900 + c);
            cfg.n_samples = prof.gen_per_class;
            cfg.corrector_steps_per_t = prof.corrector_steps;
            Mat gen = dlsm::pc_sample(cfg, dlsm::conditional_score_fn({m, alpha, c}, g, c), 2);
            out[c] = dlsm::prdc(dlsm::subset_by_class(lab.data, c).points, gen, 3);
        }
    };

    dlsm::Prdc base[2], scaling[2], ours[2];
    sample_prdc(dlsm::GuidanceMethod::Base, &run.clf_ce, 1.0, base);
    sample_prdc(dlsm::GuidanceMethod::Scaling, &run.clf_ce, 10.0, scaling);
    sample_prdc(dlsm::GuidanceMethod::Ours, &run.clf_total, 1.0, ours);

    bool ok = true;
    for (int c : {0, 1}) {
        ok = ok && scaling[c].recall < base[c].recall;
        ok = ok && ours[c].recall >= 0.98;
        ok = ok && ours[c].precision >= base[c].precision - 0.02;
    }
    char buf[220];
    std::snprintf(buf, sizeof buf,
                  "recall base %.3f/%.3f scaling %.3f/%.3f ours %.3f/%.3f; precision base "
                  "%.3f/%.3f ours %.3f/%.3f",
                  base[0].recall, base[1].recall, scaling[0].recall, scaling[1].recall,
                  ours[0].recall, ours[1].recall, base[0].precision, base[1].precision,
                  ours[0].precision, ours[1].precision);
    detail = buf;
    return ok;
}

bool criterion10_ablation(const std::vector<SeedRun>& runs, std::string& detail) {
    auto mean_at = [&](std::vector<double> SeedRun::* series, std::size_t idx) {
        double acc = 0.0;
        for (const SeedRun& r : runs) acc += (r.*series)[idx] / static_cast<double>(runs.size());
        return acc;
    };
    const std::size_t last = runs[0].dl_ce.size() - 1;
    const std::size_t tenth = 1;  // checkpoints are every 10% of training

    const double dl_ce_10 = mean_at(&SeedRun::dl_ce, tenth), dl_ce_f = mean_at(&SeedRun::dl_ce, last);
    const double dl_tot_10 = mean_at(&SeedRun::dl_total, tenth),
                 dl_tot_f = mean_at(&SeedRun::dl_total, last);
    const double ce_ce_f = mean_at(&SeedRun::ce_ce, last);
    const double ce_tot_f = mean_at(&SeedRun::ce_total, last);
    const double ce_dlsm_f = mean_at(&SeedRun::ce_dlsm, last);

    bool ok = dl_ce_f > dl_ce_10;          // CE-only score error drifts up
    ok = ok && dl_tot_f < dl_tot_10;       // Total's drifts down
    ok = ok && dl_tot_f < dl_ce_f;         // and ends below CE-only's
    ok = ok && ce_tot_f <= 1.5 * ce_ce_f;  // Total keeps CE close to CE-only
    ok = ok && ce_dlsm_f > ce_tot_f && ce_dlsm_f > ce_ce_f;  // DLSM'-only does not

    char buf[220];
    std::snprintf(buf, sizeof buf,
                  "E[D_L] ce %.3f->%.3f total %.3f->%.3f; final CE ce %.3f total %.3f dlsm' %.3f",
                  dl_ce_10, dl_ce_f, dl_tot_10, dl_tot_f, ce_ce_f, ce_tot_f, ce_dlsm_f);
    detail = buf;
    return ok;
}

}  // namespace

int main() {
    const char* env = std::getenv("DLSM_PROFILE");
    const Profile& prof = (env && std::strcmp(env, "paper") == 0) ? kPaper : kCi;

    struct Row {
        int id;
        const char* name;
        bool pass;
        std::string detail;
    };
    std::vector<Row> rows;
    auto record = [&](int id, const char* name, auto&& fn) {
        std::string detail;
        bool pass = false;
        try {
            pass = fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        rows.push_back({id, name, pass, std::move(detail)});
        std::printf("CRITERION %2d: %s — %s (%s)\n", id, pass ? "PASS" : "FAIL", name,
                    rows.back().detail.c_str());
        std::fflush(stdout);
    };

    record(1, "autodiff finite differences", criterion1_autodiff);
    record(2, "Parzen closed-form score vs autodiff", criterion2_parzen);
    record(3, "posterior/likelihood gradient equality + MC", criterion3_theorem1);
    record(4, "PRDC vs brute force", criterion4_prdc);
    record(5, "renormalized posterior demo", criterion5_renorm);

    dlsm::LabeledDataset moons = dlsm::generate_moons({1000, 0.05, 20.0, true, 29});
    MoonLab lab(moons);

    record(6, "oracle guidance: zero field error, near-perfect sampling",
           [&](std::string& d) { return criterion6_oracle(lab, prof, d); });

    std::vector<SeedRun> runs;
    for (int s = 1; s <= prof.n_seeds; ++s) {
        std::printf("  [training seed %d/%d, %s profile]\n", s, prof.n_seeds, prof.name);
        std::fflush(stdout);
        runs.push_back(train_seed(lab, prof, s));
    }
    TableStats stats = table_medians(lab, runs);

    record(7, "score-error orderings across methods",
           [&](std::string& d) { return criterion7_orderings(stats, d); });
    record(8, "score-error point values",
           [&](std::string& d) { return criterion8_point_values(stats, prof, d); });
    record(9, "sampling quality orderings",
           [&](std::string& d) { return criterion9_sampling(lab, runs[0], prof, d); });
    record(10, "classifier-objective ablation trends",
           [&](std::string& d) { return criterion10_ablation(runs, d); });

    int failed = 0;
    for (const Row& r : rows) failed += r.pass ? 0 : 1;
    std::printf("%d/10 criteria passed\n", 10 - failed);
    return failed == 0 ? 0 : 1;
}
