// SPDX-License-Identifier: Apache-2.0
#include "dlsm/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace dlsm {

namespace {

// log-sum-exp of a vector
double lse(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

double gauss_pdf(double x, double mean, double var) {
    return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * M_PI * var);
}

}  // namespace

double kernel_log_density(const Eigen::VectorXd& x_tilde, const Eigen::VectorXd& x,
                          double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("kernel_log_density: sigma must be > 0");
    if (x_tilde.size() != x.size())
        ad::shape_error("kernel_log_density", x_tilde, x);
    const double d = static_cast<double>(x.size());
    return -0.5 * d * std::log(2.0 * M_PI) - d * std::log(sigma) -
           (x_tilde - x).squaredNorm() / (2.0 * sigma * sigma);
}

ParzenOracle::ParzenOracle(LabeledDataset dataset, double sigma)
    : data_(std::move(dataset)), sigma_(sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("ParzenOracle: sigma must be > 0");
    if (data_.size() < 1) throw std::invalid_argument("ParzenOracle: empty dataset");
}

double ParzenOracle::prior_log_density(const Eigen::VectorXd& x_tilde) const {
    const Eigen::Index m = data_.size();
    Eigen::VectorXd logk(m);
    for (Eigen::Index i = 0; i < m; ++i)
        logk[i] = kernel_log_density(x_tilde, data_.points.row(i), sigma_);
    return lse(logk) - std::log(static_cast<double>(m));
}

double ParzenOracle::class_log_density(const Eigen::VectorXd& x_tilde, int cls) const {
    if (cls < 0 || cls >= data_.class_count)
        throw std::invalid_argument("class_log_density: class out of range");
    std::vector<double> logs;
    for (Eigen::Index i = 0; i < data_.size(); ++i) {
        if (data_.labels[i] == cls)
            logs.push_back(kernel_log_density(x_tilde, data_.points.row(i), sigma_));
    }
    if (logs.empty()) throw std::invalid_argument("class_log_density: class is empty");
    Eigen::Map<Eigen::VectorXd> v(logs.data(), static_cast<Eigen::Index>(logs.size()));
    return lse(v) - std::log(static_cast<double>(logs.size()));
}

Eigen::MatrixXd ParzenOracle::score_from_points(const Eigen::MatrixXd& queries,
                                                const Eigen::MatrixXd& pts) const {
    // Eq-2 closed form with softmax-stabilized kernel weights.
    const double inv2s2 = 1.0 / (2.0 * sigma_ * sigma_);

    // squared distances q x m, turned into softmax weights in place (the
    // buffer is the dominant allocation for large query batches)
    Eigen::MatrixXd w = (-2.0 * queries) * pts.transpose();
    w.colwise() += queries.rowwise().squaredNorm();
    w.rowwise() += pts.rowwise().squaredNorm().transpose();
    w *= -inv2s2;
    Eigen::VectorXd rowmax = w.rowwise().maxCoeff();
    w.colwise() -= rowmax;
    w = w.array().exp();
    Eigen::VectorXd norm = w.rowwise().sum();

    Eigen::MatrixXd num = w * pts;               // q x d, sum_i w_i x_i
    num.array().colwise() /= norm.array();       // softmax-weighted mean of points
    return (num - queries) / (sigma_ * sigma_);
}

Eigen::MatrixXd ParzenOracle::prior_score_batch(const Eigen::MatrixXd& queries) const {
    return score_from_points(queries, data_.points);
}

Eigen::MatrixXd ParzenOracle::posterior_score_batch(const Eigen::MatrixXd& queries,
                                                    int cls) const {
    if (cls < 0 || cls >= data_.class_count)
        throw std::invalid_argument("posterior_score: class out of range");
    if ((data_.labels.array() == cls).count() == 0)
        throw std::invalid_argument("posterior_score: class is empty");
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < data_.size(); ++i)
        if (data_.labels[i] == cls) idx.push_back(i);
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(idx.size()), data_.dim());
    for (std::size_t i = 0; i < idx.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = data_.points.row(idx[i]);
    return score_from_points(queries, pts);
}

Eigen::MatrixXd ParzenOracle::likelihood_score_batch(const Eigen::MatrixXd& queries,
                                                     int cls) const {
    return posterior_score_batch(queries, cls) - prior_score_batch(queries);
}

Eigen::VectorXd ParzenOracle::prior_score(const Eigen::VectorXd& x_tilde) const {
    return prior_score_batch(x_tilde.transpose()).row(0);
}

Eigen::VectorXd ParzenOracle::posterior_score(const Eigen::VectorXd& x_tilde, int cls) const {
    return posterior_score_batch(x_tilde.transpose(), cls).row(0);
}

Eigen::VectorXd ParzenOracle::likelihood_score(const Eigen::VectorXd& x_tilde,
                                               int cls) const {
    return posterior_score(x_tilde, cls) - prior_score(x_tilde);
}

ad::Var ParzenOracle::prior_log_density_node(ad::Graph& g, ad::Var x_tilde) const {
    const Eigen::Index m = data_.size();
    const Eigen::Index d = data_.dim();
    if (x_tilde.value().rows() != 1 || x_tilde.value().cols() != d)
        ad::shape_error("prior_log_density_node", x_tilde.value(), Eigen::MatrixXd(1, d));

    ad::Var pts = g.constant(data_.points);
    ad::Var diff = g.sub(g.broadcast_rows(x_tilde, m), pts);  // m x d
    ad::Var sq = g.row_squared_norm(diff);                    // m x 1
    ad::Var logk = g.add_scalar(
        g.scale(sq, -1.0 / (2.0 * sigma_ * sigma_)),
        -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI) -
            static_cast<double>(d) * std::log(sigma_));
    // log-sum-exp over the m kernels, then the 1/m mixture weight
    ad::Var lse_node = g.logsumexp_rows(g.transpose(logk));   // 1 x 1
    return g.add_scalar(lse_node, -std::log(static_cast<double>(m)));
}

double trapezoid(const Eigen::ArrayXd& grid, const Eigen::ArrayXd& values) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i + 1 < grid.size(); ++i)
        acc += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
    return acc;
}

RenormResult renormalized_posterior_1d(const RenormConfig& cfg) {
    if (!(cfg.alpha > 0.0)) throw std::invalid_argument("renorm: alpha must be > 0");
    if (!(cfg.grid_lo < cfg.grid_hi) || cfg.grid_count < 3)
        throw std::invalid_argument("renorm: invalid grid");
    if (std::abs(cfg.weights.sum() - 1.0) > 1e-12)
        throw std::invalid_argument("renorm: weights must sum to 1");

    const int n = cfg.grid_count;
    RenormResult out;
    out.grid = Eigen::ArrayXd::LinSpaced(n, cfg.grid_lo, cfg.grid_hi);

    const int classes = 2;
    out.posterior.resize(classes);
    out.renormalized.resize(classes);
    Eigen::MatrixXd cond(n, classes);  // p(x | y_i)
    for (int c = 0; c < classes; ++c) {
        Eigen::ArrayXd col(n);
        for (int i = 0; i < n; ++i)
            col[i] = gauss_pdf(out.grid[i], cfg.means[c], cfg.variances[c]);
        cond.col(c) = col;
        // normalized on the grid, so every returned curve is comparable
        out.posterior[static_cast<std::size_t>(c)] = col / trapezoid(out.grid, col);
    }
    out.prior = (cond * cfg.weights).array();  // p(x) = sum_y p(y) p(x|y)

    // discrete-label likelihood p(y|x), then p_alpha(y|x) = p(y|x)^alpha / Z(x)
    Eigen::MatrixXd lik(n, classes);
    for (int c = 0; c < classes; ++c)
        lik.col(c) = (cond.col(c).array() * cfg.weights[c] / out.prior).matrix();
    Eigen::MatrixXd lik_a = lik.array().pow(cfg.alpha);
    Eigen::ArrayXd z = lik_a.rowwise().sum().array();
    lik_a.array().colwise() /= z;

    for (int c = 0; c < classes; ++c) {
        Eigen::ArrayXd joint = lik_a.col(c).array() * out.prior;  // p_alpha(x, y_c)
        const double mass = trapezoid(out.grid, joint);
        if (!(mass > 0.0)) throw std::runtime_error("renorm: degenerate joint mass");
        Eigen::ArrayXd density = joint / mass;
        if (std::abs(trapezoid(out.grid, density) - 1.0) > 1e-6)
            throw std::runtime_error(
                "renorm: normalization tolerance not met; use a finer grid");
        out.renormalized[static_cast<std::size_t>(c)] = density;
    }
    return out;
}

}  // namespace dlsm
