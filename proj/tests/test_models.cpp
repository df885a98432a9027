// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dlsm/models.hpp"
#include "dlsm/rng.hpp"

using dlsm::MlpSpec;
using dlsm::ModelKind;
using dlsm::ModelParams;
using dlsm::Rng;

namespace {

MlpSpec small_classifier_spec() {
    MlpSpec s;
    s.kind = ModelKind::Classifier;
    s.hidden = {8, 6};
    s.output_dim = 3;
    s.seed = 21;
    return s;
}

}  // namespace

TEST_CASE("initialization: shapes, zero biases, fan-in bound, determinism") {
    MlpSpec s;
    s.hidden = {128, 64, 32};
    s.seed = 5;
    ModelParams p = dlsm::init_model(s);
    REQUIRE(p.layer_count() == 4);
    CHECK(p.weights[0].rows() == 3);  // input_dim + ln(sigma)
    CHECK(p.weights[0].cols() == 128);
    CHECK(p.weights[3].rows() == 32);
    CHECK(p.weights[3].cols() == 2);
    for (std::size_t k = 0; k < p.layer_count(); ++k) {
        CHECK(p.biases[k].isZero(0.0));
        const double bound = std::sqrt(6.0 / static_cast<double>(p.weights[k].rows()));
        CHECK(p.weights[k].cwiseAbs().maxCoeff() <= bound);
        CHECK(p.weights[k].cwiseAbs().maxCoeff() > 0.0);
    }
    CHECK(dlsm::init_model(s).weights[0] == p.weights[0]);
    s.seed = 6;
    CHECK(dlsm::init_model(s).weights[0] != p.weights[0]);
}

TEST_CASE("fast score evaluation matches the graph forward pass") {
    MlpSpec s;
    s.hidden = {16, 8};
    s.seed = 2;
    ModelParams p = dlsm::init_model(s);
    Rng rng(3);
    Eigen::MatrixXd x = 5.0 * rng.normal_matrix(7, 2);
    Eigen::VectorXd sigmas(7);
    for (int i = 0; i < 7; ++i) sigmas[i] = 0.02 + i;

    dlsm::ad::Graph g;
    dlsm::ad::Var in = dlsm::with_sigma_column(g, g.constant(x), sigmas);
    Eigen::MatrixXd graph_out = dlsm::mlp_forward_node(g, dlsm::param_vars(g, p, false), in).value();
    // the graph forward yields the raw noise prediction; score_eval divides by sigma
    Eigen::MatrixXd expected = graph_out.array().colwise() / sigmas.array();
    CHECK((dlsm::score_eval(p, x, sigmas) - expected).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("classifier log-probabilities are normalized") {
    ModelParams p = dlsm::init_model(small_classifier_spec());
    Rng rng(4);
    Eigen::MatrixXd x = 3.0 * rng.normal_matrix(9, 2);
    Eigen::MatrixXd lp = dlsm::classifier_log_prob(p, x, 0.5);
    Eigen::VectorXd sums = lp.array().exp().rowwise().sum();
    for (int i = 0; i < 9; ++i) CHECK(sums[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("classifier input gradient: manual backprop vs graph vs finite differences") {
    ModelParams p = dlsm::init_model(small_classifier_spec());
    Rng rng(6);
    Eigen::MatrixXd x = 2.0 * rng.normal_matrix(5, 2);
    Eigen::VectorXi classes(5);
    classes << 0, 1, 2, 1, 0;
    Eigen::VectorXd sigmas = Eigen::VectorXd::Constant(5, 0.3);

    Eigen::MatrixXd manual = dlsm::classifier_input_grad(p, x, classes, sigmas);

    dlsm::ad::Graph g;
    Eigen::MatrixXd graph =
        dlsm::classifier_input_grad_node(g, dlsm::param_vars(g, p, false), x, classes, sigmas)
            .value();
    CHECK((manual - graph).cwiseAbs().maxCoeff() < 1e-12);

    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 2; ++j) {
            Eigen::MatrixXd xp = x, xm = x;
            xp(i, j) += h;
            xm(i, j) -= h;
            const double fd = (dlsm::classifier_log_prob(p, xp, sigmas)(i, classes[i]) -
                               dlsm::classifier_log_prob(p, xm, sigmas)(i, classes[i])) /
                              (2.0 * h);
            CHECK(manual(i, j) == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("checkpoint round trip is bit-exact and keeps metadata") {
    ModelParams p = dlsm::init_model(small_classifier_spec());
    p.meta.iterations = 1234;
    p.meta.loss_kind = "total";
    const std::string path = "ckpt_test.bin";
    dlsm::save_checkpoint(p, path);
    ModelParams r = dlsm::load_checkpoint(path);
    CHECK(r.spec.kind == p.spec.kind);
    CHECK(r.spec.hidden == p.spec.hidden);
    CHECK(r.meta.iterations == 1234);
    CHECK(r.meta.loss_kind == "total");
    for (std::size_t k = 0; k < p.layer_count(); ++k) {
        CHECK(r.weights[k] == p.weights[k]);
        CHECK(r.biases[k] == p.biases[k]);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects wrong kind, bad magic, truncation") {
    ModelParams p = dlsm::init_model(small_classifier_spec());
    const std::string path = "ckpt_guard_test.bin";
    dlsm::save_checkpoint(p, path);
    CHECK_THROWS(dlsm::load_checkpoint(path, ModelKind::Score));
    CHECK_NOTHROW(dlsm::load_checkpoint(path, ModelKind::Classifier));

    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        std::ofstream out(path, std::ios::binary);
        out << bytes;
    }
    CHECK_THROWS(dlsm::load_checkpoint(path));

    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE this is not a checkpoint";
    }
    CHECK_THROWS(dlsm::load_checkpoint(path));
    std::remove(path.c_str());
}
