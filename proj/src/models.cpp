// SPDX-License-Identifier: Apache-2.0
#include "dlsm/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dlsm/rng.hpp"

namespace dlsm {

namespace {

using Mat = Eigen::MatrixXd;

void check_finite(const Mat& m, const char* what) {
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

std::vector<int> layer_dims(const MlpSpec& spec) {
    std::vector<int> dims;
    dims.push_back(spec.input_dim + 1);  // + ln(sigma)
    for (int h : spec.hidden) dims.push_back(h);
    dims.push_back(spec.output_dim);
    return dims;
}

// forward pass returning pre-activations per layer (for manual backprop)
Mat mlp_eval(const ModelParams& p, const Mat& input, std::vector<Mat>* pre_acts = nullptr) {
    Mat h = input;
    const std::size_t layers = p.layer_count();
    for (std::size_t k = 0; k < layers; ++k) {
        Mat z = h * p.weights[k];
        z.rowwise() += p.biases[k].row(0);
        if (pre_acts) pre_acts->push_back(z);
        h = (k + 1 < layers) ? z.cwiseMax(0.0) : z;
    }
    return h;
}

Mat append_sigma_column(const Mat& x, const Eigen::VectorXd& sigmas) {
    if (sigmas.size() != x.rows())
        throw std::invalid_argument("sigma count does not match batch rows");
    if ((sigmas.array() <= 0.0).any())
        throw std::invalid_argument("sigma must be > 0");
    Mat in(x.rows(), x.cols() + 1);
    in.leftCols(x.cols()) = x;
    in.col(x.cols()) = sigmas.array().log();
    return in;
}

Mat log_softmax_rows(const Mat& logits) {
    Eigen::VectorXd mx = logits.rowwise().maxCoeff();
    Mat centered = logits.colwise() - mx;
    Eigen::VectorXd lse = centered.array().exp().rowwise().sum().log();
    return centered.colwise() - lse;
}

}  // namespace

ModelParams init_model(const MlpSpec& spec) {
    if (spec.hidden.empty()) throw std::invalid_argument("init_model: hidden layers required");
    if (spec.input_dim < 1 || spec.output_dim < 1)
        throw std::invalid_argument("init_model: dims must be >= 1");

    ModelParams p;
    p.spec = spec;
    Rng rng(spec.seed);
    const auto dims = layer_dims(spec);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const int fan_in = dims[k];
        const int fan_out = dims[k + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Mat w(fan_in, fan_out);
        for (int i = 0; i < fan_in; ++i)
            for (int j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-limit, limit);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Mat::Zero(1, fan_out));
    }
    return p;
}

std::vector<ad::Var> param_vars(ad::Graph& g, const ModelParams& params, bool trainable) {
    std::vector<ad::Var> vars;
    vars.reserve(params.layer_count() * 2);
    for (std::size_t k = 0; k < params.layer_count(); ++k) {
        vars.push_back(trainable ? g.input(params.weights[k]) : g.constant(params.weights[k]));
        vars.push_back(trainable ? g.input(params.biases[k]) : g.constant(params.biases[k]));
    }
    return vars;
}

ad::Var mlp_forward_node(ad::Graph& g, const std::vector<ad::Var>& vars, ad::Var batch_in) {
    const std::size_t layers = vars.size() / 2;
    ad::Var h = batch_in;
    for (std::size_t k = 0; k < layers; ++k) {
        ad::Var z = g.add_rows(g.matmul(h, vars[2 * k]), vars[2 * k + 1]);
        h = (k + 1 < layers) ? g.relu(z) : z;
    }
    return h;
}

ad::Var with_sigma_column(ad::Graph& g, ad::Var x, const Eigen::VectorXd& sigmas) {
    if (sigmas.size() != x.value().rows())
        throw std::invalid_argument("with_sigma_column: sigma count mismatch");
    Mat lns = sigmas.array().log().matrix();
    return g.concat_cols(x, g.constant(lns));
}

Eigen::MatrixXd score_eval(const ModelParams& params, const Mat& x,
                           const Eigen::VectorXd& sigmas) {
    check_finite(x, "score_eval");
    // The network predicts the (negated) noise direction, which stays O(1)
    // across the whole sigma schedule; dividing by sigma recovers the score,
    // whose magnitude spans three decades on a [0.01, 10] schedule.
    Mat out = mlp_eval(params, append_sigma_column(x, sigmas));
    return out.array().colwise() / sigmas.array();
}

Eigen::MatrixXd score_eval(const ModelParams& params, const Mat& x, double sigma) {
    return score_eval(params, x, Eigen::VectorXd::Constant(x.rows(), sigma));
}

Eigen::MatrixXd classifier_log_prob(const ModelParams& params, const Mat& x,
                                    const Eigen::VectorXd& sigmas) {
    check_finite(x, "classifier_log_prob");
    // Logits carry a 1/sigma temperature: the class boundary sharpens as the
    // noise anneals, so the log-probability gradients must grow like 1/sigma
    // while the network itself stays O(1) at every noise level.
    Mat logits = mlp_eval(params, append_sigma_column(x, sigmas));
    logits.array().colwise() /= sigmas.array();
    return log_softmax_rows(logits);
}

Eigen::MatrixXd classifier_log_prob(const ModelParams& params, const Mat& x, double sigma) {
    return classifier_log_prob(params, x, Eigen::VectorXd::Constant(x.rows(), sigma));
}

Eigen::MatrixXd classifier_input_grad(const ModelParams& params, const Mat& x,
                                      const Eigen::VectorXi& classes,
                                      const Eigen::VectorXd& sigmas) {
    check_finite(x, "classifier_input_grad");
    if (classes.size() != x.rows())
        throw std::invalid_argument("classifier_input_grad: class count mismatch");

    const Mat input = append_sigma_column(x, sigmas);
    std::vector<Mat> pre;
    Mat logits = mlp_eval(params, input, &pre);
    if ((classes.array() < 0).any() || (classes.array() >= logits.cols()).any())
        throw std::invalid_argument("classifier_input_grad: class out of range");

    // d(log p_y)/d(raw logits) = (onehot(y) - softmax(logits/sigma)) / sigma
    logits.array().colwise() /= sigmas.array();
    Mat probs = log_softmax_rows(logits).array().exp();
    Mat g = -probs;
    for (Eigen::Index i = 0; i < x.rows(); ++i) g(i, classes[i]) += 1.0;
    g.array().colwise() /= sigmas.array();

    const std::size_t layers = params.layer_count();
    for (std::size_t k = layers; k-- > 0;) {
        g = g * params.weights[k].transpose();
        if (k > 0) g = g.cwiseProduct((pre[k - 1].array() > 0.0).cast<double>().matrix());
    }
    return g.leftCols(x.cols());
}

Eigen::MatrixXd classifier_input_grad(const ModelParams& params, const Mat& x, int cls,
                                      double sigma) {
    return classifier_input_grad(params, x, Eigen::VectorXi::Constant(x.rows(), cls),
                                 Eigen::VectorXd::Constant(x.rows(), sigma));
}

ad::Var classifier_input_grad_node(ad::Graph& g, const std::vector<ad::Var>& vars,
                                   const Mat& x, const Eigen::VectorXi& classes,
                                   const Eigen::VectorXd& sigmas) {
    ad::Var xv = g.input(x);
    ad::Var in = with_sigma_column(g, xv, sigmas);
    ad::Var logits = mlp_forward_node(g, vars, in);
    // 1/sigma logit temperature, matching classifier_log_prob
    Mat invs = (1.0 / sigmas.array()).matrix().replicate(1, logits.value().cols());
    ad::Var logp = g.log_softmax(g.mul(logits, g.constant(invs)));
    // each row only affects its own output, so the batched gradient of the
    // summed picks is the per-sample input gradient
    ad::Var picked = g.sum(g.gather_cols(logp, classes));
    return g.grad(picked, {xv})[0];
}

// ---- checkpoint I/O ----

namespace {

constexpr char kMagic[4] = {'D', 'L', 'S', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    nlohmann::json spec;
    spec["kind"] = params.spec.kind == ModelKind::Score ? "score" : "classifier";
    spec["input_dim"] = params.spec.input_dim;
    spec["hidden"] = params.spec.hidden;
    spec["output_dim"] = params.spec.output_dim;
    spec["seed"] = params.spec.seed;
    spec["iterations"] = params.meta.iterations;
    spec["loss_kind"] = params.meta.loss_kind;
    const std::string text = spec.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kMagic, 4);
    write_pod(f, kFormatVersion);
    write_pod(f, static_cast<std::uint64_t>(text.size()));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t k = 0; k < params.layer_count(); ++k) {
        const Mat& w = params.weights[k];
        const Mat& b = params.biases[k];
        f.write(reinterpret_cast<const char*>(w.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(w.size())));
        f.write(reinterpret_cast<const char*>(b.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(b.size())));
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);

    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: corrupt file (bad magic): " + path);
    const auto version = read_pod<std::uint32_t>(f);
    if (version != kFormatVersion)
        throw std::runtime_error("load_checkpoint: unsupported format version " +
                                 std::to_string(version));
    const auto json_len = read_pod<std::uint64_t>(f);
    std::string text(json_len, '\0');
    f.read(text.data(), static_cast<std::streamsize>(json_len));
    if (!f) throw std::runtime_error("load_checkpoint: truncated spec: " + path);

    nlohmann::json spec;
    try {
        spec = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error("load_checkpoint: corrupt spec JSON: " + path);
    }

    ModelParams p;
    p.spec.kind = spec.at("kind").get<std::string>() == "score" ? ModelKind::Score
                                                                : ModelKind::Classifier;
    p.spec.input_dim = spec.at("input_dim").get<int>();
    p.spec.hidden = spec.at("hidden").get<std::vector<int>>();
    p.spec.output_dim = spec.at("output_dim").get<int>();
    p.spec.seed = spec.at("seed").get<std::uint64_t>();
    p.meta.iterations = spec.at("iterations").get<std::uint64_t>();
    p.meta.loss_kind = spec.at("loss_kind").get<std::string>();

    const auto dims = layer_dims(p.spec);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        Mat w(dims[k], dims[k + 1]);
        Mat b(1, dims[k + 1]);
        f.read(reinterpret_cast<char*>(w.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(w.size())));
        f.read(reinterpret_cast<char*>(b.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(b.size())));
        if (!f) throw std::runtime_error("load_checkpoint: shape mismatch or truncation: " + path);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    f.peek();
    if (!f.eof()) throw std::runtime_error("load_checkpoint: trailing bytes: " + path);
    return p;
}

ModelParams load_checkpoint(const std::string& path, ModelKind expected) {
    ModelParams p = load_checkpoint(path);
    if (p.spec.kind != expected)
        throw std::runtime_error("load_checkpoint: checkpoint kind mismatch for " + path);
    return p;
}

}  // namespace dlsm
