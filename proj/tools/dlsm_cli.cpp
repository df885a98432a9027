// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: two-stage training, guided sampling, field/PRDC
// evaluation, the consolidated method-comparison table, the classifier-loss
// ablation, and the 1-D renormalized-likelihood demo.
//
// Exit codes: 0 success, 2 config error, 3 missing artifact,
// 4 numeric failure, 5 I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dlsm/dataset.hpp"
#include "dlsm/losses.hpp"
#include "dlsm/metrics.hpp"
#include "dlsm/models.hpp"
#include "dlsm/oracle.hpp"
#include "dlsm/samplers.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dlsm;

namespace {

struct CliError : std::runtime_error {
    int code;
    CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

[[noreturn]] void config_error(const std::string& msg) { throw CliError(2, msg); }
[[noreturn]] void missing_artifact(const std::string& msg) { throw CliError(3, msg); }
[[noreturn]] void io_error(const std::string& msg) { throw CliError(5, msg); }

// ---------------- configuration ----------------

struct ExperimentConfig {
    json raw;  // resolved echo for the manifest

    MoonConfig moons;
    std::string dataset_csv;  // non-empty: load instead of generating

    NoiseSchedule schedule;
    TrainConfig train_score;
    TrainConfig train_classifier;

    double dsm_sigma_power = 2.0;
    double dlsm_sigma_power = 2.0;
    double ce_weight = 1.0;
    double balance = 0.125;

    GuidanceConfig guidance;
    SamplerConfig sampler;

    GridConfig grid;
    int k = 3;
    double sigma_eval = 5.0;
    int eval_every = 1000;
    int n_seeds = 5;
    int samples_per_class = 1000;

    std::string score_ckpt;
    std::string classifier_ckpt;
    std::vector<std::string> class_score_ckpts;
};

LossWeights loss_weights(const ExperimentConfig& cfg) {
    LossWeights w;
    const double pd = cfg.dsm_sigma_power, pl = cfg.dlsm_sigma_power, ce = cfg.ce_weight;
    w.lambda_dsm = [pd](double s) { return std::pow(s, pd); };
    w.lambda_dlsm = [pl](double s) { return std::pow(s, pl); };
    w.lambda_ce = [ce](double) { return ce; };
    w.lambda_balance = cfg.balance;
    return w;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        config_error(std::string("config field '") + key + "': " + e.what());
    }
}

ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override,
                             bool has_seed_override) {
    json j;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) missing_artifact("config file not found: " + path);
        try {
            f >> j;
        } catch (const json::exception& e) {
            config_error(std::string("config parse: ") + e.what());
        }
    } else {
        j = json::object();
    }

    ExperimentConfig cfg;
    const json ds = get_or(j, "dataset", json::object());
    cfg.dataset_csv = get_or<std::string>(ds, "path", "");
    cfg.moons.samples_per_class = get_or(ds, "samplesPerClass", 2000);
    cfg.moons.noise_std = get_or(ds, "noiseStd", 0.05);
    cfg.moons.scale_factor = get_or(ds, "scaleFactor", 20.0);
    cfg.moons.seed = get_or<std::uint64_t>(ds, "seed", 0);

    const json sc = get_or(j, "schedule", json::object());
    cfg.schedule.sigma_min = get_or(sc, "sigmaMin", 0.01);
    cfg.schedule.sigma_max = get_or(sc, "sigmaMax", 10.0);
    cfg.schedule.T = get_or(sc, "T", 1000);
    if (!(cfg.schedule.sigma_min > 0.0) || !(cfg.schedule.sigma_min < cfg.schedule.sigma_max) ||
        cfg.schedule.T < 1)
        config_error("schedule: need 0 < sigmaMin < sigmaMax and T >= 1");

    const json tr = get_or(j, "train", json::object());
    auto read_train = [&](const json& t, TrainConfig& out, double default_lr) {
        out.iterations = get_or(t, "iterations", 40000);
        out.batch_size = get_or(t, "batchSize", 4000);
        out.learning_rate = get_or(t, "learningRate", default_lr);
        out.final_learning_rate = get_or(t, "finalLearningRate", 0.0);
        out.seed = get_or<std::uint64_t>(t, "seed", 0);
        if (out.iterations < 0 || out.batch_size < 1 || out.learning_rate < 0.0 ||
            out.final_learning_rate < 0.0)
            config_error("train: invalid iterations/batchSize/learningRate");
    };
    read_train(get_or(tr, "score", json::object()), cfg.train_score, 6.5e-4);
    read_train(get_or(tr, "classifier", json::object()), cfg.train_classifier, 2.0e-5);

    const json lw = get_or(j, "lossWeights", json::object());
    cfg.dsm_sigma_power = get_or(lw, "dsmSigmaPower", 2.0);
    cfg.dlsm_sigma_power = get_or(lw, "dlsmSigmaPower", 2.0);
    cfg.ce_weight = get_or(lw, "ceWeight", 1.0);
    cfg.balance = get_or(lw, "balance", 0.125);
    if (cfg.ce_weight <= 0.0 || cfg.balance < 0.0) config_error("lossWeights: invalid weights");

    const json gd = get_or(j, "guidance", json::object());
    try {
        cfg.guidance.method = guidance_method_from_string(get_or<std::string>(gd, "method", "ours"));
    } catch (const std::invalid_argument& e) {
        config_error(e.what());
    }
    cfg.guidance.alpha = get_or(gd, "alpha", 10.0);
    if (!(cfg.guidance.alpha > 0.0)) config_error("guidance.alpha must be > 0");

    const json sp = get_or(j, "sampler", json::object());
    cfg.sampler.schedule = cfg.schedule;
    cfg.sampler.corrector_snr = get_or(sp, "correctorSnr", 0.16);
    cfg.sampler.corrector_steps_per_t = get_or(sp, "correctorStepsPerT", 1);
    cfg.samples_per_class = get_or(sp, "nSamplesPerClass", 1000);
    if (!(cfg.sampler.corrector_snr > 0.0) || cfg.sampler.corrector_steps_per_t < 0 ||
        cfg.samples_per_class < 1)
        config_error("sampler: invalid correctorSnr/correctorStepsPerT/nSamplesPerClass");

    const json mt = get_or(j, "metrics", json::object());
    std::vector<double> lo = get_or(mt, "gridLo", std::vector<double>{-25.0, -40.0});
    std::vector<double> hi = get_or(mt, "gridHi", std::vector<double>{25.0, 40.0});
    if (lo.size() != hi.size() || lo.empty()) config_error("metrics: gridLo/gridHi mismatch");
    cfg.grid.lo = Eigen::Map<Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    cfg.grid.hi = Eigen::Map<Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    cfg.grid.count = get_or(mt, "gridCount", 1225);
    cfg.grid.regular = get_or(mt, "gridRegular", true);
    cfg.k = get_or(mt, "k", 3);
    cfg.sigma_eval = get_or(mt, "sigmaEval", 5.0);
    cfg.eval_every = get_or(mt, "evalEvery", 1000);
    cfg.n_seeds = get_or(mt, "nSeeds", 5);
    if (cfg.k < 1 || !(cfg.sigma_eval > 0.0) || cfg.eval_every < 1 || cfg.n_seeds < 1)
        config_error("metrics: invalid k/sigmaEval/evalEvery/nSeeds");

    const json ar = get_or(j, "artifacts", json::object());
    cfg.score_ckpt = get_or<std::string>(ar, "score", "");
    cfg.classifier_ckpt = get_or<std::string>(ar, "classifier", "");
    cfg.class_score_ckpts = get_or(ar, "classScores", std::vector<std::string>{});

    const std::uint64_t seed =
        has_seed_override ? seed_override : get_or<std::uint64_t>(j, "seed", 0);
    cfg.moons.seed += seed;
    cfg.train_score.seed += seed;
    cfg.train_classifier.seed += seed;
    cfg.sampler.seed = get_or<std::uint64_t>(sp, "seed", 0) + seed;
    cfg.grid.seed = seed;

    // resolved echo
    cfg.raw = {
        {"dataset",
         cfg.dataset_csv.empty()
             ? json{{"samplesPerClass", cfg.moons.samples_per_class},
                    {"noiseStd", cfg.moons.noise_std},
                    {"scaleFactor", cfg.moons.scale_factor},
                    {"seed", cfg.moons.seed}}
             : json{{"path", cfg.dataset_csv}}},
        {"schedule",
         {{"sigmaMin", cfg.schedule.sigma_min},
          {"sigmaMax", cfg.schedule.sigma_max},
          {"T", cfg.schedule.T}}},
        {"train",
         {{"score",
           {{"iterations", cfg.train_score.iterations},
            {"batchSize", cfg.train_score.batch_size},
            {"learningRate", cfg.train_score.learning_rate},
            {"finalLearningRate", cfg.train_score.final_learning_rate},
            {"seed", cfg.train_score.seed}}},
          {"classifier",
           {{"iterations", cfg.train_classifier.iterations},
            {"batchSize", cfg.train_classifier.batch_size},
            {"learningRate", cfg.train_classifier.learning_rate},
            {"finalLearningRate", cfg.train_classifier.final_learning_rate},
            {"seed", cfg.train_classifier.seed}}}}},
        {"lossWeights",
         {{"dsmSigmaPower", cfg.dsm_sigma_power},
          {"dlsmSigmaPower", cfg.dlsm_sigma_power},
          {"ceWeight", cfg.ce_weight},
          {"balance", cfg.balance}}},
        {"guidance", {{"method", to_string(cfg.guidance.method)}, {"alpha", cfg.guidance.alpha}}},
        {"sampler",
         {{"correctorSnr", cfg.sampler.corrector_snr},
          {"correctorStepsPerT", cfg.sampler.corrector_steps_per_t},
          {"nSamplesPerClass", cfg.samples_per_class},
          {"seed", cfg.sampler.seed}}},
        {"metrics",
         {{"gridLo", lo},
          {"gridHi", hi},
          {"gridCount", cfg.grid.count},
          {"gridRegular", cfg.grid.regular},
          {"k", cfg.k},
          {"sigmaEval", cfg.sigma_eval},
          {"evalEvery", cfg.eval_every},
          {"nSeeds", cfg.n_seeds}}},
        {"artifacts",
         {{"score", cfg.score_ckpt},
          {"classifier", cfg.classifier_ckpt},
          {"classScores", cfg.class_score_ckpts}}},
        {"seed", seed},
    };
    return cfg;
}

// ---------------- output plumbing ----------------

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) io_error("cannot hash " + path);
    std::uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

struct OutputDir {
    fs::path dir;

    OutputDir(const std::string& out, bool force) : dir(out) {
        if (out.empty()) config_error("--out is required");
        std::error_code ec;
        if (fs::exists(dir, ec)) {
            if (!force) io_error("output directory exists (use --force): " + out);
        } else if (!fs::create_directories(dir, ec) && ec) {
            io_error("cannot create output directory " + out + ": " + ec.message());
        }
    }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    void write_manifest(const std::string& command, const json& resolved_config,
                        const std::vector<std::string>& artifact_names) const {
        json artifacts = json::object();
        for (const std::string& name : artifact_names)
            artifacts[name] = {{"path", name}, {"fnv1a64", hex64(fnv1a64_file(path(name)))}};
        json manifest = {
            {"command", command}, {"config", resolved_config}, {"artifacts", artifacts}};
        std::ofstream f(path("manifest.json"), std::ios::binary);
        if (!f) io_error("cannot write manifest");
        f << manifest.dump(2) << "\n";
    }
};

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path, std::ios::binary);
    if (!f) io_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

LabeledDataset load_dataset(const ExperimentConfig& cfg) {
    if (!cfg.dataset_csv.empty()) {
        if (!fs::exists(cfg.dataset_csv)) missing_artifact("dataset not found: " + cfg.dataset_csv);
        return load_csv(cfg.dataset_csv);
    }
    return generate_moons(cfg.moons);
}

ModelParams load_required(const std::string& path, ModelKind kind, const std::string& what) {
    if (path.empty()) missing_artifact("config artifacts: no " + what + " checkpoint configured");
    if (!fs::exists(path)) missing_artifact(what + " checkpoint not found: " + path);
    return load_checkpoint(path, kind);
}

// ---------------- shared evaluation pieces ----------------

struct MethodModels {
    ModelParams score;
    ModelParams classifier;                // CE-trained (base/scaling) or Total (ours)
    std::vector<ModelParams> class_scores; // posterior-sm
    bool has_classifier = false;
    bool has_class_scores = false;
};

// estimated posterior and likelihood fields for a method, one class
void method_fields(GuidanceMethod method, double alpha, const MethodModels& m,
                   const ParzenOracle& oracle_at_sigma, const Eigen::MatrixXd& grid,
                   double sigma, int cls, Eigen::MatrixXd& posterior,
                   Eigen::MatrixXd& likelihood) {
    const Eigen::Index n = grid.rows();
    switch (method) {
        case GuidanceMethod::Base:
        case GuidanceMethod::Scaling:
        case GuidanceMethod::Ours: {
            Eigen::MatrixXd grad = classifier_input_grad(
                m.classifier, grid, Eigen::VectorXi::Constant(n, cls),
                Eigen::VectorXd::Constant(n, sigma));
            const double a = method == GuidanceMethod::Scaling ? alpha : 1.0;
            likelihood = a * grad;
            posterior = likelihood + score_eval(m.score, grid, sigma);
            break;
        }
        case GuidanceMethod::PosteriorSM: {
            posterior = score_eval(m.class_scores.at(static_cast<std::size_t>(cls)), grid, sigma);
            likelihood = posterior - score_eval(m.score, grid, sigma);
            break;
        }
        case GuidanceMethod::Oracle: {
            posterior = oracle_at_sigma.posterior_score_batch(grid, cls);
            likelihood = oracle_at_sigma.likelihood_score_batch(grid, cls);
            break;
        }
    }
}

json eval_method_fields(GuidanceMethod method, double alpha, const MethodModels& m,
                        const ParzenOracle& oracle, const ExperimentConfig& cfg,
                        const Eigen::MatrixXd& grid, int class_count,
                        const OutputDir* out, std::vector<std::string>* artifacts) {
    const ParzenOracle at = oracle.with_sigma(cfg.sigma_eval);
    json per_class = json::array();
    for (int cls = 0; cls < class_count; ++cls) {
        Eigen::MatrixXd post, lik;
        method_fields(method, alpha, m, at, grid, cfg.sigma_eval, cls, post, lik);
        if (!post.allFinite() || !lik.allFinite())
            throw CliError(4, "non-finite score field for method " + to_string(method));
        Eigen::MatrixXd o_post = at.posterior_score_batch(grid, cls);
        Eigen::MatrixXd o_lik = at.likelihood_score_batch(grid, cls);
        const double dp = (post - o_post).rowwise().norm().mean();
        const double dl = (lik - o_lik).rowwise().norm().mean();
        per_class.push_back({{"class", cls}, {"expDP", dp}, {"expDL", dl}});

        if (out) {
            auto dump = [&](const Eigen::MatrixXd& v, const std::string& kind) {
                ScoreField f;
                f.grid_points = grid;
                f.vectors = v;
                f.sigma = cfg.sigma_eval;
                f.label = cls;
                f.kind = kind;
                const std::string name = "field_" + to_string(method) + "_" + kind +
                                         "_class" + std::to_string(cls) + ".csv";
                save_field_csv(f, out->path(name));
                artifacts->push_back(name);
            };
            dump(post, "posterior");
            dump(lik, "likelihood");
        }
    }
    return {{"method", to_string(method)}, {"alpha", alpha}, {"sigmaEval", cfg.sigma_eval},
            {"perClass", per_class}};
}

GuidanceModels guidance_models(const MethodModels& m, const ParzenOracle* oracle) {
    GuidanceModels g;
    g.score = &m.score;
    if (m.has_classifier) g.classifier = &m.classifier;
    if (m.has_class_scores) g.class_scores = &m.class_scores;
    g.oracle = oracle;
    return g;
}

// ---------------- commands ----------------

int cmd_train_score(const ExperimentConfig& cfg, const OutputDir& out) {
    LabeledDataset data = load_dataset(cfg);
    TrainResult r = train_score_model(data, cfg.schedule, cfg.train_score, loss_weights(cfg));
    save_checkpoint(r.params, out.path("score.ckpt"));
    save_trace_csv(r.trace, out.path("trace.csv"));
    out.write_manifest("train-score", cfg.raw, {"score.ckpt", "trace.csv"});
    std::cout << "score model trained: " << cfg.train_score.iterations << " iterations, final loss "
              << (r.trace.empty() ? 0.0 : r.trace.back().loss) << "\n";
    return 0;
}

int cmd_train_classifier(const ExperimentConfig& cfg, const OutputDir& out,
                         const std::string& loss_name) {
    ClassifierLoss kind;
    if (loss_name == "ce")
        kind = ClassifierLoss::CE;
    else if (loss_name == "dlsm")
        kind = ClassifierLoss::DlsmPrime;
    else if (loss_name == "total")
        kind = ClassifierLoss::Total;
    else
        config_error("unknown classifier loss: " + loss_name + " (want ce|dlsm|total)");

    LabeledDataset data = load_dataset(cfg);
    ModelParams frozen;
    if (kind == ClassifierLoss::CE) {
        // stage-1 model not needed; train against labels only
        MlpSpec spec;
        spec.input_dim = static_cast<int>(data.dim());
        frozen = init_model(spec);
    } else {
        frozen = load_required(cfg.score_ckpt, ModelKind::Score, "score");
    }
    TrainResult r = train_classifier(data, frozen, cfg.schedule, cfg.train_classifier, kind,
                                     loss_weights(cfg));
    save_checkpoint(r.params, out.path("classifier.ckpt"));
    save_trace_csv(r.trace, out.path("trace.csv"));
    out.write_manifest("train-classifier", cfg.raw, {"classifier.ckpt", "trace.csv"});
    std::cout << "classifier trained (" << loss_name << "): " << cfg.train_classifier.iterations
              << " iterations\n";
    return 0;
}

MethodModels load_method_models(const ExperimentConfig& cfg, GuidanceMethod method,
                                int class_count) {
    MethodModels m;
    if (method != GuidanceMethod::Oracle)
        m.score = load_required(cfg.score_ckpt, ModelKind::Score, "score");
    if (method == GuidanceMethod::Base || method == GuidanceMethod::Scaling ||
        method == GuidanceMethod::Ours) {
        m.classifier = load_required(cfg.classifier_ckpt, ModelKind::Classifier, "classifier");
        m.has_classifier = true;
    }
    if (method == GuidanceMethod::PosteriorSM) {
        if (static_cast<int>(cfg.class_score_ckpts.size()) < class_count)
            missing_artifact("posterior-sm needs one class-score checkpoint per class");
        for (const std::string& p : cfg.class_score_ckpts)
            m.class_scores.push_back(load_required(p, ModelKind::Score, "class score"));
        m.has_class_scores = true;
    }
    return m;
}

int cmd_sample(const ExperimentConfig& cfg, const OutputDir& out, int n_per_class,
               int only_class) {
    LabeledDataset data = load_dataset(cfg);
    if (only_class >= data.class_count)
        config_error("--class out of range: " + std::to_string(only_class));
    MethodModels m = load_method_models(cfg, cfg.guidance.method, data.class_count);
    ParzenOracle oracle(data, 1.0);
    GuidanceModels models = guidance_models(m, &oracle);

    SamplerConfig sampler = cfg.sampler;
    const int n = n_per_class > 0 ? n_per_class : cfg.samples_per_class;
    std::vector<int> counts(static_cast<std::size_t>(data.class_count), n);
    if (only_class >= 0)
        for (int c = 0; c < data.class_count; ++c)
            if (c != only_class) counts[static_cast<std::size_t>(c)] = 0;
    LabeledDataset samples;
    try {
        samples = pc_sample_classes(sampler, cfg.guidance, models, counts,
                                    static_cast<int>(data.dim()));
    } catch (const std::runtime_error& e) {
        throw CliError(4, e.what());
    }
    save_csv(samples, out.path("samples.csv"));
    out.write_manifest("sample", cfg.raw, {"samples.csv"});
    std::cout << "wrote " << samples.size() << " samples (" << to_string(cfg.guidance.method)
              << ")\n";
    return 0;
}

int cmd_eval_fields(const ExperimentConfig& cfg, const OutputDir& out) {
    LabeledDataset data = load_dataset(cfg);
    MethodModels m = load_method_models(cfg, cfg.guidance.method, data.class_count);
    ParzenOracle oracle(data, 1.0);
    Eigen::MatrixXd grid = uniform_grid(cfg.grid);

    std::vector<std::string> artifacts;
    json report = eval_method_fields(cfg.guidance.method, cfg.guidance.alpha, m, oracle, cfg,
                                     grid, data.class_count, &out, &artifacts);
    write_json(out.path("field_errors.json"), report);
    artifacts.push_back("field_errors.json");
    out.write_manifest("eval-fields", cfg.raw, artifacts);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_eval_prdc(const std::string& real_csv, const std::string& gen_csv, int k,
                  const OutputDir& out) {
    if (!fs::exists(real_csv)) missing_artifact("real sample set not found: " + real_csv);
    if (!fs::exists(gen_csv)) missing_artifact("generated sample set not found: " + gen_csv);
    LabeledDataset real = load_csv(real_csv);
    LabeledDataset gen = load_csv(gen_csv);

    json per_class = json::array();
    for (int cls = 0; cls < real.class_count; ++cls) {
        Prdc q = prdc(subset_by_class(real, cls).points, subset_by_class(gen, cls).points, k);
        per_class.push_back({{"class", cls},
                             {"precision", q.precision},
                             {"recall", q.recall},
                             {"density", q.density},
                             {"coverage", q.coverage}});
    }
    json report = {{"k", k}, {"real", real_csv}, {"generated", gen_csv}, {"perClass", per_class}};
    write_json(out.path("prdc.json"), report);
    out.write_manifest("eval-prdc", json{{"k", k}}, {"prdc.json"});
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_table1(const ExperimentConfig& cfg, const OutputDir& out) {
    LabeledDataset data = load_dataset(cfg);
    ParzenOracle oracle(data, 1.0);
    Eigen::MatrixXd grid = uniform_grid(cfg.grid);
    LossWeights w = loss_weights(cfg);

    std::cerr << "[1/5] training score model\n";
    MethodModels m;
    m.score = train_score_model(data, cfg.schedule, cfg.train_score, w).params;
    save_checkpoint(m.score, out.path("score.ckpt"));

    std::cerr << "[2/5] training cross-entropy classifier\n";
    ModelParams ce_clf = train_classifier(data, m.score, cfg.schedule, cfg.train_classifier,
                                          ClassifierLoss::CE, w)
                             .params;
    save_checkpoint(ce_clf, out.path("classifier_ce.ckpt"));

    std::cerr << "[3/5] training combined-objective classifier\n";
    ModelParams total_clf = train_classifier(data, m.score, cfg.schedule, cfg.train_classifier,
                                             ClassifierLoss::Total, w)
                                .params;
    save_checkpoint(total_clf, out.path("classifier_total.ckpt"));

    std::cerr << "[4/5] training per-class score models\n";
    for (int cls = 0; cls < data.class_count; ++cls) {
        LabeledDataset sub = subset_by_class(data, cls);
        TrainConfig tc = cfg.train_score;
        tc.seed += 1000 + static_cast<std::uint64_t>(cls);
        m.class_scores.push_back(train_score_model(sub, cfg.schedule, tc, w).params);
        save_checkpoint(m.class_scores.back(),
                        out.path("score_class" + std::to_string(cls) + ".ckpt"));
    }
    m.has_class_scores = true;

    std::cerr << "[5/5] evaluating methods\n";
    struct Row {
        GuidanceMethod method;
        double alpha;
        const ModelParams* clf;
    };
    std::vector<Row> rows{{GuidanceMethod::Base, 1.0, &ce_clf},
                          {GuidanceMethod::Scaling, cfg.guidance.alpha, &ce_clf},
                          {GuidanceMethod::PosteriorSM, 1.0, nullptr},
                          {GuidanceMethod::Ours, 1.0, &total_clf},
                          {GuidanceMethod::Oracle, 1.0, nullptr}};

    json methods = json::array();
    std::ostringstream table;
    table << "method        class  E[D_P]   E[D_L]   prec    recall  density coverage\n";
    for (const Row& row : rows) {
        if (row.clf) {
            m.classifier = *row.clf;
            m.has_classifier = true;
        } else {
            m.has_classifier = false;
        }
        json entry =
            eval_method_fields(row.method, row.alpha, m, oracle, cfg, grid, data.class_count,
                               nullptr, nullptr);

        GuidanceConfig guidance{row.method, row.alpha, 0};
        GuidanceModels gm = guidance_models(m, &oracle);
        std::vector<int> counts(static_cast<std::size_t>(data.class_count),
                                cfg.samples_per_class);
        LabeledDataset samples;
        try {
            samples = pc_sample_classes(cfg.sampler, guidance, gm, counts,
                                        static_cast<int>(data.dim()));
        } catch (const std::runtime_error& e) {
            throw CliError(4, e.what());
        }
        const std::string sample_name = "samples_" + to_string(row.method) + ".csv";
        save_csv(samples, out.path(sample_name));

        json quality = json::array();
        for (int cls = 0; cls < data.class_count; ++cls) {
            Prdc q = prdc(subset_by_class(data, cls).points,
                          subset_by_class(samples, cls).points, cfg.k);
            quality.push_back({{"class", cls},
                               {"precision", q.precision},
                               {"recall", q.recall},
                               {"density", q.density},
                               {"coverage", q.coverage}});
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "%-13s %-6d %-8.3f %-8.3f %-7.3f %-7.3f %-7.3f %-7.3f\n",
                          to_string(row.method).c_str(), cls,
                          entry["perClass"][cls]["expDP"].get<double>(),
                          entry["perClass"][cls]["expDL"].get<double>(), q.precision, q.recall,
                          q.density, q.coverage);
            table << buf;
        }
        entry["sampleQuality"] = quality;
        methods.push_back(entry);
    }

    json report = {{"config", cfg.raw}, {"methods", methods}};
    write_json(out.path("table1.json"), report);
    {
        std::ofstream f(out.path("table1.txt"), std::ios::binary);
        if (!f) io_error("cannot write table1.txt");
        f << table.str();
    }
    std::vector<std::string> artifacts{"table1.json",
                                       "table1.txt",
                                       "score.ckpt",
                                       "classifier_ce.ckpt",
                                       "classifier_total.ckpt"};
    for (int cls = 0; cls < data.class_count; ++cls)
        artifacts.push_back("score_class" + std::to_string(cls) + ".ckpt");
    for (const Row& row : rows)
        artifacts.push_back("samples_" + to_string(row.method) + ".csv");
    out.write_manifest("table1", cfg.raw, artifacts);
    std::cout << table.str();
    return 0;
}

int cmd_ablation(const ExperimentConfig& cfg, const OutputDir& out) {
    LabeledDataset data = load_dataset(cfg);
    ParzenOracle oracle(data, 1.0);
    ModelParams score = load_required(cfg.score_ckpt, ModelKind::Score, "score");

    AblationConfig ac;
    ac.train = cfg.train_classifier;
    ac.weights = loss_weights(cfg);
    ac.eval_every = cfg.eval_every;
    ac.n_seeds = cfg.n_seeds;
    ac.sigma_eval = cfg.sigma_eval;
    ac.grid = uniform_grid(cfg.grid);

    std::vector<std::string> artifacts;
    for (ClassifierLoss kind :
         {ClassifierLoss::CE, ClassifierLoss::DlsmPrime, ClassifierLoss::Total}) {
        ac.kind = kind;
        std::cerr << "ablation: training " << cfg.n_seeds << " seeds with " << to_string(kind)
                  << " loss\n";
        AblationSeries s;
        try {
            s = ablation_trace(data, score, cfg.schedule, oracle, ac);
        } catch (const std::runtime_error& e) {
            throw CliError(4, e.what());
        }
        const std::string name = "ablation_" + to_string(kind) + ".csv";
        save_ablation_csv(s, out.path(name));
        artifacts.push_back(name);
    }
    out.write_manifest("ablation", cfg.raw, artifacts);
    std::cout << "wrote " << artifacts.size() << " ablation traces\n";
    return 0;
}

int cmd_renorm_demo(const std::vector<double>& alphas, const OutputDir& out) {
    std::vector<std::string> artifacts;
    for (double alpha : alphas) {
        RenormConfig rc;
        rc.alpha = alpha;
        RenormResult r;
        try {
            r = renormalized_posterior_1d(rc);
        } catch (const std::runtime_error& e) {
            throw CliError(4, e.what());
        }
        std::ostringstream name;
        name << "renorm_alpha_" << alpha << ".csv";
        std::ofstream f(out.path(name.str()), std::ios::binary);
        if (!f) io_error("cannot write " + name.str());
        f << "x,prior,posterior0,posterior1,renorm0,renorm1\n";
        f.precision(12);
        for (Eigen::Index i = 0; i < r.grid.size(); ++i)
            f << r.grid[i] << "," << r.prior[i] << "," << r.posterior[0][i] << ","
              << r.posterior[1][i] << "," << r.renormalized[0][i] << ","
              << r.renormalized[1][i] << "\n";
        artifacts.push_back(name.str());
    }
    out.write_manifest("renorm-demo", json{{"alphas", alphas}}, artifacts);
    std::cout << "wrote " << artifacts.size() << " renormalization curves\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional score-based generation with denoising likelihood score matching"};
    app.require_subcommand(1);

    std::string config_path, out_dir, loss_name = "total";
    std::string real_csv, gen_csv;
    std::uint64_t seed = 0;
    bool force = false;
    bool seed_given = false;
    int n_per_class = 0, k = 3, class_label = -1;
    std::vector<double> alphas{0.2, 1.0, 5.0};

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* copt = cmd->add_option("--config", config_path, "JSON experiment configuration");
        if (needs_config) copt->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "base seed folded into every stage")
            ->each([&](const std::string&) { seed_given = true; });
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_flag("--force", force, "allow writing into an existing directory");
    };

    CLI::App* ts = app.add_subcommand("train-score", "stage 1: denoising score model");
    add_common(ts, true);
    CLI::App* tc = app.add_subcommand("train-classifier", "stage 2: noise-conditional classifier");
    add_common(tc, true);
    tc->add_option("--loss", loss_name, "ce | dlsm | total");
    CLI::App* sm = app.add_subcommand("sample", "guided predictor-corrector sampling");
    add_common(sm, true);
    sm->add_option("--n", n_per_class, "samples per class (overrides config)");
    sm->add_option("--class", class_label, "restrict to one class label");
    CLI::App* ef = app.add_subcommand("eval-fields", "score-field errors vs the exact oracle");
    add_common(ef, true);
    CLI::App* ep = app.add_subcommand("eval-prdc", "k-NN precision/recall/density/coverage");
    add_common(ep, false);
    ep->add_option("--real", real_csv, "real sample CSV")->required();
    ep->add_option("--generated", gen_csv, "generated sample CSV")->required();
    ep->add_option("--k", k, "neighborhood size");
    CLI::App* t1 = app.add_subcommand("table1", "full five-method comparison");
    add_common(t1, true);
    CLI::App* ab = app.add_subcommand("ablation", "classifier-objective training ablation");
    add_common(ab, true);
    CLI::App* rd = app.add_subcommand("renorm-demo", "1-D renormalized likelihood curves");
    add_common(rd, false);
    rd->add_option("--alphas", alphas, "sharpening exponents");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg;
        if (!ep->parsed() && !rd->parsed()) cfg = load_config(config_path, seed, seed_given);
        OutputDir out(out_dir, force);

        if (ts->parsed()) return cmd_train_score(cfg, out);
        if (tc->parsed()) return cmd_train_classifier(cfg, out, loss_name);
        if (sm->parsed()) return cmd_sample(cfg, out, n_per_class, class_label);
        if (ef->parsed()) return cmd_eval_fields(cfg, out);
        if (ep->parsed()) return cmd_eval_prdc(real_csv, gen_csv, k, out);
        if (t1->parsed()) return cmd_table1(cfg, out);
        if (ab->parsed()) return cmd_ablation(cfg, out);
        if (rd->parsed()) return cmd_renorm_demo(alphas, out);
        return 2;
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 5;
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        std::cerr << "error: " << msg << "\n";
        return msg.find("non-finite") != std::string::npos ? 4 : 5;
    }
}
