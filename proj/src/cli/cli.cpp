#include "blend/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>

#include "blend/ad/checkpoint.hpp"
#include "blend/ad/tensor.hpp"
#include "blend/blending.hpp"
#include "blend/config.hpp"
#include "blend/corpus.hpp"
#include "blend/experiment.hpp"
#include "blend/io.hpp"
#include "blend/metrics.hpp"
#include "blend/softlabels.hpp"
#include "blend/trainer.hpp"

namespace blend::cli {
namespace {

namespace fs = std::filesystem;
using Provenance = std::vector<std::pair<std::string, std::string>>;
using models::Model;

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed = true) {
    cmd->add_option("--config", c.config, "YAML configuration file");
    cmd->add_option("--override", c.overrides, "key.path=value applied on top of --config")->take_all();
    if (with_seed) cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", c.out, "output path");
}

YAML::Node load_root(const Common& c) {
    YAML::Node root = c.config.empty() ? YAML::Node(YAML::NodeType::Map) : yaml::load_file(c.config);
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw ConfigError(c.config, "expected a mapping at the top level");
    for (const auto& o : c.overrides) yaml::apply_override(root, o);
    return root;
}

std::string default_dir() {
    const char* env = std::getenv("BLEND_OUT_DIR");
    return env && *env ? env : ".";
}

std::string output_path(const Common& c, const std::string& name) {
    return c.out.empty() ? (fs::path(default_dir()) / name).string() : c.out;
}

std::string sibling(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::string flow(const YAML::Node& node) {
    YAML::Emitter e;
    e << YAML::Flow << node;
    return e.c_str();
}

models::ModelConfig model_from_node(const YAML::Node& node, int classes, const std::string& fallback) {
    if (!node) return models::model_config_preset(fallback, classes);
    if (node.IsScalar()) return models::model_config_preset(node.as<std::string>(), classes);
    return models::model_config_from_yaml(node, "model");
}

struct Loaded {
    std::unique_ptr<Model<float>> model;
    YAML::Node provenance;
};

Loaded load_model(const std::string& path) {
    auto ck = ad::load_checkpoint(path);
    YAML::Node prov;
    try {
        prov = YAML::Load(ck.provenance);
    } catch (const YAML::Exception&) {
        throw IoError(path + ": checkpoint provenance is not YAML");
    }
    if (!prov.IsMap() || !prov["model"]) throw IoError(path + ": checkpoint provenance lacks the model config");
    const auto cfg = models::model_config_from_yaml(prov["model"], path + ":model");
    if (models::config_kind(cfg) != ck.kind) throw IoError(path + ": model kind disagrees with provenance");
    try {
        return {models::make_model<float>(cfg, ck.params), prov};
    } catch (const std::invalid_argument& e) {
        throw IoError(path + ": " + e.what());
    }
}

template <typename V>
V prov_get(const YAML::Node& prov, const std::string& key, V fallback) {
    return prov[key] ? prov[key].as<V>() : fallback;
}

void check_classes(const models::ModelConfig& cfg, const corpus::Corpus& corpus, const std::string& what) {
    if (models::config_classes(cfg) != corpus.classes())
        throw ConfigError(what + ".classes", std::to_string(models::config_classes(cfg)) + " classes, corpus has " +
                                                 std::to_string(corpus.classes()));
}

int gen_corpus(const Common& c, std::ostream& out) {
    auto root = load_root(c);
    auto cfg = corpus::corpus_config_from_yaml(root, "corpus");
    if (c.seed) cfg.seed = *c.seed;
    cfg.validate();
    const auto corpus = corpus::generate_corpus(cfg);
    YAML::Node prov;
    prov["command"] = "gen-corpus";
    prov["seed"] = cfg.seed;
    prov["corpus"] = corpus::to_yaml(cfg);
    const auto path = output_path(c, "corpus.bin");
    corpus::save_corpus(path, corpus, yaml::emit(prov));
    out << "wrote " << path << ": " << corpus.train.size() << " training and " << corpus.validation.size()
        << " validation utterances, " << corpus.train_frames() << " training frames\n";
    return kOk;
}

struct TrainArgs {
    std::string corpus;
    std::string model;
    std::string store;
    std::optional<double> lambda;
    std::string experiment;
};

int train_cmd(const Common& c, const TrainArgs& a, bool blend, std::ostream& out) {
    auto root = load_root(c);
    yaml::check_keys(root, {"model", "train"}, "");
    if (!a.model.empty()) root["model"] = a.model;
    std::string corpus_prov;
    const auto corpus = corpus::load_corpus(a.corpus, &corpus_prov);
    const auto model_cfg = model_from_node(root["model"], corpus.classes(), "vision_desk");
    check_classes(model_cfg, corpus, "model");
    const bool lstm = models::config_kind(model_cfg) == models::ModelKind::Blstm;
    auto tc = trainer::train_config_from_yaml(root["train"],
                                              lstm ? trainer::TrainConfig::lstm_desk() : trainer::TrainConfig::cnn_desk(),
                                              "train");
    if (c.seed) tc.seed = *c.seed;
    if (a.lambda) tc.lambda = *a.lambda;
    tc.jobs = c.jobs;
    tc.validate();

    std::optional<softlabels::SoftLabelStore> store;
    YAML::Node store_prov;
    std::string experiment = a.experiment;
    int cap = 0;
    if (blend) {
        std::string text;
        store = softlabels::load_store(a.store, &text);
        cap = store->c_max();
        try {
            store_prov = YAML::Load(text);
        } catch (const YAML::Exception&) {
        }
        if (experiment.empty()) {
            // A store distilled only from CNNs makes this self-distillation.
            bool all_cnn = store_prov["teacher_kinds"] && store_prov["teacher_kinds"].size() > 0;
            for (const auto& k : store_prov["teacher_kinds"]) all_cnn = all_cnn && k.as<std::string>() != "blstm";
            experiment = all_cnn ? experiment::kSelf : experiment::kBlend;
        }
    } else if (experiment.empty()) {
        experiment = lstm ? experiment::kTeacher : experiment::kBaseline;
    }

    trainer::TrainResult result;
    auto model = experiment::train_fresh(model_cfg, corpus, store ? &*store : nullptr, tc, &result);

    YAML::Node prov;
    prov["command"] = blend ? "blend-train" : "train";
    prov["experiment"] = experiment;
    prov["seed"] = tc.seed;
    prov["lambda"] = tc.lambda;
    prov["c"] = cap;
    prov["corpus"] = a.corpus;
    if (blend) prov["store"] = a.store;
    prov["model"] = models::to_yaml(model_cfg);
    prov["train"] = trainer::to_yaml(tc);
    experiment::MetricsRow id{experiment, tc.seed, tc.lambda, cap};
    const auto path = output_path(c, experiment::point_id(id) + ".ckpt");
    ad::save_checkpoint(path, ad::Checkpoint{model->kind(), model->params(), yaml::emit(prov)});
    const auto history = sibling(path, ".history.csv");
    write_text_file(history, trainer::history_csv(result, {{"command", prov["command"].as<std::string>()},
                                                          {"seed", std::to_string(tc.seed)},
                                                          {"config", flow(prov)}}));
    out << "wrote " << path << " (best epoch " << result.best_epoch << ", validation FER " << result.best_val_fer
        << ")\nwrote " << history << "\n";
    return kOk;
}

int build_store_cmd(const Common& c, const std::string& corpus_path, const std::vector<std::string>& teacher_paths,
                    std::vector<double> weights, std::optional<int> cap_flag, std::optional<double> tau_flag,
                    std::ostream& out) {
    auto root = load_root(c);
    yaml::check_keys(root, {"c", "tau", "weights"}, "");
    int cap = yaml::get_or(root, "c", "", 10);
    double tau = yaml::get_or(root, "tau", "", 0.99);
    if (weights.empty() && root["weights"]) weights = root["weights"].as<std::vector<double>>();
    if (cap_flag) cap = *cap_flag;
    if (tau_flag) tau = *tau_flag;
    if (cap < 1) throw ConfigError("c", "must be positive");
    if (!(tau > 0 && tau <= 1)) throw ConfigError("tau", "must lie in (0,1]");
    if (weights.empty()) weights.assign(teacher_paths.size(), 1.0 / static_cast<double>(teacher_paths.size()));
    if (weights.size() != teacher_paths.size()) throw ConfigError("weights", "need one weight per teacher");

    const auto corpus = corpus::load_corpus(corpus_path);
    std::vector<Loaded> teachers;
    std::vector<Model<float>*> ptrs;
    YAML::Node prov;
    prov["command"] = "build-store";
    prov["corpus"] = corpus_path;
    prov["c"] = cap;
    prov["tau"] = tau;
    prov["weights"] = weights;
    for (const auto& p : teacher_paths) {
        teachers.push_back(load_model(p));
        check_classes(teachers.back().model->config(), corpus, p);
        ptrs.push_back(teachers.back().model.get());
        prov["teachers"].push_back(p);
        prov["teacher_kinds"].push_back(ad::model_kind_name(teachers.back().model->kind()));
        prov["teacher_seeds"].push_back(prov_get<std::uint64_t>(teachers.back().provenance, "seed", 0));
    }
    try {
        blending::ensemble_posterior(std::vector<models::Posteriors>(weights.size(), models::Posteriors{1.0}), weights);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("weights", e.what());
    }
    const auto store = softlabels::build_store(ptrs, weights, corpus, cap, tau, c.jobs);
    const auto path = output_path(c, "store_c" + std::to_string(cap) + ".bin");
    softlabels::save_store(path, store, yaml::emit(prov));
    const auto stats = softlabels::store_stats(store);
    out << "wrote " << path << ": " << stats.records << " records\n"
        << softlabels::truncation_table(std::span<const softlabels::StoreStats>(&stats, 1));
    return kOk;
}

std::vector<double> default_gammas() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
    return g;
}

int ensemble_cmd(const Common& c, const std::string& corpus_path, const std::string& lstm_path,
                 const std::string& cnn_path, std::vector<double> gammas, std::ostream& out) {
    auto root = load_root(c);
    yaml::check_keys(root, {"gammas", "prior_smoothing"}, "");
    if (gammas.empty()) gammas = root["gammas"] ? root["gammas"].as<std::vector<double>>() : default_gammas();
    const double smoothing = yaml::get_or(root, "prior_smoothing", "", 1.0);
    for (double g : gammas)
        if (!(g >= 0 && g <= 1)) throw ConfigError("gammas", "entries must lie in [0,1]");
    const auto corpus = corpus::load_corpus(corpus_path);
    auto lstm = load_model(lstm_path);
    auto cnn = load_model(cnn_path);
    check_classes(lstm.model->config(), corpus, lstm_path);
    check_classes(cnn.model->config(), corpus, cnn_path);
    const auto labels = metrics::frame_labels(corpus.validation);
    const auto priors = corpus::compute_priors(corpus.train, corpus.classes(), smoothing);
    const auto lp = metrics::frame_posteriors(*lstm.model, corpus.validation, c.jobs);
    const auto cp = metrics::frame_posteriors(*cnn.model, corpus.validation, c.jobs);
    const double tc = experiment::mac_factor(lstm.model->config(), cnn.model->config());
    const auto seed = c.seed ? *c.seed : prov_get<std::uint64_t>(lstm.provenance, "seed", 0);
    std::vector<metrics::MetricsRow> rows;
    for (double g : gammas) {
        std::vector<models::Posteriors> mix(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) mix[i] = blending::ensemble_posterior(lp[i], cp[i], g);
        rows.push_back({experiment::kEnsemble, seed, 0.0, 0, g,
                        metrics::frame_error_rate(std::span<const models::Posteriors>(mix), labels),
                        metrics::wer_proxy(mix, corpus.validation, priors),
                        g == 0.0 ? 1.0 : g == 1.0 ? tc : 1.0 + tc});
    }
    const auto path = output_path(c, "ensemble.csv");
    const auto text = metrics::metrics_csv(
        rows, {{"command", "ensemble-eval"}, {"seed", std::to_string(seed)}, {"corpus", corpus_path},
               {"lstm", lstm_path}, {"cnn", cnn_path}, {"prior_smoothing", std::to_string(smoothing)}});
    write_text_file(path, text);
    out << text;
    return kOk;
}

int evaluate_cmd(const Common& c, const std::string& corpus_path, const std::vector<std::string>& model_paths,
                 const std::string& reference, std::ostream& out) {
    auto root = load_root(c);
    yaml::check_keys(root, {"prior_smoothing"}, "");
    const double smoothing = yaml::get_or(root, "prior_smoothing", "", 1.0);
    const auto corpus = corpus::load_corpus(corpus_path);
    const auto ref = models::model_config_preset(reference, corpus.classes());
    std::vector<metrics::MetricsRow> rows;
    Provenance prov{{"command", "evaluate"}, {"corpus", corpus_path}, {"reference", reference},
                    {"prior_smoothing", std::to_string(smoothing)}};
    for (const auto& p : model_paths) {
        auto m = load_model(p);
        check_classes(m.model->config(), corpus, p);
        const auto seed = c.seed ? *c.seed : prov_get<std::uint64_t>(m.provenance, "seed", 0);
        rows.push_back(experiment::evaluate_point(
            *m.model, corpus, prov_get<std::string>(m.provenance, "experiment", "model"), seed,
            prov_get<double>(m.provenance, "lambda", 0.0), prov_get<int>(m.provenance, "c", 0),
            experiment::mac_factor(m.model->config(), ref), smoothing, c.jobs));
        prov.emplace_back("model", p);
        prov.emplace_back("seed", std::to_string(seed));
    }
    const auto path = output_path(c, "metrics.csv");
    const auto text = metrics::metrics_csv(rows, prov);
    write_text_file(path, text);
    out << text;
    return kOk;
}

std::vector<metrics::MetricsRow> select(const std::vector<metrics::MetricsRow>& rows,
                                        const std::function<bool(const metrics::MetricsRow&)>& keep) {
    std::vector<metrics::MetricsRow> out;
    std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), keep);
    return out;
}

int sweep_cmd(const Common& c, std::ostream& out, std::ostream& err) {
    auto root = load_root(c);
    if (c.seed) root["seeds"] = std::vector<std::uint64_t>{*c.seed};
    const auto spec = experiment::spec_from_yaml(root);
    const auto dir = c.out.empty() ? (fs::path(default_dir()) / ("sweep-" + spec.name)).string() : c.out;
    experiment::RunOptions opts;
    opts.out_dir = dir;
    opts.jobs = c.jobs;
    opts.on_progress = [&](const experiment::Progress& p) { err << p.stage << ' ' << p.point << '\n'; };
    const auto result = experiment::run_experiment(spec, opts);
    const auto& rows = result.rows;
    const Provenance prov{{"experiment", spec.name}, {"config", flow(experiment::to_yaml(spec))}};
    auto is = [](const char* e) { return [e](const metrics::MetricsRow& r) { return r.experiment == e; }; };
    const fs::path d(dir);
    write_text_file((d / "gamma_sweep.csv").string(),
                    metrics::metrics_csv(select(rows,
                                                [&](const auto& r) {
                                                    return is(experiment::kEnsemble)(r) ||
                                                           is(experiment::kBaseline)(r) || is(experiment::kTeacher)(r);
                                                }),
                                         prov));
    write_text_file((d / "lambda_c.csv").string(), metrics::metrics_csv(select(rows, is(experiment::kBlend)), prov));
    write_text_file((d / "self_distillation.csv").string(),
                    metrics::metrics_csv(select(rows,
                                                [&](const auto& r) {
                                                    return is(experiment::kBaseline)(r) || is(experiment::kSelf)(r) ||
                                                           (is(experiment::kBlend)(r) && r.lambda == spec.self.lambda &&
                                                            r.c == spec.self.c);
                                                }),
                                         prov));
    write_text_file((d / "aggregate.csv").string(), experiment::aggregate_csv(experiment::aggregate(rows), prov));
    const auto trends = experiment::trend_summary(experiment::assess_trends(spec, rows));
    write_text_file((d / "trends.txt").string(), trends);
    out << "wrote " << dir << "\n" << trends;
    return kOk;
}

int report_cmd(const Common& c, const std::string& dir, std::ostream& out) {
    const fs::path d(dir);
    const auto spec = experiment::spec_from_yaml(yaml::load_file((d / "spec.yaml").string()));
    std::vector<fs::path> files;
    if (!fs::is_directory(d / "points")) throw IoError((d / "points").string() + ": no per-point results");
    for (const auto& e : fs::directory_iterator(d / "points"))
        if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<metrics::MetricsRow> rows;
    for (const auto& f : files) {
        try {
            const auto r = metrics::parse_metrics_csv(read_text_file(f.string()));
            rows.insert(rows.end(), r.begin(), r.end());
        } catch (const std::invalid_argument& e) {
            throw IoError(f.string() + ": " + e.what());
        }
    }
    if (rows.empty()) throw IoError((d / "points").string() + ": no per-point results");
    const Provenance prov{{"command", "report"}, {"experiment", spec.name},
                          {"config", flow(experiment::to_yaml(spec))}};
    const auto text = experiment::summary_csv(experiment::summary_report(spec, rows), prov);
    const auto path = c.out.empty() ? (d / "report.csv").string() : c.out;
    write_text_file(path, text);
    out << text;
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Model blending: corpus generation, training, soft-label stores and sweeps", "blend"};
    app.require_subcommand(1, 1);

    Common common;
    TrainArgs targs;
    std::string corpus_path, lstm_path, cnn_path, sweep_dir, reference = "vision_desk";
    std::vector<std::string> teacher_paths, model_paths;
    std::vector<double> weights, gammas;
    std::optional<int> cap;
    std::optional<double> tau;

    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    add_common(gen, common);

    auto* train = app.add_subcommand("train", "train a model on hard labels");
    add_common(train, common);
    train->add_option("--corpus", targs.corpus, "corpus file")->required();
    train->add_option("--model", targs.model, "preset name or model YAML");
    train->add_option("--experiment", targs.experiment, "experiment id recorded in the checkpoint");

    auto* blend = app.add_subcommand("blend-train", "train a student on the blended objective");
    add_common(blend, common);
    blend->add_option("--corpus", targs.corpus, "corpus file")->required();
    blend->add_option("--store", targs.store, "soft-label store")->required();
    blend->add_option("--model", targs.model, "preset name or model YAML");
    blend->add_option("--lambda", targs.lambda, "soft-label weight in [0,1]");
    blend->add_option("--experiment", targs.experiment, "experiment id recorded in the checkpoint");

    auto* store = app.add_subcommand("build-store", "run teachers over the training frames and truncate");
    add_common(store, common, false);
    store->add_option("--corpus", corpus_path, "corpus file")->required();
    store->add_option("--teacher", teacher_paths, "teacher checkpoint (repeatable)")->required();
    store->add_option("--weights", weights, "teacher mixing weights")->delimiter(',');
    store->add_option("--c", cap, "maximum classes kept per frame");
    store->add_option("--tau", tau, "mass threshold");

    auto* ens = app.add_subcommand("ensemble-eval", "posterior-averaging ensemble over a gamma grid");
    add_common(ens, common);
    ens->add_option("--corpus", corpus_path, "corpus file")->required();
    ens->add_option("--lstm", lstm_path, "BLSTM checkpoint")->required();
    ens->add_option("--cnn", cnn_path, "CNN checkpoint")->required();
    ens->add_option("--gammas", gammas, "BLSTM weights")->delimiter(',');

    auto* eval = app.add_subcommand("evaluate", "FER and WER proxy of trained models");
    add_common(eval, common);
    eval->add_option("--corpus", corpus_path, "corpus file")->required();
    eval->add_option("--model", model_paths, "checkpoint (repeatable)")->required();
    eval->add_option("--reference", reference, "preset or model YAML the cost factor is relative to");

    auto* sweep = app.add_subcommand("sweep", "run an experiment grid");
    add_common(sweep, common);

    auto* report = app.add_subcommand("report", "summarize a finished sweep");
    add_common(report, common, false);
    report->add_option("dir", sweep_dir, "sweep output directory")->required();

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*gen) return gen_corpus(common, out);
        if (*train) return train_cmd(common, targs, false, out);
        if (*blend) return train_cmd(common, targs, true, out);
        if (*store) return build_store_cmd(common, corpus_path, teacher_paths, weights, cap, tau, out);
        if (*ens) return ensemble_cmd(common, corpus_path, lstm_path, cnn_path, gammas, out);
        if (*eval) return evaluate_cmd(common, corpus_path, model_paths, reference, out);
        if (*sweep) return sweep_cmd(common, out, err);
        if (*report) return report_cmd(common, sweep_dir, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const trainer::DivergenceError& e) {
        err << "diverged: " << e.what() << '\n';
        return kDivergence;
    } catch (const ad::NumericError& e) {
        err << "diverged: " << e.what() << '\n';
        return kDivergence;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << '\n';
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        err << "i/o error: " << e.what() << '\n';
        return kIoError;
    } catch (const YAML::Exception& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        err << "invalid input: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}

}  // namespace blend::cli
