#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "blend/corpus.hpp"
#include "blend/metrics.hpp"
#include "blend/models/config.hpp"
#include "blend/trainer.hpp"

namespace blend::experiment {

using metrics::MetricsRow;

// Experiment ids used in MetricsRow::experiment.
inline constexpr const char* kBaseline = "baseline";  // CNN, hard labels
inline constexpr const char* kTeacher = "teacher";    // BLSTM, hard labels
inline constexpr const char* kEnsemble = "ensemble";  // gamma * BLSTM + (1 - gamma) * CNN
inline constexpr const char* kBlend = "blend";        // CNN student of the BLSTM
inline constexpr const char* kSelf = "self";          // CNN student of the baseline CNN

struct SelfDistillation {
    bool enabled = true;
    double lambda = 0.5;
    int c = 10;
};

struct ExperimentSpec {
    std::string name = "desk";
    /// Used when corpus_path is empty.
    corpus::CorpusConfig corpus;
    std::string corpus_path;
    models::ModelConfig student = models::CnnConfig::vision_desk();
    models::ModelConfig teacher = models::BlstmConfig::desk();
    trainer::TrainConfig student_train = trainer::TrainConfig::cnn_desk();
    trainer::TrainConfig teacher_train = trainer::TrainConfig::lstm_desk();
    /// Student grid. lambda = 0 ignores the store, so those points share the
    /// baseline run.
    std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75};
    std::vector<int> cs{10, 1};
    std::vector<double> gammas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    double tau = 0.99;
    SelfDistillation self;
    /// Additive smoothing of the class priors used by the decoding proxy.
    double prior_smoothing = 1.0;
    /// Optional prebuilt teacher store; replaces the per-seed BLSTM store.
    std::string teacher_store;

    void validate() const;
};

YAML::Node to_yaml(const ExperimentSpec& spec);
/// Missing keys keep the defaults. Model entries accept a preset name or a
/// mapping.
ExperimentSpec spec_from_yaml(const YAML::Node& node);

struct Progress {
    std::string stage;  // "train", "store", "evaluate", ...
    std::string point;  // e.g. "blend s1 l0.5 C10"
};
using ProgressCallback = std::function<void(const Progress&)>;

struct RunOptions {
    /// Directory for per-point CSVs, checkpoints and histories. Empty keeps
    /// everything in memory.
    std::string out_dir;
    /// Independent training runs executed concurrently.
    int jobs = 1;
    ProgressCallback on_progress;
};

struct ExperimentResult {
    /// Baselines and teachers first, then ensemble, blend and self rows;
    /// each group seed-major in grid order.
    std::vector<MetricsRow> rows;
    std::uint64_t student_parameters = 0;
    std::uint64_t teacher_parameters = 0;
};

/// Trains and evaluates every grid point for every seed. Each finished point
/// is written atomically to <out_dir>/points/<id>.csv before the run moves on.
ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// File stem of a point, e.g. "blend_s2_l0.25_c10".
std::string point_id(const MetricsRow& row);

/// Fresh model initialized from derive_seed(cfg.seed, "init"), then trained.
/// Every training run in the project goes through here.
std::unique_ptr<models::Model<float>> train_fresh(const models::ModelConfig& model, const corpus::Corpus& corpus,
                                                  const softlabels::SoftLabelStore* store,
                                                  const trainer::TrainConfig& cfg,
                                                  trainer::TrainResult* result = nullptr);

/// MAC count relative to `reference`.
double mac_factor(const models::ModelConfig& model, const models::ModelConfig& reference);

/// Everything needed to evaluate one trained model like the runner does.
MetricsRow evaluate_point(models::Model<float>& model, const corpus::Corpus& corpus, const std::string& experiment,
                          std::uint64_t seed, double lambda, int c, double cost_factor, double prior_smoothing,
                          int jobs = 1);

/// Mean and sample standard deviation over seeds for one
/// (experiment, lambda, C, gamma) cell.
struct AggregateRow {
    std::string experiment;
    double lambda = 0.0;
    int c = 0;
    double gamma = 0.0;
    std::size_t seeds = 0;
    double fer_mean = 0.0;
    double fer_std = 0.0;
    double wer_mean = 0.0;
    double cost_factor = 1.0;
};

/// Cells appear in order of first occurrence.
std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows);
std::string aggregate_csv(const std::vector<AggregateRow>& rows,
                          const std::vector<std::pair<std::string, std::string>>& provenance);

/// Qualitative trend checks over a finished grid.
struct TrendReport {
    int seeds = 0;
    // Ensemble: best gamma never worse than the best member; strictly better
    // in `ensemble_strict_seeds` seeds.
    bool ensemble_never_worse = false;
    int ensemble_strict_seeds = 0;
    // Students at C = reference_c beat the baseline, per lambda > 0.
    std::vector<std::pair<double, int>> blend_wins;  // (lambda, seeds won)
    // Self-distillation.
    int self_wins = 0;
    double self_margin = 0.0;   // mean baseline FER - self FER
    double blend_margin = 0.0;  // same for the BLSTM student with the self recipe's lambda and C
    // Mean student FER per C at the reference lambda, C descending.
    std::vector<std::pair<int, double>> fer_by_c;

    bool ensemble_ok() const;
    bool blend_ok() const;
    bool self_ok() const;
    bool truncation_ok() const;
};

TrendReport assess_trends(const ExperimentSpec& spec, const std::vector<MetricsRow>& rows);
std::string trend_summary(const TrendReport& report);

/// Table-shaped summary: one line per model family with mean FER,
/// WER-proxy, parameter count and MAC factor relative to the student CNN.
struct ReportLine {
    std::string model;
    std::string setting;
    double fer = 0.0;
    double wer_proxy = 0.0;
    std::uint64_t parameters = 0;
    double cost_factor = 1.0;
};

std::vector<ReportLine> summary_report(const ExperimentSpec& spec, const std::vector<MetricsRow>& rows);
std::string summary_csv(const std::vector<ReportLine>& lines,
                        const std::vector<std::pair<std::string, std::string>>& provenance);

}  // namespace blend::experiment
