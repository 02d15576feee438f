#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include <unistd.h>

#include "blend/ad/checkpoint.hpp"
#include "blend/cli.hpp"
#include "blend/config.hpp"
#include "blend/corpus.hpp"
#include "blend/experiment.hpp"
#include "blend/io.hpp"
#include "blend/metrics.hpp"

using namespace blend;
namespace fs = std::filesystem;

namespace {

const char* kCorpus = "train_utterances: 6\nvalidation_utterances: 3\nmin_length: 10\nmax_length: 20\n"
                      "classes: 5\nfamilies: 2\n";
const char* kTeacherModel = "{kind: blstm, input_dim: 31, layers: 1, hidden: 3, window: 5, classes: 5}";
const char* kStudentModel =
    "{kind: vision_cnn, input: {channels: 1, height: 31, width: 5},"
    " blocks: [{convs: [{filters: 2, kernel: [3, 3], padding: 0}], pool: [3, 1]}], fc: [8], classes: 5}";
const char* kTrain = "{batch_size: 4, batches_per_epoch: 3, schedule: {max_epochs: 2}}";

struct Result {
    int code;
    std::string out, err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("blend_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
                std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write("corpus.yaml", kCorpus);
        write("teacher.yaml", std::string("model: ") + kTeacherModel + "\ntrain: " + kTrain + "\n");
        write("student.yaml", std::string("model: ") + kStudentModel + "\ntrain: " + kTrain + "\n");
        write("student_model.yaml", kStudentModel);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    void write(const std::string& name, const std::string& text) const { write_text_file(path(name), text); }

    std::string corpus() {
        const auto r = invoke({"gen-corpus", "--config", path("corpus.yaml"), "--seed", "5", "--out", path("c.bin")});
        EXPECT_EQ(r.code, 0) << r.err;
        return path("c.bin");
    }

    // Experiment spec equivalent to the teacher/student files above.
    std::string spec(const std::string& grid) {
        const std::string text = "name: t\ncorpus_path: " + path("c.bin") + "\nstudent: " + kStudentModel +
                                 "\nteacher: " + kTeacherModel + "\nstudent_train: " + kTrain +
                                 "\nteacher_train: " + kTrain + "\n" + grid;
        write("spec.yaml", text);
        return path("spec.yaml");
    }

    fs::path dir_;
};

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_text_file(e.path().string());
    return files;
}

}  // namespace

TEST_F(Cli, GenCorpusIsDeterministicAndCarriesProvenance) {
    const auto a = path("a.bin"), b = path("b.bin"), c = path("c8.bin");
    ASSERT_EQ(invoke({"gen-corpus", "--config", path("corpus.yaml"), "--seed", "7", "--out", a}).code, 0);
    ASSERT_EQ(invoke({"gen-corpus", "--config", path("corpus.yaml"), "--seed", "7", "--out", b}).code, 0);
    ASSERT_EQ(invoke({"gen-corpus", "--config", path("corpus.yaml"), "--seed", "8", "--out", c}).code, 0);
    EXPECT_EQ(read_text_file(a), read_text_file(b));
    EXPECT_NE(read_text_file(a), read_text_file(c));
    std::string prov;
    const auto corpus = corpus::load_corpus(a, &prov);
    const auto node = yaml::parse(prov, "provenance");
    EXPECT_EQ(node["seed"].as<int>(), 7);
    EXPECT_EQ(node["command"].as<std::string>(), "gen-corpus");
    auto expected = corpus::corpus_config_from_yaml(yaml::parse(kCorpus, "corpus"));
    expected.seed = 7;
    EXPECT_EQ(yaml::emit(corpus::to_yaml(corpus.config)), yaml::emit(corpus::to_yaml(expected)));
}

TEST_F(Cli, OverridesAndEnvironmentOutputDirectory) {
    ::setenv("BLEND_OUT_DIR", path("env").c_str(), 1);
    const auto r = invoke({"gen-corpus", "--config", path("corpus.yaml"), "--override", "classes=7"});
    ::unsetenv("BLEND_OUT_DIR");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(corpus::load_corpus(path("env/corpus.bin")).classes(), 7);
}

TEST_F(Cli, ExitCodesNameTheProblem) {
    EXPECT_EQ(invoke({}).code, cli::kConfigError);
    EXPECT_EQ(invoke({"frobnicate"}).code, cli::kConfigError);
    EXPECT_EQ(invoke({"gen-corpus", "--bogus"}).code, cli::kConfigError);

    auto r = invoke({"gen-corpus", "--override", "clases=3", "--out", path("x.bin")});
    EXPECT_EQ(r.code, cli::kConfigError);
    EXPECT_NE(r.err.find("clases"), std::string::npos) << r.err;

    r = invoke({"train", "--corpus", path("missing.bin")});
    EXPECT_EQ(r.code, cli::kIoError);
    EXPECT_NE(r.err.find("missing.bin"), std::string::npos) << r.err;

    const auto c = corpus();
    r = invoke({"train", "--corpus", c, "--config", path("teacher.yaml"), "--override", "train.momentum=2"});
    EXPECT_EQ(r.code, cli::kConfigError);
    EXPECT_NE(r.err.find("train.momentum"), std::string::npos) << r.err;

    r = invoke({"train", "--corpus", c, "--override", "model=no_such_preset"});
    EXPECT_EQ(r.code, cli::kConfigError);

    r = invoke({"train", "--corpus", c, "--config", path("teacher.yaml"), "--override",
             "train.schedule.initial_lr=1e38", "--out", path("d.ckpt")});
    EXPECT_EQ(r.code, cli::kDivergence) << r.err;
    EXPECT_NE(r.err.find("epoch"), std::string::npos) << r.err;

    write("junk.ckpt", "not a checkpoint");
    r = invoke({"evaluate", "--corpus", c, "--model", path("junk.ckpt")});
    EXPECT_EQ(r.code, cli::kIoError);
    EXPECT_NE(r.err.find("junk.ckpt"), std::string::npos) << r.err;
}

TEST_F(Cli, CheckpointProvenanceRoundTrips) {
    const auto c = corpus();
    ASSERT_EQ(invoke({"train", "--corpus", c, "--config", path("teacher.yaml"), "--seed", "3", "--out", path("t.ckpt")})
                  .code,
              0);
    const auto ck = ad::load_checkpoint(path("t.ckpt"));
    const auto prov = yaml::parse(ck.provenance, "ckpt");
    EXPECT_EQ(prov["seed"].as<int>(), 3);
    EXPECT_EQ(prov["experiment"].as<std::string>(), "teacher");
    EXPECT_EQ(yaml::emit(models::to_yaml(models::model_config_from_yaml(prov["model"]))),
              yaml::emit(models::to_yaml(models::model_config_from_yaml(yaml::parse(kTeacherModel, "m")))));
    EXPECT_EQ(prov["train"]["schedule"]["max_epochs"].as<int>(), 2);
    const auto history = read_text_file(path("t.history.csv"));
    EXPECT_NE(history.find("# seed: 3"), std::string::npos);
    EXPECT_NE(history.find("epoch,lr,train_loss,val_loss,val_fer"), std::string::npos);
}

TEST_F(Cli, SinglePointSweepEqualsTrainStoreBlendEvaluate) {
    const auto c = corpus();
    const auto s = spec("lambdas: [0.5]\ncs: [3]\ngammas: []\nseeds: [1]\nself_distillation: {enabled: false}\n");
    auto r = invoke({"sweep", "--config", s, "--out", path("sweep")});
    ASSERT_EQ(r.code, 0) << r.err;

    ASSERT_EQ(invoke({"train", "--corpus", c, "--config", path("teacher.yaml"), "--seed", "1", "--out", path("t.ckpt")})
                  .code,
              0);
    r = invoke({"build-store", "--corpus", c, "--teacher", path("t.ckpt"), "--c", "3", "--tau", "0.99", "--out",
             path("s.bin")});
    ASSERT_EQ(r.code, 0) << r.err;
    r = invoke({"blend-train", "--corpus", c, "--config", path("student.yaml"), "--store", path("s.bin"), "--lambda",
             "0.5", "--seed", "1", "--out", path("st.ckpt")});
    ASSERT_EQ(r.code, 0) << r.err;
    r = invoke({"evaluate", "--corpus", c, "--model", path("st.ckpt"), "--reference", path("student_model.yaml"), "--out",
             path("m.csv")});
    ASSERT_EQ(r.code, 0) << r.err;

    const auto direct = metrics::parse_metrics_csv(read_text_file(path("m.csv")));
    const auto swept = metrics::parse_metrics_csv(read_text_file(path("sweep/lambda_c.csv")));
    ASSERT_EQ(direct.size(), 1u);
    EXPECT_EQ(direct, swept);
    EXPECT_EQ(direct[0].experiment, "blend");

    // The teacher row of the sweep matches evaluate on the teacher checkpoint.
    r = invoke({"evaluate", "--corpus", c, "--model", path("t.ckpt"), "--reference", path("student_model.yaml"), "--out",
             path("t.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto gamma = metrics::parse_metrics_csv(read_text_file(path("sweep/gamma_sweep.csv")));
    const auto teacher = metrics::parse_metrics_csv(read_text_file(path("t.csv")));
    ASSERT_EQ(teacher.size(), 1u);
    EXPECT_NE(std::find(gamma.begin(), gamma.end(), teacher[0]), gamma.end());
}

TEST_F(Cli, EnsembleEvalMatchesSweepRows) {
    const auto c = corpus();
    const auto s = spec("lambdas: [0]\ncs: [3]\ngammas: [0, 0.5, 1]\nseeds: [2]\nself_distillation: {enabled: false}\n");
    ASSERT_EQ(invoke({"sweep", "--config", s, "--out", path("sweep")}).code, 0);
    ASSERT_EQ(invoke({"train", "--corpus", c, "--config", path("teacher.yaml"), "--seed", "2", "--out", path("t.ckpt")})
                  .code,
              0);
    ASSERT_EQ(invoke({"train", "--corpus", c, "--config", path("student.yaml"), "--seed", "2", "--out", path("b.ckpt")})
                  .code,
              0);
    const auto r = invoke({"ensemble-eval", "--corpus", c, "--lstm", path("t.ckpt"), "--cnn", path("b.ckpt"), "--gammas",
                        "0,0.5,1", "--out", path("e.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    auto swept = metrics::parse_metrics_csv(read_text_file(path("sweep/gamma_sweep.csv")));
    swept.erase(std::remove_if(swept.begin(), swept.end(), [](const auto& x) { return x.experiment != "ensemble"; }),
                swept.end());
    EXPECT_EQ(metrics::parse_metrics_csv(read_text_file(path("e.csv"))), swept);
}

TEST_F(Cli, ReportMatchesRecomputationFromPointFiles) {
    corpus();
    const auto s = spec("lambdas: [0, 0.5]\ncs: [3, 1]\ngammas: [0, 0.5, 1]\nseeds: [1, 2]\n"
                        "self_distillation: {enabled: true, lambda: 0.5, c: 3}\n");
    ASSERT_EQ(invoke({"sweep", "--config", s, "--out", path("sweep")}).code, 0);
    const auto r = invoke({"report", path("sweep")});
    ASSERT_EQ(r.code, 0) << r.err;

    // Independent recomputation: group the per-point files by cell.
    std::map<std::string, std::vector<double>> fer, wer;
    for (const auto& e : fs::directory_iterator(path("sweep/points"))) {
        for (const auto& row : metrics::parse_metrics_csv(read_text_file(e.path().string()))) {
            std::ostringstream key;
            key << row.experiment << '|' << row.lambda << '|' << row.c << '|' << row.gamma;
            fer[key.str()].push_back(row.fer);
            wer[key.str()].push_back(row.wer_proxy);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto best = [&](const std::string& prefix, bool positive_lambda) {
        double b = 1e9;
        for (const auto& [k, v] : fer)
            if (k.rfind(prefix + "|", 0) == 0 && (!positive_lambda || k.find("|0|") != prefix.size()))
                b = std::min(b, mean(v));
        return b;
    };
    std::map<std::string, double> report;
    std::istringstream in(read_text_file(path("sweep/report.csv")));
    std::string line;
    std::getline(in, line);
    while (line.rfind('#', 0) == 0) std::getline(in, line);
    EXPECT_EQ(line, "model,setting,FER,WER_proxy,parameters,cost_factor");
    while (std::getline(in, line)) {
        std::istringstream f(line);
        std::string model, setting, fer_s;
        std::getline(f, model, ',');
        std::getline(f, setting, ',');
        std::getline(f, fer_s, ',');
        report[model] = std::stod(fer_s);
    }
    ASSERT_EQ(report.size(), 5u);
    EXPECT_NEAR(report["CNN"], mean(fer["baseline|0|0|0"]), 1e-9);
    EXPECT_NEAR(report["BLSTM"], mean(fer["teacher|0|0|0"]), 1e-9);
    EXPECT_NEAR(report["BLSTM+CNN ensemble"], best("ensemble", false), 1e-9);
    EXPECT_NEAR(report["blended CNN"], best("blend", true), 1e-9);
    EXPECT_NEAR(report["self-distilled CNN"], mean(fer["self|0.5|3|0"]), 1e-9);
    EXPECT_EQ(fer["baseline|0|0|0"].size(), 2u);
}

TEST_F(Cli, RerunsProduceIdenticalArtifacts) {
    corpus();
    const auto s = spec("lambdas: [0, 0.5]\ncs: [3]\ngammas: [0, 0.5, 1]\nseeds: [1]\n"
                        "self_distillation: {enabled: true, lambda: 0.5, c: 3}\n");
    ASSERT_EQ(invoke({"sweep", "--config", s, "--out", path("a")}).code, 0);
    ASSERT_EQ(invoke({"sweep", "--config", s, "--out", path("b"), "--jobs", "2"}).code, 0);
    ASSERT_EQ(invoke({"report", path("a")}).code, 0);
    ASSERT_EQ(invoke({"report", path("b")}).code, 0);
    auto a = tree(path("a")), b = tree(path("b"));
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [name, bytes] : a) EXPECT_EQ(bytes, b[name]) << name;
}
