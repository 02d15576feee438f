#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "blend/config.hpp"
#include "blend/softlabels.hpp"
#include "blend/trainer.hpp"

using namespace blend;
using namespace blend::trainer;

namespace {

ad::ParamSet<double> bowl_params(const std::vector<double>& start) {
    ad::ParamSet<double> ps;
    ps.add("theta", {start.size()});
    for (std::size_t i = 0; i < start.size(); ++i) ps[0].value[i] = start[i];
    return ps;
}

// Hand simulation of the schedule: returns (lr used, decayed, rollback, stop)
// per epoch for a scripted metric sequence.
struct Step {
    double lr;
    bool decayed;
    bool rollback;
    bool stop;
    int best;
};

std::vector<Step> simulate(const ScheduleConfig& c, const std::vector<double>& metrics) {
    std::vector<Step> out;
    double lr = c.initial_lr, best = INFINITY;
    int bad = 0, best_epoch = 0;
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        Step s{lr, false, false, false, 0};
        if (metrics[i] < best) {
            best = metrics[i];
            best_epoch = static_cast<int>(i) + 1;
            bad = 0;
        } else if (++bad == c.patience) {
            lr *= c.decay;
            bad = 0;
            s.decayed = true;
            s.rollback = c.rollback;
        }
        s.best = best_epoch;
        s.stop = lr < c.min_lr || (c.max_epochs > 0 && static_cast<int>(i) + 1 >= c.max_epochs);
        out.push_back(s);
        if (s.stop) break;
    }
    return out;
}

corpus::Corpus tiny_corpus(std::uint64_t seed = 2) {
    corpus::CorpusConfig c;
    c.train_utterances = 12;
    c.validation_utterances = 3;
    c.min_length = 10;
    c.max_length = 30;
    c.classes = 5;
    c.families = 2;
    c.noise = 0.3;
    c.seed = seed;
    return corpus::generate_corpus(c);
}

std::unique_ptr<models::Model<float>> tiny_model(std::uint64_t seed = 1) {
    auto m = models::make_model<float>(models::BlstmConfig{31, 1, 4, 5, 5});
    m->initialize(seed);
    return m;
}

TrainConfig quick_config(int epochs) {
    TrainConfig c;
    c.batch_size = 4;
    c.batches_per_epoch = 5;
    c.optimizer = Optimizer::Momentum;
    c.schedule = {0.05, 0.5, 0, 1e-6, false, epochs, Monitor::ValidationLoss};
    return c;
}

bool same_values(const ad::ParamSet<float>& a, const ad::ParamSet<float>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].value.size(); ++k)
            if (a[i].value[k] != b[i].value[k]) return false;
    return true;
}

}  // namespace

TEST(Sgd, ZeroMomentumIsPlainSgd) {
    for (auto kind : {Optimizer::Nesterov, Optimizer::Momentum}) {
        auto ps = bowl_params({1.0, -2.0});
        auto v = make_velocity(ps);
        ps[0].grad[0] = 0.5;
        ps[0].grad[1] = -4.0;
        sgd_step(ps, v, 0.1, 0.0, kind);
        EXPECT_DOUBLE_EQ(ps[0].value[0], 1.0 - 0.05);
        EXPECT_DOUBLE_EQ(ps[0].value[1], -2.0 + 0.4);
    }
}

TEST(Sgd, ZeroGradientNeverMoves) {
    auto ps = bowl_params({3.0});
    auto v = make_velocity(ps);
    for (int i = 0; i < 10; ++i) sgd_nesterov_step(ps, v, 0.1, 0.9);
    EXPECT_EQ(ps[0].value[0], 3.0);
}

// Classical lookahead form on f(x) = a x^2 / 2:
//   v' = mu v - lr a (x + mu v),  x' = x + v'.
// The stored parameter is the lookahead point x + mu v.
TEST(Sgd, NesterovQuadraticBowlMatchesScalarRecurrence) {
    const std::vector<double> a{1.0, 4.0, 0.5};
    const std::vector<double> start{2.0, -1.0, 5.0};
    const double lr = 0.3, mu = 0.5;
    auto ps = bowl_params(start);
    auto vel = make_velocity(ps);
    std::vector<double> x = start, v(3, 0.0);
    for (int step = 0; step < 100; ++step) {
        for (int i = 0; i < 3; ++i) ps[0].grad[i] = a[i] * ps[0].value[i];
        sgd_nesterov_step(ps, vel, lr, mu);
        for (int i = 0; i < 3; ++i) {
            v[i] = mu * v[i] - lr * a[i] * (x[i] + mu * v[i]);
            x[i] += v[i];
            ASSERT_NEAR(ps[0].value[i], x[i] + mu * v[i], 1e-12) << "step " << step;
        }
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(ps[0].value[i], 0.0, 1e-6);
}

TEST(Sgd, MomentumMatchesHeavyBallRecurrence) {
    auto ps = bowl_params({1.5});
    auto vel = make_velocity(ps);
    double x = 1.5, v = 0;
    for (int step = 0; step < 50; ++step) {
        ps[0].grad[0] = 2.0 * ps[0].value[0];
        sgd_step(ps, vel, 0.05, 0.8, Optimizer::Momentum);
        v = 0.8 * v - 0.05 * 2.0 * x;
        x += v;
        ASSERT_NEAR(ps[0].value[0], x, 1e-12);
    }
}

TEST(Sgd, InvalidArgumentsThrow) {
    auto ps = bowl_params({1.0});
    auto v = make_velocity(ps);
    EXPECT_THROW(sgd_nesterov_step(ps, v, 0.0, 0.9), std::invalid_argument);
    EXPECT_THROW(sgd_nesterov_step(ps, v, 0.1, 1.0), std::invalid_argument);
    std::vector<ad::Tensor<double>> wrong{ad::Tensor<double>({2})};
    EXPECT_THROW(sgd_nesterov_step(ps, wrong, 0.1, 0.9), ad::DimensionError);
}

TEST(Schedule, StrictlyImprovingKeepsRate) {
    ScheduleConfig c = ScheduleConfig::cnn_full();
    c.max_epochs = 30;
    Schedule s(c);
    for (int e = 0; e < 30; ++e) {
        const auto ev = s.observe(10.0 - e);
        EXPECT_EQ(ev.lr_used, c.initial_lr);
        EXPECT_FALSE(ev.decayed);
        EXPECT_FALSE(ev.rollback);
    }
    EXPECT_TRUE(s.finished());
}

TEST(Schedule, ZeroPatienceNeverDecays) {
    ScheduleConfig c{0.1, 0.5, 0, 1e-3, false, 12, Monitor::ValidationLoss};
    Schedule s(c);
    int epochs = 0;
    while (!s.finished()) {
        const auto ev = s.observe(1.0);
        EXPECT_EQ(ev.next_lr, 0.1);
        ++epochs;
    }
    EXPECT_EQ(epochs, 12);
    c.max_epochs = 0;
    EXPECT_THROW(Schedule{c}, ConfigError);
}

TEST(Schedule, ScriptedSequencesMatchHandSimulation) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> coin(0, 4);
    for (auto base : {ScheduleConfig::cnn_full(), ScheduleConfig::lstm_full()}) {
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> m;
            double level = 5.0;
            for (int e = 0; e < 400; ++e) {
                const int c = coin(rng);
                if (c == 0) level -= 0.01;             // improvement
                m.push_back(c % 2 ? level + 1 : level);  // regressions and ties otherwise
            }
            base.initial_lr = 1e-2;
            base.max_epochs = trial % 2 ? 0 : 60;
            const auto oracle = simulate(base, m);
            Schedule s(base);
            for (std::size_t i = 0; i < oracle.size(); ++i) {
                const auto ev = s.observe(m[i]);
                ASSERT_EQ(ev.lr_used, oracle[i].lr) << "epoch " << i + 1;
                ASSERT_EQ(ev.decayed, oracle[i].decayed);
                ASSERT_EQ(ev.rollback, oracle[i].rollback);
                ASSERT_EQ(ev.stop, oracle[i].stop);
                ASSERT_EQ(ev.best_epoch, oracle[i].best);
            }
            EXPECT_TRUE(s.finished());
            EXPECT_THROW(s.observe(0.0), std::logic_error);
        }
    }
}

TEST(Schedule, CnnPresetDecaysAfterFiveFlatEpochs) {
    Schedule s(ScheduleConfig::cnn_full());
    s.observe(1.0);
    for (int e = 0; e < 4; ++e) EXPECT_FALSE(s.observe(1.0).decayed);
    const auto ev = s.observe(1.0);
    EXPECT_TRUE(ev.decayed);
    EXPECT_FALSE(ev.rollback);
    EXPECT_NEAR(ev.next_lr, 1.7e-2 * 0.7, 1e-15);
}

TEST(Schedule, LstmPlateauRollsBackOnceToBest) {
    Schedule s(ScheduleConfig::lstm_full());
    const std::vector<double> fer{50, 45, 40, 41, 42, 40, 38, 37};
    int rollbacks = 0;
    for (double f : fer) {
        const auto ev = s.observe(f);
        if (ev.rollback) {
            ++rollbacks;
            EXPECT_EQ(ev.epoch, 6);
            EXPECT_EQ(ev.best_epoch, 3);
            EXPECT_NEAR(ev.next_lr, 1e-3 * 2.0 / 3.0, 1e-15);
        }
    }
    EXPECT_EQ(rollbacks, 1);
}

TEST(Schedule, StopsBelowMinimumRate) {
    Schedule s(ScheduleConfig{1e-3, 0.5, 1, 2e-4, false, 0, Monitor::ValidationLoss});
    s.observe(1.0);
    int epochs = 1;
    while (!s.finished()) {
        s.observe(2.0);
        ++epochs;
    }
    // 1e-3 -> 5e-4 -> 2.5e-4 -> 1.25e-4 < 2e-4
    EXPECT_EQ(epochs, 4);
    EXPECT_LT(s.lr(), 2e-4);
}

TEST(Config, PresetsAndYamlRoundTrip) {
    const auto cnn = TrainConfig::cnn_full();
    EXPECT_EQ(cnn.batch_size, 256);
    EXPECT_EQ(cnn.batches_per_epoch, 2000);
    EXPECT_EQ(cnn.schedule.initial_lr, 1.7e-2);
    EXPECT_EQ(cnn.schedule.decay, 0.7);
    EXPECT_EQ(cnn.schedule.patience, 5);
    EXPECT_EQ(cnn.schedule.min_lr, 5e-5);
    EXPECT_EQ(cnn.optimizer, Optimizer::Nesterov);
    const auto lstm = TrainConfig::lstm_full();
    EXPECT_EQ(lstm.schedule.patience, 3);
    EXPECT_NEAR(lstm.schedule.decay, 2.0 / 3.0, 1e-15);
    EXPECT_EQ(lstm.schedule.min_lr, 1e-5);
    EXPECT_TRUE(lstm.schedule.rollback);
    EXPECT_EQ(lstm.schedule.monitor, Monitor::ValidationFer);

    auto c = TrainConfig::lstm_desk();
    c.lambda = 0.25;
    c.seed = 99;
    const auto back = train_config_from_yaml(to_yaml(c), TrainConfig{});
    EXPECT_EQ(back.lambda, 0.25);
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.optimizer, Optimizer::Momentum);
    EXPECT_EQ(back.schedule.monitor, Monitor::ValidationFer);
    EXPECT_EQ(back.schedule.decay, c.schedule.decay);
    EXPECT_TRUE(back.schedule.rollback);

    YAML::Node bad = to_yaml(c);
    bad["lambda"] = 1.5;
    EXPECT_THROW(train_config_from_yaml(bad, TrainConfig{}), ConfigError);
    YAML::Node typo = to_yaml(c);
    typo["lamda"] = 0.5;
    EXPECT_THROW(train_config_from_yaml(typo, TrainConfig{}), ConfigError);
}

TEST(Train, FixedSeedReproducesTrajectory) {
    const auto corpus = tiny_corpus();
    auto a = tiny_model(), b = tiny_model();
    const auto cfg = quick_config(3);
    const auto ra = train(*a, corpus, nullptr, cfg);
    const auto rb = train(*b, corpus, nullptr, cfg);
    ASSERT_EQ(ra.history.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
        EXPECT_EQ(ra.history[i].val_loss, rb.history[i].val_loss);
    }
    EXPECT_TRUE(same_values(a->params(), b->params()));
    auto c = tiny_model();
    auto other = cfg;
    other.seed = 2;
    const auto rc = train(*c, corpus, nullptr, other);
    EXPECT_NE(rc.history[0].train_loss, ra.history[0].train_loss);
}

TEST(Train, LossDecreasesOnTinyCorpus) {
    const auto corpus = tiny_corpus();
    auto m = tiny_model();
    const auto r = train(*m, corpus, nullptr, quick_config(8));
    EXPECT_LT(r.best_val_loss, r.history.front().val_loss);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
    const auto v = validate(*m, corpus.validation);
    EXPECT_EQ(v.loss, r.best_val_loss);
}

TEST(Train, LambdaZeroStepEqualsHardLabelStep) {
    const auto corpus = tiny_corpus();
    auto teacher = tiny_model(7);
    models::Model<float>* ts[1] = {teacher.get()};
    const double w[1] = {1.0};
    const auto store = softlabels::build_store(ts, w, corpus, 3, 0.99);
    auto a = tiny_model(), b = tiny_model();
    auto cfg = quick_config(1);
    cfg.batches_per_epoch = 1;
    train(*a, corpus, nullptr, cfg);
    train(*b, corpus, &store, cfg);
    EXPECT_TRUE(same_values(a->params(), b->params()));
    cfg.lambda = 0.5;
    auto c = tiny_model();
    train(*c, corpus, &store, cfg);
    EXPECT_FALSE(same_values(a->params(), c->params()));
}

TEST(Train, RollbackRestoresBestParametersExactly) {
    const auto corpus = tiny_corpus();
    auto m = tiny_model();
    auto cfg = quick_config(12);
    cfg.schedule = {0.5, 0.5, 1, 1e-6, true, 12, Monitor::ValidationFer};
    ad::ParamSet<float> best = m->params();
    int rollbacks = 0;
    bool checked = true;
    train(*m, corpus, nullptr, cfg, [&](const EpochRecord& r) {
        if (r.improved) best.assign_values(m->params());
        if (r.rolled_back) {
            ++rollbacks;
            checked = checked && same_values(best, m->params());
        }
    });
    EXPECT_GT(rollbacks, 0);
    EXPECT_TRUE(checked);
    EXPECT_TRUE(same_values(best, m->params()));
}

TEST(Train, StoreRequiredForPositiveLambda) {
    const auto corpus = tiny_corpus();
    auto m = tiny_model();
    auto cfg = quick_config(1);
    cfg.lambda = 0.5;
    EXPECT_THROW(train(*m, corpus, nullptr, cfg), ConfigError);
    softlabels::SoftLabelStore wrong(5, 2, 0.9, {3});
    EXPECT_THROW(train(*m, corpus, &wrong, cfg), ConfigError);
}

TEST(Train, DivergenceIsReported) {
    const auto corpus = tiny_corpus();
    auto m = tiny_model();
    auto cfg = quick_config(3);
    cfg.schedule.initial_lr = 1e38;  // overflows float parameters on the first step
    EXPECT_THROW(train(*m, corpus, nullptr, cfg), DivergenceError);
}

TEST(Train, HistoryCsvLayout) {
    TrainResult r;
    r.history.push_back({1, 0.01, 2.5, 2.25, 40.0, true, false, false});
    r.history.push_back({2, 0.007, 2.0, 2.5, 42.0, false, true, false});
    const auto csv = history_csv(r, {{"seed", "3"}});
    EXPECT_EQ(csv, "# seed: 3\nepoch,lr,train_loss,val_loss,val_fer\n1,0.01,2.5,2.25,40\n2,0.007,2,2.5,42\n");
}
