#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "blend/ad/checkpoint.hpp"
#include "blend/config.hpp"
#include "blend/io.hpp"
#include "blend/models/blstm.hpp"
#include "blend/models/cnn.hpp"
#include "support/oracles.hpp"

using namespace blend;
using namespace blend::models;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Window random_window(std::size_t freq, std::size_t frames, std::mt19937_64& rng) {
    Window w{freq, frames, std::vector<float>(freq * frames)};
    std::normal_distribution<double> d(0, 1);
    for (auto& v : w.values) v = static_cast<float>(d(rng));
    return w;
}

void randomize(ad::ParamSet<double>& ps, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> d(-scale, scale);
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (auto& v : ps[i].value.values()) v = d(rng);
}

}  // namespace

TEST(CnnConfig, FullScaleShapeTrace) {
    const auto trace = CnnConfig::vision_full().shape_trace();
    ASSERT_GE(trace.size(), 2u);
    EXPECT_EQ(trace.front(), (Shape{1, 31, 41}));
    EXPECT_EQ(trace.back(), (Shape{384, 3, 4}));
    // Every pooled stage is the floor-halved previous map.
    bool saw_13x18 = false, saw_6x9 = false;
    for (const auto& s : trace) {
        saw_13x18 |= s[1] == 13 && s[2] == 18;
        saw_6x9 |= s[1] == 6 && s[2] == 9;
    }
    EXPECT_TRUE(saw_13x18);
    EXPECT_TRUE(saw_6x9);
}

TEST(CnnConfig, FullScaleFeatureMapFromForward) {
    // Apply the layer arithmetic by hand: 3x3 valid conv shrinks by 2, padded
    // conv preserves, 2x2 pool floors.
    int h = 31, w = 41;
    h -= 2, w -= 2;
    h -= 2, w -= 2;
    EXPECT_EQ(h, 27);
    EXPECT_EQ(w, 37);
    h /= 2, w /= 2;
    h /= 2, w /= 2;
    h /= 2, w /= 2;
    EXPECT_EQ(CnnConfig::vision_full().shape_trace().back(), (Shape{384, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}));
}

TEST(CnnConfig, FullScaleParameterCountMagnitudes) {
    const double vision = static_cast<double>(parameter_count(CnnConfig::vision_full()));
    const double lvcsr = static_cast<double>(parameter_count(CnnConfig::lvcsr_full()));
    const double small = static_cast<double>(parameter_count(BlstmConfig::full_small()));
    const double big = static_cast<double>(parameter_count(BlstmConfig::full_big()));
    EXPECT_NEAR(vision / 75e6, 1.0, 0.15);
    EXPECT_NEAR(big / 65e6, 1.0, 0.15);
    EXPECT_NEAR(small / 30e6, 1.0, 0.15);
    EXPECT_NEAR(lvcsr / vision, 1.0, 0.10);
}

TEST(CnnConfig, ClosedFormCountEqualsInstantiatedModel) {
    for (const ModelConfig& cfg : {ModelConfig(CnnConfig::vision_desk()), ModelConfig(CnnConfig::lvcsr_desk()),
                                   ModelConfig(BlstmConfig::desk())}) {
        auto m = make_model<float>(cfg);
        EXPECT_EQ(m->params().count(), parameter_count(cfg));
    }
}

TEST(CnnConfig, YamlRoundTripAndUnknownKeyRejected) {
    for (const ModelConfig& cfg : {ModelConfig(CnnConfig::vision_desk()), ModelConfig(CnnConfig::lvcsr_full()),
                                   ModelConfig(BlstmConfig::desk())}) {
        const auto back = model_config_from_yaml(to_yaml(cfg));
        EXPECT_EQ(yaml::emit(to_yaml(back)), yaml::emit(to_yaml(cfg)));
    }
    auto node = to_yaml(ModelConfig(BlstmConfig::desk()));
    node["hiden"] = 3;
    try {
        model_config_from_yaml(node);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("hiden"), std::string::npos);
    }
}

TEST(ConvNet, ZeroWeightsGiveUniformPosterior) {
    std::mt19937_64 rng(1);
    for (auto cfg : {CnnConfig::vision_desk(), CnnConfig::lvcsr_desk()}) {
        ConvNet<double> net(cfg);
        const auto p = predict_posteriors(net, random_window(31, 41, rng));
        for (double v : p) EXPECT_NEAR(v, 1.0 / cfg.classes, 1e-15);
    }
}

TEST(ConvNet, ForwardIsBitDeterministic) {
    std::mt19937_64 rng(2);
    ConvNet<float> net(CnnConfig::vision_desk());
    net.initialize(7);
    const auto w = random_window(31, 41, rng);
    Tape<float> t1, t2;
    EXPECT_EQ(net.logits(t1, w).value(), net.logits(t2, w).value());
}

TEST(ConvNet, WrongWindowShapeNamesAxis) {
    std::mt19937_64 rng(3);
    ConvNet<double> net(CnnConfig::vision_desk());
    Tape<double> tape;
    try {
        net.logits(tape, random_window(30, 41, rng));
        FAIL();
    } catch (const ad::DimensionError& e) {
        EXPECT_EQ(e.axis(), 1);
    }
}

TEST(ConvNet, KindCheckedForwards) {
    std::mt19937_64 rng(4);
    ConvNet<double> vision(CnnConfig::vision_desk());
    ConvNet<double> lvcsr(CnnConfig::lvcsr_desk());
    Tape<double> tape;
    const auto w = random_window(31, 41, rng);
    EXPECT_NO_THROW(vision_cnn_forward(vision, tape, w));
    EXPECT_NO_THROW(lvcsr_cnn_forward(lvcsr, tape, w));
    EXPECT_THROW(vision_cnn_forward(lvcsr, tape, w), ConfigError);
}

class ModelGradient : public ::testing::TestWithParam<int> {};

TEST_P(ModelGradient, DeskModelsMatchFiniteDifferences) {
    std::mt19937_64 rng(100 + GetParam());
    const ModelConfig cfgs[] = {CnnConfig::vision_desk(), CnnConfig::lvcsr_desk(), BlstmConfig{31, 2, 4, 5, 50}};
    for (const auto& cfg : cfgs) {
        auto model = make_model<double>(cfg);
        model->initialize(GetParam());
        const std::size_t frames = std::holds_alternative<BlstmConfig>(cfg) ? 5 : 41;
        const auto win = random_window(31, frames, rng);
        const std::uint32_t y[1] = {static_cast<std::uint32_t>(GetParam() % 50)};
        const double one[1] = {1.0};
        auto loss = [&](Tape<double>& t) { return ad::cross_entropy<double>(y, one, ad::softmax(model->logits(t, win))); };
        const double err = oracle::param_gradient_error(
            model->params(), [&] { Tape<double> t; return loss(t).value().item(); },
            [&] { Tape<double> t; t.backward(loss(t)); }, 50, GetParam());
        EXPECT_LT(err, 1e-4) << "kind " << ad::model_kind_name(config_kind(cfg));
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, ModelGradient, ::testing::Range(0, 3));

// LSTM cell.

namespace {

struct CellFixture {
    ad::ParamSet<double> ps;
    explicit CellFixture(std::size_t D, std::size_t H) {
        for (const char* m : {"W_xi", "W_xf", "W_xc", "W_xo"}) ps.add(m, Shape{H, D});
        for (const char* m : {"W_hi", "W_hf", "W_hc", "W_ho"}) ps.add(m, Shape{H, H});
        for (const char* v : {"w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o"}) ps.add(v, Shape{H});
    }
    LstmWeights<double> bind(Tape<double>& t) {
        auto p = [&](const char* n) { return t.param(ps.get(n)); };
        return {p("W_xi"), p("W_hi"), p("W_xf"), p("W_hf"), p("W_xc"), p("W_hc"), p("W_xo"), p("W_ho"),
                p("w_ci"), p("w_cf"), p("w_co"), p("b_i"),  p("b_f"),  p("b_c"),  p("b_o")};
    }
};

}  // namespace

TEST(LstmCell, ZeroEverythingGivesZeroState) {
    CellFixture f(3, 4);
    Tape<double> t;
    auto s = lstm_cell_step(f.bind(t), t.input(Tensor<double>(Shape{3})), t.input(Tensor<double>(Shape{4})),
                            t.input(Tensor<double>(Shape{4})));
    for (double v : s.h.value().values()) EXPECT_EQ(v, 0.0);
    for (double v : s.c.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, SaturatedGates) {
    CellFixture f(3, 4);
    f.ps.get("b_i").value.fill(-40);
    f.ps.get("b_f").value.fill(-40);
    f.ps.get("b_o").value.fill(40);
    std::mt19937_64 rng(5);
    Tape<double> t;
    auto s = lstm_cell_step(f.bind(t), t.input(oracle::random_tensor({3}, rng)), t.input(oracle::random_tensor({4}, rng)),
                            t.input(oracle::random_tensor({4}, rng)));
    for (std::size_t m = 0; m < 4; ++m) {
        EXPECT_NEAR(s.c.value()[m], 0.0, 1e-12);
        EXPECT_NEAR(s.h.value()[m], std::tanh(s.c.value()[m]), 1e-12);
    }
}

TEST(LstmCell, PeepholesAreDiagonal) {
    std::mt19937_64 rng(6);
    CellFixture f(3, 5);
    randomize(f.ps, rng, 0.8);
    const auto x = oracle::random_tensor({3}, rng), h = oracle::random_tensor({5}, rng),
               c = oracle::random_tensor({5}, rng);
    auto run = [&](const Tensor<double>& cprev) {
        Tape<double> t;
        auto s = lstm_cell_step(f.bind(t), t.input(x), t.input(h), t.input(cprev));
        return std::array<Tensor<double>, 2>{s.input_pre.value(), s.forget_pre.value()};
    };
    const auto base = run(c);
    for (std::size_t m = 0; m < 5; ++m) {
        auto c2 = c;
        c2[m] += 0.37;
        const auto moved = run(c2);
        for (int g = 0; g < 2; ++g)
            for (std::size_t j = 0; j < 5; ++j) {
                if (j == m)
                    EXPECT_NE(moved[g][j], base[g][j]);
                else
                    EXPECT_EQ(moved[g][j], base[g][j]);
            }
    }
}

TEST(LstmCell, ThreeStepUnrollGradient) {
    std::mt19937_64 rng(7);
    CellFixture f(3, 4);
    randomize(f.ps, rng, 0.7);
    std::vector<Tensor<double>> xs;
    for (int i = 0; i < 3; ++i) xs.push_back(oracle::random_tensor({3}, rng));
    auto build = [&](Tape<double>& t) {
        auto w = f.bind(t);
        auto h = t.input(Tensor<double>(Shape{4})), c = h;
        for (const auto& x : xs) {
            auto s = lstm_cell_step(w, t.input(x), h, c);
            h = s.h;
            c = s.c;
        }
        return ad::sum(h * h) + ad::sum(c);
    };
    const double err = oracle::param_gradient_error(
        f.ps, [&] { Tape<double> t; return build(t).value().item(); }, [&] { Tape<double> t; t.backward(build(t)); },
        0, 1);
    EXPECT_LT(err, 1e-4);
}

// Bidirectional network.

TEST(Blstm, ZeroParamsGiveZeroLogits) {
    std::mt19937_64 rng(8);
    Blstm<double> net(BlstmConfig{31, 2, 4, 5, 10});
    Tape<double> t;
    for (double v : net.logits(t, random_window(31, 5, rng)).value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Blstm, EvenWindowRejected) {
    std::mt19937_64 rng(9);
    EXPECT_THROW(Blstm<double>(BlstmConfig{31, 2, 4, 6, 10}), ConfigError);
    Blstm<double> net(BlstmConfig{31, 2, 4, 5, 10});
    Tape<double> t;
    EXPECT_THROW(net.logits(t, random_window(31, 6, rng)), ad::DimensionError);
}

TEST(Blstm, TopLayerTruncationGivesExactZeroGradients) {
    std::mt19937_64 rng(10);
    const std::size_t T = 9, center = 4, D = 6;
    Tape<double> t;
    std::vector<Var<double>> fwd_in, bwd_in;
    for (std::size_t i = 0; i < T; ++i) {
        fwd_in.push_back(t.input(oracle::random_tensor({D}, rng), true));
        bwd_in.push_back(t.input(oracle::random_tensor({D}, rng), true));
    }
    // A standalone top layer fed by explicit per-direction inputs.
    Blstm<double> top(BlstmConfig{static_cast<int>(D), 1, 5, static_cast<int>(T), 7});
    top.params().assign_values([&] {
        ad::ParamSet<double> ps = top.params();
        randomize(ps, rng, 0.5);
        return ps;
    }());
    auto seq = top.run_layer(t, 0, fwd_in, bwd_in, true, center);
    auto y = top.head(t, seq.fwd[center], seq.bwd[center]);
    t.backward(ad::sum(y));
    for (std::size_t i = 0; i < T; ++i) {
        const auto gf = t.grad(fwd_in[i]);
        const auto gb = t.grad(bwd_in[i]);
        double nf = 0, nb = 0;
        for (double v : gf.values()) nf += std::abs(v);
        for (double v : gb.values()) nb += std::abs(v);
        if (i > center) EXPECT_EQ(nf, 0.0) << "forward input " << i;
        if (i <= center) EXPECT_GT(nf, 0.0) << "forward input " << i;
        if (i < center) EXPECT_EQ(nb, 0.0) << "backward input " << i;
        if (i >= center) EXPECT_GT(nb, 0.0) << "backward input " << i;
    }
}

namespace {

// Straight-line unrolling with plain vectors; reads weights by name only.
struct ScriptedBlstm {
    const ad::ParamSet<double>& ps;
    int H;

    std::vector<double> mv(const std::string& n, const std::vector<double>& x) const {
        const auto& w = ps.get(n).value;
        std::vector<double> y(w.dim(0), 0.0);
        for (std::size_t i = 0; i < w.dim(0); ++i)
            for (std::size_t j = 0; j < w.dim(1); ++j) y[i] += w.at(i, j) * x[j];
        return y;
    }
    double v(const std::string& n, int m) const { return ps.get(n).value[m]; }

    void step(const std::string& p, const std::vector<double>& x, std::vector<double>& h, std::vector<double>& c) const {
        const auto xi = mv(p + "W_xi", x), hi = mv(p + "W_hi", h), xf = mv(p + "W_xf", x), hf = mv(p + "W_hf", h),
                   xc = mv(p + "W_xc", x), hc = mv(p + "W_hc", h), xo = mv(p + "W_xo", x), ho = mv(p + "W_ho", h);
        std::vector<double> hn(H), cn(H);
        for (int m = 0; m < H; ++m) {
            const double i = oracle::sigmoid(xi[m] + hi[m] + v(p + "w_ci", m) * c[m] + v(p + "b_i", m));
            const double f = oracle::sigmoid(xf[m] + hf[m] + v(p + "w_cf", m) * c[m] + v(p + "b_f", m));
            cn[m] = f * c[m] + i * std::tanh(xc[m] + hc[m] + v(p + "b_c", m));
            const double o = oracle::sigmoid(xo[m] + ho[m] + v(p + "w_co", m) * cn[m] + v(p + "b_o", m));
            hn[m] = o * std::tanh(cn[m]);
        }
        h = hn;
        c = cn;
    }
};

}  // namespace

TEST(Blstm, MatchesScriptedUnrolling) {
    std::mt19937_64 rng(11);
    const int T = 5, H = 4, D = 31, K = 6;
    Blstm<double> net(BlstmConfig{D, 2, H, T, K});
    randomize(net.params(), rng, 0.6);
    const auto win = random_window(D, T, rng);
    Tape<double> tape;
    const auto got = net.logits(tape, win).value();

    ScriptedBlstm s{net.params(), H};
    std::vector<std::vector<double>> x(T, std::vector<double>(D));
    for (int t = 0; t < T; ++t)
        for (int f = 0; f < D; ++f) x[t][f] = win.at(f, t);
    // Layer 1, full passes both ways.
    std::vector<std::vector<double>> hf(T), hb(T);
    {
        std::vector<double> h(H, 0.0), c(H, 0.0);
        for (int t = 0; t < T; ++t) s.step("l1.fwd.", x[t], h, c), hf[t] = h;
        h.assign(H, 0.0), c.assign(H, 0.0);
        for (int t = T - 1; t >= 0; --t) s.step("l1.bwd.", x[t], h, c), hb[t] = h;
    }
    std::vector<std::vector<double>> x2(T);
    for (int t = 0; t < T; ++t) {
        x2[t] = hf[t];
        x2[t].insert(x2[t].end(), hb[t].begin(), hb[t].end());
    }
    const int ts = T / 2;
    std::vector<double> top;
    {
        std::vector<double> h(H, 0.0), c(H, 0.0);
        for (int t = 0; t <= ts; ++t) s.step("l2.fwd.", x2[t], h, c);
        top = h;
        h.assign(H, 0.0), c.assign(H, 0.0);
        for (int t = T - 1; t >= ts; --t) s.step("l2.bwd.", x2[t], h, c);
        top.insert(top.end(), h.begin(), h.end());
    }
    const auto& W = net.params().get("out.W").value;
    const auto& b = net.params().get("out.b").value;
    for (int k = 0; k < K; ++k) {
        double y = b[k];
        for (int j = 0; j < 2 * H; ++j) y += W.at(k, j) * top[j];
        EXPECT_NEAR(got[k], y, 1e-10);
    }
}

TEST(Predict, PosteriorsNormalizedAndBatchMatchesLoop) {
    std::mt19937_64 rng(12);
    ConvNet<float> net(CnnConfig::vision_desk());
    net.initialize(1);
    std::vector<Window> ws;
    for (int i = 0; i < 5; ++i) ws.push_back(random_window(31, 41, rng));
    const auto batch = predict_batch<float>(net, ws);
    for (std::size_t i = 0; i < ws.size(); ++i) {
        const auto p = predict_posteriors(net, ws[i]);
        EXPECT_EQ(batch[i], p);
        double mass = 0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            mass += v;
        }
        EXPECT_NEAR(mass, 1.0, 1e-9);
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    ConvNet<float> net(CnnConfig::vision_desk());
    net.initialize(99);
    ad::Checkpoint ck{ad::ModelKind::VisionCnn, net.params(), "seed: 99\n"};
    std::stringstream ss;
    ad::write_checkpoint(ss, ck);
    const std::string bytes = ss.str();
    const auto back = ad::read_checkpoint(ss);
    EXPECT_EQ(back.kind, ck.kind);
    EXPECT_EQ(back.provenance, ck.provenance);
    EXPECT_TRUE(back.params == ck.params);
    std::stringstream again;
    ad::write_checkpoint(again, back);
    EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, TruncatedFileRaisesIoError) {
    ConvNet<float> net(CnnConfig::lvcsr_desk());
    std::stringstream ss;
    ad::write_checkpoint(ss, {ad::ModelKind::LvcsrCnn, net.params(), ""});
    std::string bytes = ss.str();
    bytes.resize(bytes.size() / 2);
    std::stringstream cut(bytes);
    EXPECT_THROW(ad::read_checkpoint(cut), IoError);
}
