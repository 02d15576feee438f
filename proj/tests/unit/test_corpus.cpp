#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "blend/config.hpp"
#include "blend/corpus.hpp"
#include "blend/io.hpp"
#include "blend/rng.hpp"

using namespace blend;
using namespace blend::corpus;

namespace {

CorpusConfig small_config(std::uint64_t seed = 3) {
    CorpusConfig c;
    c.train_utterances = 40;
    c.validation_utterances = 5;
    c.min_length = 20;
    c.max_length = 80;
    c.classes = 12;
    c.families = 4;
    c.seed = seed;
    return c;
}

Utterance known_utterance(std::size_t channels, std::size_t frames) {
    Utterance u;
    u.frames = frames;
    u.features.resize(channels * frames);
    for (std::size_t f = 0; f < channels; ++f)
        for (std::size_t t = 0; t < frames; ++t) u.features[f * frames + t] = static_cast<float>(1000 * f + t + 1);
    u.labels.assign(frames, 0);
    return u;
}

Utterance labelled(std::vector<std::uint32_t> labels) {
    Utterance u;
    u.frames = labels.size();
    u.features.assign(labels.size(), 0.0f);
    u.labels = std::move(labels);
    return u;
}

// Upper tail of chi-square with k degrees of freedom (Wilson-Hilferty).
double chi2_upper_tail(double x, double k) {
    const double z = (std::cbrt(x / k) - (1 - 2 / (9 * k))) / std::sqrt(2 / (9 * k));
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

TEST(Generate, SameSeedIsBitIdentical) {
    const auto a = generate_corpus(small_config(9));
    const auto b = generate_corpus(small_config(9));
    ASSERT_EQ(a.train.size(), b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].labels, b.train[i].labels);
        EXPECT_EQ(a.train[i].features, b.train[i].features);
    }
    std::ostringstream sa, sb;
    write_corpus(sa, a, "");
    write_corpus(sb, b, "");
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_NE(generate_corpus(small_config(10)).train[0].features, a.train[0].features);
}

TEST(Generate, ShapesAndRanges) {
    const auto cfg = small_config();
    const auto c = generate_corpus(cfg);
    EXPECT_EQ(c.train.size(), 40u);
    EXPECT_EQ(c.validation.size(), 5u);
    std::set<std::uint32_t> ids;
    for (const auto* set : {&c.train, &c.validation})
        for (const auto& u : *set) {
            EXPECT_GE(u.frames, 20u);
            EXPECT_LE(u.frames, 80u);
            EXPECT_EQ(u.labels.size(), u.frames);
            EXPECT_EQ(u.features.size(), u.frames * 31);
            for (auto y : u.labels) EXPECT_LT(y, 12u);
            for (float v : u.features) ASSERT_TRUE(std::isfinite(v));
            ids.insert(u.id);
        }
    EXPECT_EQ(ids.size(), 45u);
}

TEST(Generate, NoiselessUnboundedDwellRepeatsOneColumn) {
    auto cfg = small_config();
    cfg.noise = 0;
    cfg.dwell_max = 0;
    const auto c = generate_corpus(cfg);
    for (const auto& u : c.train) {
        for (std::size_t t = 1; t < u.frames; ++t) {
            ASSERT_EQ(u.labels[t], u.labels[0]);
            for (int f = 0; f < cfg.channels; ++f) ASSERT_EQ(u.feature(f, t), u.feature(f, 0));
        }
    }
}

TEST(Generate, TemplatesAreDistinct) {
    const auto tpl = class_templates(small_config());
    for (std::size_t a = 0; a < tpl.size(); ++a)
        for (std::size_t b = a + 1; b < tpl.size(); ++b) EXPECT_NE(tpl[a], tpl[b]);
}

TEST(Generate, LengthsAreSkewedTowardShort) {
    auto cfg = small_config();
    cfg.train_utterances = 600;
    const auto c = generate_corpus(cfg);
    std::size_t short_half = 0;
    for (const auto& u : c.train) short_half += u.frames < 50;
    EXPECT_GT(short_half, 400u);
}

// Segment labels are drawn independently from the class distribution, so
// frames at least dwell_max apart are independent draws from it.
TEST(Generate, ClassHistogramWithinThreeSigma) {
    CorpusConfig cfg;
    cfg.train_utterances = 1500;
    cfg.validation_utterances = 1;
    cfg.seed = 5;
    const auto c = generate_corpus(cfg);
    const auto p = cfg.class_distribution();
    std::vector<double> counts(cfg.classes, 0.0);
    double n = 0;
    for (const auto& u : c.train)
        for (std::size_t t = 0; t < u.frames; t += cfg.dwell_max) {
            counts[u.labels[t]] += 1;
            n += 1;
        }
    ASSERT_GT(n, 10000);
    double chi2 = 0;
    for (int k = 0; k < cfg.classes; ++k) {
        const double mean = n * p[k], sigma = std::sqrt(n * p[k] * (1 - p[k]));
        EXPECT_LE(std::abs(counts[k] - mean), 3 * sigma) << "class " << k;
        chi2 += (counts[k] - mean) * (counts[k] - mean) / mean;
    }
    EXPECT_GT(chi2_upper_tail(chi2, cfg.classes - 1), 0.01);
}

TEST(Generate, ZipfDistributionIsNormalizedAndDecreasing) {
    CorpusConfig cfg;
    const auto p = cfg.class_distribution();
    double s = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        s += p[k];
        if (k > 0) EXPECT_LT(p[k], p[k - 1]);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_NEAR(p[0] / p[1], 2.0, 1e-12);
    cfg.class_skew = 0;
    for (double v : cfg.class_distribution()) EXPECT_NEAR(v, 1.0 / cfg.classes, 1e-15);
}

TEST(Generate, DegenerateConfigsThrow) {
    auto c = small_config();
    c.classes = 1;
    EXPECT_THROW(generate_corpus(c), ConfigError);
    c = small_config();
    c.train_utterances = 0;
    EXPECT_THROW(generate_corpus(c), ConfigError);
    c = small_config();
    c.dwell_max = 2;
    EXPECT_THROW(generate_corpus(c), ConfigError);
}

TEST(Generate, ConfigYamlRoundTrip) {
    auto c = small_config(77);
    c.noise = 0.25;
    c.dwell_max = 0;
    const auto back = corpus_config_from_yaml(to_yaml(c));
    EXPECT_EQ(back.seed, 77u);
    EXPECT_EQ(back.noise, 0.25);
    EXPECT_EQ(back.dwell_max, 0);
    EXPECT_EQ(back.classes, 12);
    YAML::Node bad = to_yaml(c);
    bad["colour"] = 1;
    EXPECT_THROW(corpus_config_from_yaml(bad), ConfigError);
}

TEST(Window, FirstFramePadsLeftHalf) {
    const auto u = known_utterance(31, 50);
    const auto w = extract_window(u, 0);
    ASSERT_EQ(w.freq, 31u);
    ASSERT_EQ(w.frames, 41u);
    for (std::size_t f = 0; f < 31; ++f) {
        for (std::size_t j = 0; j < 20; ++j) EXPECT_EQ(w.at(f, j), 0.0f);
        for (std::size_t j = 20; j < 41; ++j) EXPECT_EQ(w.at(f, j), u.feature(f, j - 20));
    }
}

TEST(Window, LastFramePadsRightHalf) {
    const auto u = known_utterance(31, 50);
    const auto w = extract_window(u, 49);
    for (std::size_t f = 0; f < 31; ++f) {
        for (std::size_t j = 21; j < 41; ++j) EXPECT_EQ(w.at(f, j), 0.0f);
        EXPECT_EQ(w.at(f, 20), u.feature(f, 49));
    }
}

TEST(Window, InteriorMatchesSliceOracle) {
    const auto u = known_utterance(31, 90);
    for (std::size_t t : {20u, 33u, 69u}) {
        const auto w = extract_window(u, t);
        for (std::size_t f = 0; f < 31; ++f)
            for (std::size_t j = 0; j < 41; ++j) ASSERT_EQ(w.at(f, j), u.feature(f, t - 20 + j));
    }
}

TEST(Window, ShortUtteranceAndCustomContext) {
    const auto u = known_utterance(3, 2);
    const auto w = extract_window(u, 1, 2);
    ASSERT_EQ(w.frames, 5u);
    for (std::size_t f = 0; f < 3; ++f) {
        EXPECT_EQ(w.at(f, 0), 0.0f);
        EXPECT_EQ(w.at(f, 1), u.feature(f, 0));
        EXPECT_EQ(w.at(f, 2), u.feature(f, 1));
        EXPECT_EQ(w.at(f, 3), 0.0f);
        EXPECT_EQ(w.at(f, 4), 0.0f);
    }
}

TEST(Window, OutOfRangeFrameThrows) {
    const auto u = known_utterance(31, 10);
    EXPECT_THROW(extract_window(u, 10), std::out_of_range);
}

TEST(Sampler, SingleUtteranceIsUniform) {
    std::vector<Utterance> utts{known_utterance(1, 8)};
    FrameSampler s(utts);
    auto rng = make_rng(1, "test");
    std::vector<double> counts(8, 0);
    const int n = 80000;
    for (int i = 0; i < n; ++i) {
        const auto r = s(rng);
        ASSERT_EQ(r.utterance, 0u);
        counts[r.frame] += 1;
    }
    double chi2 = 0;
    for (double c : counts) chi2 += (c - n / 8.0) * (c - n / 8.0) / (n / 8.0);
    EXPECT_GT(chi2_upper_tail(chi2, 7), 0.01);
}

TEST(Sampler, UtteranceDrawnProportionallyToLength) {
    std::vector<Utterance> utts{known_utterance(1, 10), known_utterance(1, 30)};
    FrameSampler s(utts);
    auto rng = make_rng(2, "test");
    const int n = 200000;
    int second = 0;
    for (int i = 0; i < n; ++i) second += s.sample_utterance(rng) == 1;
    const double sigma = std::sqrt(0.75 * 0.25 / n);
    EXPECT_NEAR(second / static_cast<double>(n), 0.75, 4 * sigma);
}

TEST(Sampler, MillionDrawsUniformOverFrames) {
    std::vector<Utterance> utts{known_utterance(1, 3), known_utterance(1, 17), known_utterance(1, 40),
                                known_utterance(1, 9)};
    FrameSampler s(utts);
    ASSERT_EQ(s.total_frames(), 69u);
    std::vector<std::size_t> offset{0, 3, 20, 60};
    std::vector<double> counts(69, 0);
    auto rng = make_rng(3, "test");
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const auto r = s(rng);
        counts[offset[r.utterance] + r.frame] += 1;
    }
    double chi2 = 0;
    const double e = n / 69.0;
    for (double c : counts) chi2 += (c - e) * (c - e) / e;
    EXPECT_GT(chi2_upper_tail(chi2, 68), 0.01);
}

TEST(Sampler, ExplicitStreamsReproduce) {
    const auto c = generate_corpus(small_config());
    FrameSampler s(c.train);
    auto a = make_rng(4, "sampler"), b = make_rng(4, "sampler");
    for (int i = 0; i < 100; ++i) EXPECT_EQ(s(a), s(b));
}

TEST(Sampler, EmptyCorpusThrows) {
    std::vector<Utterance> none;
    EXPECT_THROW(FrameSampler{none}, std::invalid_argument);
}

TEST(Priors, BalancedTwoClass) {
    std::vector<Utterance> utts{labelled({0, 1, 0, 1}), labelled({1, 0})};
    const auto p = compute_priors(utts, 2, 0.0);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Priors, SmoothingKeepsAbsentClassPositive) {
    std::vector<Utterance> utts{labelled({0, 0, 1})};
    const auto p = compute_priors(utts, 3, 0.5);
    EXPECT_GT(p[2], 0.0);
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
    EXPECT_NEAR(p[2], 0.5 / 4.5, 1e-12);
}

TEST(Priors, MatchCountingOracle) {
    const auto c = generate_corpus(small_config(21));
    std::vector<double> counts(12, 0.0);
    double n = 0;
    for (const auto& u : c.train)
        for (auto y : u.labels) {
            counts[y] += 1;
            n += 1;
        }
    const double eps = 1e-3;
    const auto p = compute_priors(c.train, 12, eps);
    double s = 0;
    for (int k = 0; k < 12; ++k) {
        EXPECT_NEAR(p[k], (counts[k] + eps) / (n + 12 * eps), 1e-12);
        s += p[k];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(ValidationSet, EnumeratesEveryFrameOnce) {
    const auto c = generate_corpus(small_config());
    const auto refs = validation_set(c.validation);
    std::vector<FrameRef> oracle;
    std::size_t total = 0;
    for (std::uint32_t u = 0; u < c.validation.size(); ++u) {
        total += c.validation[u].frames;
        for (std::uint32_t t = 0; t < c.validation[u].frames; ++t) oracle.push_back({u, t});
    }
    EXPECT_EQ(refs.size(), total);
    EXPECT_EQ(refs, oracle);
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto& r : refs) seen.insert({r.utterance, r.frame});
    EXPECT_EQ(seen.size(), total);
}

TEST(CorpusFile, RoundTripKeepsContentAndProvenance) {
    const auto c = generate_corpus(small_config(31));
    std::stringstream ss;
    write_corpus(ss, c, "tool: test\n");
    std::string prov;
    const auto back = read_corpus(ss, &prov);
    EXPECT_EQ(prov, "tool: test\n");
    ASSERT_EQ(back.train.size(), c.train.size());
    ASSERT_EQ(back.validation.size(), c.validation.size());
    for (std::size_t i = 0; i < c.train.size(); ++i) {
        EXPECT_EQ(back.train[i].id, c.train[i].id);
        EXPECT_EQ(back.train[i].labels, c.train[i].labels);
        EXPECT_EQ(back.train[i].features, c.train[i].features);
    }
    EXPECT_EQ(back.classes(), 12);
}

TEST(CorpusFile, CorruptInputsRaiseIoError) {
    const auto c = generate_corpus(small_config());
    std::stringstream ss;
    write_corpus(ss, c, "");
    const std::string bytes = ss.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(read_corpus(truncated), IoError);
    std::string wrong = bytes;
    wrong[0] = 'X';
    std::istringstream bad_magic(wrong);
    EXPECT_THROW(read_corpus(bad_magic), IoError);
    EXPECT_THROW(load_corpus("/nonexistent/corpus.bin"), IoError);
}

TEST(CorpusFile, SummaryHasBothHistograms) {
    const auto c = generate_corpus(small_config());
    const auto s = corpus_summary(c, 4);
    EXPECT_NE(s.find("length"), std::string::npos);
    EXPECT_NE(s.find("class"), std::string::npos);
    std::size_t lines = 0;
    for (char ch : s) lines += ch == '\n';
    EXPECT_GE(lines, 4u + 12u);
}
