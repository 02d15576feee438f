#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "blend/models/model.hpp"

namespace blend::corpus {

using models::Window;

struct Utterance {
    std::uint32_t id = 0;
    std::size_t frames = 0;
    /// channels x frames, frequency-major: features[f * frames + t].
    std::vector<float> features;
    std::vector<std::uint32_t> labels;

    float feature(std::size_t f, std::size_t t) const { return features[f * frames + t]; }
};

/// Synthetic frame-classification corpus parameters.
///
/// Labels follow a segment process: each segment draws its class from a
/// Zipf-skewed distribution (independently of the previous segment) and
/// lasts a uniform number of frames in [dwell_min, dwell_max]. dwell_max == 0
/// means a single segment per utterance. Every class owns a spectral template
/// (a family prototype plus a class-specific part), frames near segment
/// boundaries blend in the neighboring template, each utterance applies a
/// random gain and a small frequency shift, and white noise is added.
struct CorpusConfig {
    int train_utterances = 2000;
    int validation_utterances = 100;
    int min_length = 30;
    int max_length = 300;
    double length_skew = 2.5;  // larger -> more short utterances
    int classes = 50;
    int channels = 31;
    double class_skew = 1.0;  // Zipf exponent
    int families = 10;
    double family_similarity = 0.6;
    int dwell_min = 3;
    int dwell_max = 12;
    int coarticulation = 2;  // frames blended on each side of a boundary
    int max_shift = 1;       // utterance-level frequency shift in channels
    double noise = 0.6;
    std::uint64_t seed = 1;

    void validate() const;
    /// Segment class distribution (also the frame marginal).
    std::vector<double> class_distribution() const;
};

YAML::Node to_yaml(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_yaml(const YAML::Node& node, const std::string& path = "corpus");

struct Corpus {
    CorpusConfig config;
    std::vector<Utterance> train;
    std::vector<Utterance> validation;

    int classes() const { return config.classes; }
    int channels() const { return config.channels; }
    std::size_t train_frames() const;
};

/// Deterministic in config.seed.
Corpus generate_corpus(const CorpusConfig& cfg);

/// Per-class spectral templates used by the generator ([classes][channels]).
std::vector<std::vector<float>> class_templates(const CorpusConfig& cfg);

inline constexpr int kDefaultContext = 20;

/// Window of 2*context+1 frames centered on frame t; frames outside the
/// utterance are zero.
Window extract_window(const Utterance& utt, std::size_t t, int context = kDefaultContext);

struct FrameRef {
    std::uint32_t utterance = 0;  // index into the utterance list
    std::uint32_t frame = 0;

    friend bool operator==(const FrameRef&, const FrameRef&) = default;
};

/// Draws training frames by picking an utterance proportionally to its
/// length, then a frame uniformly within it. The random stream is owned by
/// the caller.
class FrameSampler {
public:
    explicit FrameSampler(const std::vector<Utterance>& utterances);

    FrameRef operator()(std::mt19937_64& rng) const;
    std::uint32_t sample_utterance(std::mt19937_64& rng) const;
    std::size_t total_frames() const noexcept { return total_; }

private:
    std::vector<std::size_t> cumulative_;
    std::vector<std::size_t> lengths_;
    std::size_t total_ = 0;
};

/// Class priors: relative frequencies with additive smoothing, normalized.
std::vector<double> compute_priors(const std::vector<Utterance>& utterances, int classes, double smoothing);

/// Every frame of every utterance, utterance-major.
std::vector<FrameRef> validation_set(const std::vector<Utterance>& utterances);

/// Binary corpus file:
///   "BLNDCORP" u32 version u32 classes u32 channels u32 n_train u32 n_valid
///   per utterance: u32 id, u32 T, u32 labels[T], f32 features[channels*T]
///   "PROV" u32 length, provenance text
void write_corpus(std::ostream& os, const Corpus& corpus, const std::string& provenance);
Corpus read_corpus(std::istream& is, std::string* provenance = nullptr);
void save_corpus(const std::string& path, const Corpus& corpus, const std::string& provenance);
Corpus load_corpus(const std::string& path, std::string* provenance = nullptr);

/// Plain-text histograms of utterance lengths and class frequencies.
std::string corpus_summary(const Corpus& corpus, int length_bins = 10);

}  // namespace blend::corpus
