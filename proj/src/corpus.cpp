#include "blend/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "blend/config.hpp"
#include "blend/io.hpp"

namespace blend::corpus {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id), 0x6a09e667u};
    return std::mt19937_64(seq);
}

std::vector<float> bump(int channels, double center, double width, double amplitude) {
    std::vector<float> v(channels);
    for (int f = 0; f < channels; ++f) {
        const double d = (f - center) / width;
        v[f] = static_cast<float>(amplitude * std::exp(-0.5 * d * d));
    }
    return v;
}

}  // namespace

void CorpusConfig::validate() const {
    if (classes < 2) throw ConfigError("corpus.classes", "need at least two classes");
    if (train_utterances < 1) throw ConfigError("corpus.train_utterances", "must be positive");
    if (validation_utterances < 1) throw ConfigError("corpus.validation_utterances", "must be positive");
    if (min_length < 1 || max_length < min_length) throw ConfigError("corpus.min_length", "need 1 <= min_length <= max_length");
    if (length_skew <= 0) throw ConfigError("corpus.length_skew", "must be positive");
    if (channels < 1) throw ConfigError("corpus.channels", "must be positive");
    if (class_skew < 0) throw ConfigError("corpus.class_skew", "must be nonnegative");
    if (families < 1 || families > classes) throw ConfigError("corpus.families", "need 1 <= families <= classes");
    if (family_similarity < 0 || family_similarity > 1) throw ConfigError("corpus.family_similarity", "must lie in [0,1]");
    if (dwell_min < 1) throw ConfigError("corpus.dwell_min", "must be positive");
    if (dwell_max != 0 && dwell_max < dwell_min) throw ConfigError("corpus.dwell_max", "must be 0 (unbounded) or >= dwell_min");
    if (coarticulation < 0) throw ConfigError("corpus.coarticulation", "must be nonnegative");
    if (max_shift < 0) throw ConfigError("corpus.max_shift", "must be nonnegative");
    if (noise < 0) throw ConfigError("corpus.noise", "must be nonnegative");
}

std::vector<double> CorpusConfig::class_distribution() const {
    std::vector<double> q(classes);
    for (int k = 0; k < classes; ++k) q[k] = 1.0 / std::pow(k + 1.0, class_skew);
    const double z = std::accumulate(q.begin(), q.end(), 0.0);
    for (auto& v : q) v /= z;
    return q;
}

YAML::Node to_yaml(const CorpusConfig& c) {
    YAML::Node n;
    n["train_utterances"] = c.train_utterances;
    n["validation_utterances"] = c.validation_utterances;
    n["min_length"] = c.min_length;
    n["max_length"] = c.max_length;
    n["length_skew"] = c.length_skew;
    n["classes"] = c.classes;
    n["channels"] = c.channels;
    n["class_skew"] = c.class_skew;
    n["families"] = c.families;
    n["family_similarity"] = c.family_similarity;
    n["dwell_min"] = c.dwell_min;
    n["dwell_max"] = c.dwell_max;
    n["coarticulation"] = c.coarticulation;
    n["max_shift"] = c.max_shift;
    n["noise"] = c.noise;
    n["seed"] = c.seed;
    return n;
}

CorpusConfig corpus_config_from_yaml(const YAML::Node& node, const std::string& path) {
    CorpusConfig c;
    if (!node) return c;
    yaml::check_keys(node,
                     {"train_utterances", "validation_utterances", "min_length", "max_length", "length_skew", "classes",
                      "channels", "class_skew", "families", "family_similarity", "dwell_min", "dwell_max",
                      "coarticulation", "max_shift", "noise", "seed"},
                     path);
    c.train_utterances = yaml::get_or(node, "train_utterances", path, c.train_utterances);
    c.validation_utterances = yaml::get_or(node, "validation_utterances", path, c.validation_utterances);
    c.min_length = yaml::get_or(node, "min_length", path, c.min_length);
    c.max_length = yaml::get_or(node, "max_length", path, c.max_length);
    c.length_skew = yaml::get_or(node, "length_skew", path, c.length_skew);
    c.classes = yaml::get_or(node, "classes", path, c.classes);
    c.channels = yaml::get_or(node, "channels", path, c.channels);
    c.class_skew = yaml::get_or(node, "class_skew", path, c.class_skew);
    c.families = yaml::get_or(node, "families", path, c.families);
    c.family_similarity = yaml::get_or(node, "family_similarity", path, c.family_similarity);
    c.dwell_min = yaml::get_or(node, "dwell_min", path, c.dwell_min);
    c.dwell_max = yaml::get_or(node, "dwell_max", path, c.dwell_max);
    c.coarticulation = yaml::get_or(node, "coarticulation", path, c.coarticulation);
    c.max_shift = yaml::get_or(node, "max_shift", path, c.max_shift);
    c.noise = yaml::get_or(node, "noise", path, c.noise);
    c.seed = yaml::get_or<std::uint64_t>(node, "seed", path, c.seed);
    c.validate();
    return c;
}

std::size_t Corpus::train_frames() const {
    std::size_t n = 0;
    for (const auto& u : train) n += u.frames;
    return n;
}

std::vector<std::vector<float>> class_templates(const CorpusConfig& cfg) {
    auto rng = stream(cfg.seed, 0);
    const int F = cfg.channels;
    std::uniform_real_distribution<double> center(2.0, F - 3.0);
    std::uniform_real_distribution<double> width(1.2, 3.0);
    std::uniform_real_distribution<double> amp(0.8, 1.6);

    std::vector<std::vector<float>> families(cfg.families, std::vector<float>(F, 0.0f));
    for (auto& fam : families) {
        for (int b = 0; b < 2; ++b) {
            const auto v = bump(F, center(rng), width(rng), amp(rng));
            for (int f = 0; f < F; ++f) fam[f] += v[f];
        }
    }
    std::vector<std::vector<float>> out(cfg.classes, std::vector<float>(F));
    for (int k = 0; k < cfg.classes; ++k) {
        const auto specific = bump(F, center(rng), width(rng), amp(rng) * 1.5);
        const auto& fam = families[k % cfg.families];
        double energy = 0.0;
        for (int f = 0; f < F; ++f) {
            out[k][f] = static_cast<float>(cfg.family_similarity * fam[f] + (1.0 - cfg.family_similarity) * specific[f]);
            energy += out[k][f] * out[k][f];
        }
        const double rms = std::sqrt(energy / F);
        for (auto& v : out[k]) v = static_cast<float>(v / rms);
    }
    return out;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    Corpus corpus;
    corpus.config = cfg;
    const auto templates = class_templates(cfg);
    const auto q = cfg.class_distribution();
    std::vector<double> cum(q.size());
    std::partial_sum(q.begin(), q.end(), cum.begin());
    cum.back() = 1.0;

    auto rng = stream(cfg.seed, 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> dwell(cfg.dwell_min, std::max(cfg.dwell_min, cfg.dwell_max));
    std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
    std::uniform_real_distribution<double> gain(0.8, 1.2);
    const int F = cfg.channels;
    const int co = cfg.coarticulation;

    auto draw_class = [&] {
        const auto it = std::upper_bound(cum.begin(), cum.end(), unif(rng));
        return static_cast<std::uint32_t>(std::min<std::ptrdiff_t>(it - cum.begin(), cum.size() - 1));
    };

    const int total = cfg.train_utterances + cfg.validation_utterances;
    for (int n = 0; n < total; ++n) {
        Utterance u;
        u.id = static_cast<std::uint32_t>(n);
        const double span = cfg.max_length - cfg.min_length + 1;
        u.frames = static_cast<std::size_t>(
            std::min<double>(cfg.max_length, cfg.min_length + std::floor(span * std::pow(unif(rng), cfg.length_skew))));
        const std::size_t T = u.frames;

        std::vector<std::size_t> starts;
        std::vector<std::uint32_t> seg_labels;
        for (std::size_t t = 0; t < T;) {
            starts.push_back(t);
            seg_labels.push_back(draw_class());
            const std::size_t len = cfg.dwell_max == 0 ? T : static_cast<std::size_t>(dwell(rng));
            t += len;
        }
        const int sh = shift(rng);
        const double g = gain(rng);

        u.labels.resize(T);
        u.features.assign(static_cast<std::size_t>(F) * T, 0.0f);
        std::vector<double> column(F);
        for (std::size_t s = 0; s < starts.size(); ++s) {
            const std::size_t begin = starts[s];
            const std::size_t end = s + 1 < starts.size() ? starts[s + 1] : T;
            for (std::size_t t = begin; t < end; ++t) {
                u.labels[t] = seg_labels[s];
                const auto& own = templates[seg_labels[s]];
                for (int f = 0; f < F; ++f) column[f] = own[f];
                // Boundary blending with the neighboring segment's template.
                if (co > 0) {
                    const std::size_t from_start = t - begin;
                    const std::size_t to_end = end - 1 - t;
                    if (s > 0 && from_start < static_cast<std::size_t>(co)) {
                        const double a = 0.5 * (co - static_cast<double>(from_start)) / (co + 1);
                        const auto& other = templates[seg_labels[s - 1]];
                        for (int f = 0; f < F; ++f) column[f] = (1 - a) * column[f] + a * other[f];
                    }
                    if (s + 1 < starts.size() && to_end < static_cast<std::size_t>(co)) {
                        const double a = 0.5 * (co - static_cast<double>(to_end)) / (co + 1);
                        const auto& other = templates[seg_labels[s + 1]];
                        for (int f = 0; f < F; ++f) column[f] = (1 - a) * column[f] + a * other[f];
                    }
                }
                for (int f = 0; f < F; ++f) {
                    const int src = f - sh;
                    const double clean = src >= 0 && src < F ? g * column[src] : 0.0;
                    const double noisy = cfg.noise > 0 ? clean + cfg.noise * gauss(rng) : clean;
                    u.features[static_cast<std::size_t>(f) * T + t] = static_cast<float>(noisy);
                }
            }
        }
        if (n < cfg.train_utterances)
            corpus.train.push_back(std::move(u));
        else
            corpus.validation.push_back(std::move(u));
    }
    return corpus;
}

Window extract_window(const Utterance& utt, std::size_t t, int context) {
    if (t >= utt.frames) {
        throw std::out_of_range("extract_window: frame " + std::to_string(t) + " outside utterance of " +
                                std::to_string(utt.frames) + " frames");
    }
    if (context < 0) throw std::invalid_argument("extract_window: negative context");
    const std::size_t F = utt.frames ? utt.features.size() / utt.frames : 0;
    const std::size_t W = 2 * static_cast<std::size_t>(context) + 1;
    Window w{F, W, std::vector<float>(F * W, 0.0f)};
    for (std::size_t j = 0; j < W; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - context;
        if (src < 0 || src >= static_cast<long>(utt.frames)) continue;
        for (std::size_t f = 0; f < F; ++f) w.values[f * W + j] = utt.feature(f, static_cast<std::size_t>(src));
    }
    return w;
}

FrameSampler::FrameSampler(const std::vector<Utterance>& utterances) {
    if (utterances.empty()) throw std::invalid_argument("FrameSampler: empty corpus");
    for (const auto& u : utterances) {
        if (u.frames == 0) throw std::invalid_argument("FrameSampler: empty utterance");
        total_ += u.frames;
        cumulative_.push_back(total_);
        lengths_.push_back(u.frames);
    }
}

std::uint32_t FrameSampler::sample_utterance(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, total_ - 1);
    const std::size_t r = pick(rng);
    return static_cast<std::uint32_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), r) - cumulative_.begin());
}

FrameRef FrameSampler::operator()(std::mt19937_64& rng) const {
    const auto u = sample_utterance(rng);
    std::uniform_int_distribution<std::size_t> within(0, lengths_[u] - 1);
    return {u, static_cast<std::uint32_t>(within(rng))};
}

std::vector<double> compute_priors(const std::vector<Utterance>& utterances, int classes, double smoothing) {
    if (utterances.empty()) throw std::invalid_argument("compute_priors: empty corpus");
    if (smoothing < 0) throw std::invalid_argument("compute_priors: negative smoothing");
    std::vector<double> counts(classes, smoothing);
    for (const auto& u : utterances)
        for (auto y : u.labels) {
            if (y >= static_cast<std::uint32_t>(classes)) throw std::out_of_range("compute_priors: label out of range");
            counts[y] += 1.0;
        }
    const double z = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (z <= 0) throw std::invalid_argument("compute_priors: no mass");
    for (auto& c : counts) c /= z;
    return counts;
}

std::vector<FrameRef> validation_set(const std::vector<Utterance>& utterances) {
    std::vector<FrameRef> out;
    for (std::size_t u = 0; u < utterances.size(); ++u)
        for (std::size_t t = 0; t < utterances[u].frames; ++t)
            out.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(t)});
    return out;
}

namespace {
constexpr std::uint32_t kCorpusVersion = 1;

void write_utterance(BinaryWriter& w, const Utterance& u) {
    w.u32(u.id);
    w.u32(static_cast<std::uint32_t>(u.frames));
    for (auto y : u.labels) w.u32(y);
    for (float v : u.features) w.f32(v);
}

Utterance read_utterance(BinaryReader& r, std::uint32_t channels, std::uint32_t classes) {
    Utterance u;
    u.id = r.u32();
    u.frames = r.u32();
    if (u.frames == 0 || u.frames > (1u << 24)) throw IoError("corpus: implausible utterance length");
    u.labels.resize(u.frames);
    for (auto& y : u.labels) {
        y = r.u32();
        if (y >= classes) throw IoError("corpus: label " + std::to_string(y) + " out of range");
    }
    u.features.resize(static_cast<std::size_t>(channels) * u.frames);
    for (auto& v : u.features) v = r.f32();
    return u;
}
}  // namespace

void write_corpus(std::ostream& os, const Corpus& corpus, const std::string& provenance) {
    BinaryWriter w(os);
    w.bytes("BLNDCORP");
    w.u32(kCorpusVersion);
    w.u32(static_cast<std::uint32_t>(corpus.config.classes));
    w.u32(static_cast<std::uint32_t>(corpus.config.channels));
    w.u32(static_cast<std::uint32_t>(corpus.train.size()));
    w.u32(static_cast<std::uint32_t>(corpus.validation.size()));
    for (const auto& u : corpus.train) write_utterance(w, u);
    for (const auto& u : corpus.validation) write_utterance(w, u);
    write_provenance(w, provenance);
}

Corpus read_corpus(std::istream& is, std::string* provenance) {
    BinaryReader r(is);
    r.expect_magic("BLNDCORP", "corpus");
    const auto version = r.u32();
    if (version != kCorpusVersion) throw IoError("corpus: unsupported version " + std::to_string(version));
    Corpus c;
    const auto classes = r.u32();
    const auto channels = r.u32();
    const auto n_train = r.u32();
    const auto n_valid = r.u32();
    for (std::uint32_t i = 0; i < n_train; ++i) c.train.push_back(read_utterance(r, channels, classes));
    for (std::uint32_t i = 0; i < n_valid; ++i) c.validation.push_back(read_utterance(r, channels, classes));
    const auto prov = read_provenance(r);
    try {
        const auto node = YAML::Load(prov);
        if (node["corpus"]) c.config = corpus_config_from_yaml(node["corpus"]);
    } catch (const std::exception&) {
        // Foreign provenance text; fall back to header fields.
    }
    c.config.classes = static_cast<int>(classes);
    c.config.channels = static_cast<int>(channels);
    if (provenance) *provenance = prov;
    return c;
}

void save_corpus(const std::string& path, const Corpus& corpus, const std::string& provenance) {
    std::ostringstream os(std::ios::binary);
    write_corpus(os, corpus, provenance);
    write_text_file(path, os.str());
}

Corpus load_corpus(const std::string& path, std::string* provenance) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus " + path);
    try {
        return read_corpus(in, provenance);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

std::string corpus_summary(const Corpus& corpus, int length_bins) {
    std::ostringstream os;
    const auto& cfg = corpus.config;
    os << "# utterance length histogram (train)\n";
    os << "bin_start,bin_end,count\n";
    const int lo = cfg.min_length, hi = cfg.max_length;
    const double width = std::max(1.0, (hi - lo + 1) / static_cast<double>(length_bins));
    std::vector<std::size_t> bins(length_bins, 0);
    for (const auto& u : corpus.train) {
        int b = static_cast<int>((static_cast<double>(u.frames) - lo) / width);
        bins[std::clamp(b, 0, length_bins - 1)]++;
    }
    for (int b = 0; b < length_bins; ++b) {
        os << static_cast<long>(lo + b * width) << ',' << static_cast<long>(lo + (b + 1) * width) - 1 << ','
           << bins[b] << '\n';
    }
    os << "# class histogram (train frames)\n";
    os << "class,count,fraction\n";
    std::vector<std::size_t> counts(cfg.classes, 0);
    std::size_t total = 0;
    for (const auto& u : corpus.train)
        for (auto y : u.labels) {
            counts[y]++;
            total++;
        }
    for (int k = 0; k < cfg.classes; ++k) {
        os << k << ',' << counts[k] << ',' << static_cast<double>(counts[k]) / std::max<std::size_t>(1, total) << '\n';
    }
    return os.str();
}

}  // namespace blend::corpus
