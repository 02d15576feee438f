#include "blend/softlabels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <yaml-cpp/yaml.h>

#include "blend/io.hpp"
#include "blend/parallel.hpp"

namespace blend::softlabels {

namespace {

void check_distribution(std::span<const double> p, const char* what) {
    if (p.empty()) throw std::invalid_argument(std::string(what) + ": empty distribution");
    double mass = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0) throw std::invalid_argument(std::string(what) + ": negative or non-finite probability");
        mass += v;
    }
    if (std::abs(mass - 1.0) > 1e-6) {
        std::ostringstream os;
        os << what << ": distribution is not normalized (mass " << std::setprecision(12) << mass << ")";
        throw std::invalid_argument(os.str());
    }
}

/// Class ids ordered by descending probability, ascending id on ties.
std::vector<std::uint32_t> ranked(std::span<const double> p) {
    std::vector<std::uint32_t> order(p.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return p[a] > p[b]; });
    return order;
}

double top_mass(std::span<const double> p, int c) {
    if (c >= static_cast<int>(p.size())) return std::accumulate(p.begin(), p.end(), 0.0);
    std::vector<double> v(p.begin(), p.end());
    std::nth_element(v.begin(), v.begin() + c, v.end(), std::greater<>());
    return std::accumulate(v.begin(), v.begin() + c, 0.0);
}

constexpr std::uint32_t kStoreVersion = 1;

}  // namespace

TopCRecord truncate_posterior(std::span<const double> p, int c_max, double tau, FrameRef frame) {
    if (c_max < 1) throw std::invalid_argument("truncate_posterior: C_max must be at least 1");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("truncate_posterior: tau must lie in (0, 1]");
    check_distribution(p, "truncate_posterior");

    const auto order = ranked(p);
    TopCRecord rec;
    rec.frame = frame;
    double mass = 0.0;
    for (std::size_t r = 0; r < order.size() && static_cast<int>(r) < c_max; ++r) {
        const double v = p[order[r]];
        if (v <= 0.0) break;
        rec.ids.push_back(order[r]);
        mass += v;
        if (mass >= tau) break;
    }
    rec.covered = mass;
    std::sort(rec.ids.begin(), rec.ids.end());
    rec.probs.reserve(rec.ids.size());
    for (auto id : rec.ids) rec.probs.push_back(p[id] / mass);
    return rec;
}

double mass_coverage(std::span<const Posteriors> predictions, int c) {
    if (c < 1) throw std::invalid_argument("mass_coverage: C must be at least 1");
    if (predictions.empty()) throw std::invalid_argument("mass_coverage: no predictions");
    double total = 0.0;
    for (const auto& p : predictions) total += top_mass(p, c);
    return total / static_cast<double>(predictions.size());
}

SoftLabelStore::SoftLabelStore(int classes, int c_max, double tau, std::vector<std::size_t> lengths,
                               std::string teacher)
    : classes_(classes), c_max_(c_max), tau_(tau), teacher_(std::move(teacher)), lengths_(std::move(lengths)) {
    if (classes_ < 1) throw std::invalid_argument("SoftLabelStore: class count must be positive");
    if (c_max_ < 1) throw std::invalid_argument("SoftLabelStore: C_max must be at least 1");
    for (auto n : lengths_) offsets_.push_back(offsets_.back() + n);
    records_.reserve(offsets_.back());
}

void SoftLabelStore::append(TopCRecord record) {
    if (complete()) throw std::logic_error("SoftLabelStore: more records than frames");
    const auto pos = records_.size();
    const auto u = static_cast<std::size_t>(std::upper_bound(offsets_.begin(), offsets_.end(), pos) - offsets_.begin() - 1);
    const auto t = pos - offsets_[u];
    if (record.frame.utterance != u || record.frame.frame != t) {
        throw std::invalid_argument("SoftLabelStore: record for (" + std::to_string(record.frame.utterance) + "," +
                                    std::to_string(record.frame.frame) + ") arrived where (" + std::to_string(u) +
                                    "," + std::to_string(t) + ") was expected");
    }
    if (record.ids.size() != record.probs.size() || record.ids.empty() ||
        record.ids.size() > static_cast<std::size_t>(c_max_)) {
        throw std::invalid_argument("SoftLabelStore: malformed record");
    }
    for (std::size_t i = 0; i < record.ids.size(); ++i) {
        if (record.ids[i] >= static_cast<std::uint32_t>(classes_) || (i > 0 && record.ids[i] <= record.ids[i - 1]))
            throw std::invalid_argument("SoftLabelStore: class ids must ascend within [0, K)");
    }
    records_.push_back(std::move(record));
}

const TopCRecord& SoftLabelStore::at(FrameRef frame) const {
    if (frame.utterance >= lengths_.size() || frame.frame >= lengths_[frame.utterance]) {
        throw std::out_of_range("SoftLabelStore: no frame (" + std::to_string(frame.utterance) + "," +
                                std::to_string(frame.frame) + ")");
    }
    const auto idx = offsets_[frame.utterance] + frame.frame;
    if (idx >= records_.size()) throw std::out_of_range("SoftLabelStore: store is incomplete");
    return records_[idx];
}

double mass_coverage(const SoftLabelStore& store, int c) {
    if (c < 1) throw std::invalid_argument("mass_coverage: C must be at least 1");
    if (store.size() == 0) throw std::invalid_argument("mass_coverage: empty store");
    double total = 0.0;
    for (const auto& r : store.records()) total += top_mass(r.probs, c);
    return total / static_cast<double>(store.size());
}

std::vector<Posteriors> teacher_posteriors(std::span<models::Model<float>* const> teachers,
                                           std::span<const double> weights,
                                           const std::vector<corpus::Utterance>& utterances, int jobs) {
    if (teachers.empty()) throw std::invalid_argument("teacher_posteriors: no teachers");
    if (weights.size() != teachers.size()) throw std::invalid_argument("teacher_posteriors: one weight per teacher");
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("teacher_posteriors: weights must be nonnegative");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("teacher_posteriors: weights must sum to 1");
    const int K = teachers.front()->classes();
    for (auto* t : teachers)
        if (t->classes() != K) throw std::invalid_argument("teacher_posteriors: teachers disagree on class count");

    std::vector<FrameRef> frames = corpus::validation_set(utterances);
    std::vector<Posteriors> out(frames.size());

    const std::size_t workers = static_cast<std::size_t>(std::max(1, jobs));
    std::vector<std::vector<std::unique_ptr<models::Model<float>>>> replicas(workers);
    for (std::size_t w = 1; w < workers; ++w)
        for (auto* t : teachers) replicas[w].push_back(t->clone());

    parallel_for(frames.size(), jobs, [&](std::size_t i, std::size_t w) {
        const auto& f = frames[i];
        Posteriors mix(static_cast<std::size_t>(K), 0.0);
        for (std::size_t m = 0; m < teachers.size(); ++m) {
            auto& model = w == 0 ? *teachers[m] : *replicas[w][m];
            const auto window = corpus::extract_window(utterances[f.utterance], f.frame, model.context());
            const auto p = models::predict_posteriors(model, window);
            for (int k = 0; k < K; ++k) mix[k] += weights[m] * p[k];
        }
        out[i] = std::move(mix);
    });
    return out;
}

SoftLabelStore store_from_posteriors(std::span<const Posteriors> posteriors,
                                     const std::vector<corpus::Utterance>& utterances, int classes, int c_max,
                                     double tau) {
    std::vector<std::size_t> lengths;
    for (const auto& u : utterances) lengths.push_back(u.frames);
    SoftLabelStore store(classes, c_max, tau, lengths);
    if (posteriors.size() != std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}))
        throw std::invalid_argument("store_from_posteriors: one posterior per training frame required");
    std::size_t i = 0;
    for (std::uint32_t u = 0; u < utterances.size(); ++u) {
        for (std::uint32_t t = 0; t < utterances[u].frames; ++t, ++i) {
            if (posteriors[i].size() != static_cast<std::size_t>(classes))
                throw std::invalid_argument("store_from_posteriors: posterior has wrong class count");
            store.append(truncate_posterior(posteriors[i], c_max, tau, {u, t}));
        }
    }
    return store;
}

SoftLabelStore build_store(std::span<models::Model<float>* const> teachers, std::span<const double> weights,
                           const corpus::Corpus& corpus, int c_max, double tau, int jobs) {
    for (auto* t : teachers) {
        if (t->classes() != corpus.classes()) {
            throw std::invalid_argument("build_store: teacher predicts " + std::to_string(t->classes()) +
                                        " classes, corpus has " + std::to_string(corpus.classes()));
        }
    }
    const auto posts = teacher_posteriors(teachers, weights, corpus.train, jobs);
    return store_from_posteriors(posts, corpus.train, corpus.classes(), c_max, tau);
}

StoreStats store_stats(const SoftLabelStore& store) {
    if (store.size() == 0) throw std::invalid_argument("store_stats: empty store");
    StoreStats s;
    s.c_max = store.c_max();
    s.records = store.size();
    s.retained_histogram.assign(static_cast<std::size_t>(store.c_max()) + 1, 0);
    double retained = 0.0, covered = 0.0;
    for (const auto& r : store.records()) {
        retained += static_cast<double>(r.size());
        covered += r.covered;
        s.retained_histogram[r.size()]++;
    }
    s.mean_retained = retained / static_cast<double>(s.records);
    s.mean_covered = covered / static_cast<double>(s.records);
    return s;
}

std::string truncation_table(std::span<const StoreStats> columns) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "max classes retained";
    for (const auto& c : columns) os << ',' << c.c_max;
    os << "\naverage mass covered (%)";
    for (const auto& c : columns) os << ',' << 100.0 * c.mean_covered;
    os << "\naverage classes retained";
    for (const auto& c : columns) os << ',' << c.mean_retained;
    os << '\n';
    return os.str();
}

void write_store(std::ostream& os, const SoftLabelStore& store, const std::string& provenance) {
    if (!store.complete()) throw IoError("store: refusing to write an incomplete store");
    BinaryWriter w(os);
    w.bytes("BLNDSOFT");
    w.u32(kStoreVersion);
    w.u32(static_cast<std::uint32_t>(store.classes()));
    w.u32(static_cast<std::uint32_t>(store.c_max()));
    w.f64(store.tau());
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& r : store.records()) {
        w.u32(r.frame.utterance);
        w.u32(r.frame.frame);
        w.u16(static_cast<std::uint16_t>(r.size()));
        for (auto id : r.ids) w.u32(id);
        for (double p : r.probs) w.f32(static_cast<float>(p));
        w.f32(static_cast<float>(r.covered));
    }
    write_provenance(w, provenance);
}

SoftLabelStore read_store(std::istream& is, std::string* provenance) {
    BinaryReader r(is);
    r.expect_magic("BLNDSOFT", "store");
    const auto version = r.u32();
    if (version != kStoreVersion) throw IoError("store: unsupported version " + std::to_string(version));
    const auto K = r.u32();
    const auto c_max = r.u32();
    const auto tau = r.f64();
    const auto count = r.u32();
    if (K == 0 || c_max == 0 || c_max > 65535) throw IoError("store: bad header");

    std::vector<TopCRecord> records(count);
    std::vector<std::size_t> lengths;
    for (std::uint32_t i = 0; i < count; ++i) {
        auto& rec = records[i];
        rec.frame.utterance = r.u32();
        rec.frame.frame = r.u32();
        const auto n = r.u16();
        if (n == 0 || n > c_max) throw IoError("store: record " + std::to_string(i) + " retains " + std::to_string(n) + " classes");
        rec.ids.resize(n);
        rec.probs.resize(n);
        for (auto& id : rec.ids) id = r.u32();
        for (auto& p : rec.probs) p = r.f32();
        rec.covered = r.f32();
        if (rec.frame.utterance == lengths.size() && rec.frame.frame == 0) {
            lengths.push_back(1);
        } else if (!lengths.empty() && rec.frame.utterance + 1 == lengths.size() && rec.frame.frame == lengths.back()) {
            lengths.back()++;
        } else {
            throw IoError("store: records are not in utterance-major order at record " + std::to_string(i));
        }
    }
    const auto prov = read_provenance(r);
    std::string teacher;
    try {
        const auto node = YAML::Load(prov);
        if (node.IsMap() && node["teacher"]) teacher = node["teacher"].as<std::string>();
    } catch (const std::exception&) {
        // Provenance is informational; unparsable text leaves the teacher blank.
    }
    SoftLabelStore store(static_cast<int>(K), static_cast<int>(c_max), tau, lengths, teacher);
    try {
        for (auto& rec : records) store.append(std::move(rec));
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("store: ") + e.what());
    }
    if (provenance) *provenance = prov;
    return store;
}

void save_store(const std::string& path, const SoftLabelStore& store, const std::string& provenance) {
    std::ostringstream os(std::ios::binary);
    write_store(os, store, provenance);
    write_text_file(path, os.str());
}

SoftLabelStore load_store(const std::string& path, std::string* provenance) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open store " + path);
    try {
        return read_store(in, provenance);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

SoftLabelStore quantized(const SoftLabelStore& store) {
    SoftLabelStore out(store.classes(), store.c_max(), store.tau(), store.lengths(), store.teacher());
    for (auto rec : store.records()) {
        for (auto& p : rec.probs) p = static_cast<float>(p);
        rec.covered = static_cast<float>(rec.covered);
        out.append(std::move(rec));
    }
    return out;
}

}  // namespace blend::softlabels
