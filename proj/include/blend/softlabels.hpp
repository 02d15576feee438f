#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "blend/corpus.hpp"
#include "blend/models/model.hpp"

namespace blend::softlabels {

using corpus::FrameRef;
using models::Posteriors;

/// Truncated teacher posterior for one training frame. `ids` ascend, `probs`
/// follow the same order and are renormalized; `covered` is the teacher mass
/// of the retained classes before renormalization.
struct TopCRecord {
    FrameRef frame;
    std::vector<std::uint32_t> ids;
    std::vector<double> probs;
    double covered = 0.0;

    std::size_t size() const noexcept { return ids.size(); }
    friend bool operator==(const TopCRecord&, const TopCRecord&) = default;
};

/// Sorts classes by descending probability (ascending id on ties) and keeps
/// the shortest prefix whose mass reaches `tau`, capped at `c_max` classes.
/// Throws std::invalid_argument if `p` is not a distribution (mass off by more
/// than 1e-6, negative or non-finite entries) or the bounds are invalid.
TopCRecord truncate_posterior(std::span<const double> p, int c_max, double tau, FrameRef frame = {});

/// Average top-C mass over a set of distributions: M(C).
double mass_coverage(std::span<const Posteriors> predictions, int c);

class SoftLabelStore {
public:
    SoftLabelStore() = default;
    /// `lengths[u]` is the frame count of training utterance u. Records must
    /// later be supplied for every frame, utterance-major.
    SoftLabelStore(int classes, int c_max, double tau, std::vector<std::size_t> lengths, std::string teacher = {});

    int classes() const noexcept { return classes_; }
    int c_max() const noexcept { return c_max_; }
    double tau() const noexcept { return tau_; }
    const std::string& teacher() const noexcept { return teacher_; }
    void set_teacher(std::string t) { teacher_ = std::move(t); }
    const std::vector<std::size_t>& lengths() const noexcept { return lengths_; }

    std::size_t size() const noexcept { return records_.size(); }
    bool complete() const noexcept { return records_.size() == offsets_.back(); }
    const std::vector<TopCRecord>& records() const noexcept { return records_; }

    /// Appends the record of the next frame in utterance-major order; the
    /// record's frame id must match that position.
    void append(TopCRecord record);

    const TopCRecord& at(FrameRef frame) const;
    const TopCRecord& at(std::uint32_t utterance, std::uint32_t frame) const { return at(FrameRef{utterance, frame}); }

    friend bool operator==(const SoftLabelStore&, const SoftLabelStore&) = default;

private:
    int classes_ = 0;
    int c_max_ = 0;
    double tau_ = 1.0;
    std::string teacher_;
    std::vector<std::size_t> lengths_;
    std::vector<std::size_t> offsets_{0};
    std::vector<TopCRecord> records_;
};

/// M(C) over the store's own (renormalized) records.
double mass_coverage(const SoftLabelStore& store, int c);

/// Posteriors of the mixed teacher for every training frame, utterance-major.
/// Each teacher sees windows of its own width. Teachers run on independent
/// clones when jobs > 1; output order is fixed.
std::vector<Posteriors> teacher_posteriors(std::span<models::Model<float>* const> teachers,
                                           std::span<const double> weights,
                                           const std::vector<corpus::Utterance>& utterances, int jobs = 1);

/// Truncates precomputed per-frame posteriors into a store.
SoftLabelStore store_from_posteriors(std::span<const Posteriors> posteriors,
                                     const std::vector<corpus::Utterance>& utterances, int classes, int c_max,
                                     double tau);

/// Runs the (mixed) teacher over every training frame once and truncates.
/// Weights must be nonnegative and sum to 1; teachers must agree with the
/// corpus on the class count.
SoftLabelStore build_store(std::span<models::Model<float>* const> teachers, std::span<const double> weights,
                           const corpus::Corpus& corpus, int c_max, double tau, int jobs = 1);

struct StoreStats {
    int c_max = 0;
    std::size_t records = 0;
    double mean_retained = 0.0;
    double mean_covered = 0.0;  // fraction in [0, 1]
    /// histogram[n] = number of records retaining n classes (n <= c_max).
    std::vector<std::size_t> retained_histogram;
};

StoreStats store_stats(const SoftLabelStore& store);

/// Two-row truncation table: one column per cap, coverage in percent (two
/// decimals) and average retained classes (two decimals).
std::string truncation_table(std::span<const StoreStats> columns);

/// Binary store file (little-endian):
///   "BLNDSOFT" u32 version u32 K u32 C_max f64 tau u32 record count
///   per record: u32 utterance, u32 frame, u16 n, u32 ids[n], f32 probs[n],
///               f32 covered
///   "PROV" u32 length, provenance text
/// Records are utterance-major, so the frame index is rebuilt on read.
/// Probabilities are stored in 32 bits, so a round trip reproduces
/// quantized(store) exactly.
void write_store(std::ostream& os, const SoftLabelStore& store, const std::string& provenance);
SoftLabelStore read_store(std::istream& is, std::string* provenance = nullptr);
void save_store(const std::string& path, const SoftLabelStore& store, const std::string& provenance);
SoftLabelStore load_store(const std::string& path, std::string* provenance = nullptr);

/// Copy with probabilities and covered mass rounded to 32-bit floats.
SoftLabelStore quantized(const SoftLabelStore& store);

}  // namespace blend::softlabels
