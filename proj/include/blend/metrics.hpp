#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blend/corpus.hpp"
#include "blend/models/model.hpp"

namespace blend::metrics {

using models::Posteriors;

/// Index of the largest entry; the lowest index wins ties.
std::uint32_t argmax(std::span<const double> p);

/// Percent of frames whose argmax differs from the label.
double frame_error_rate(std::span<const Posteriors> posteriors, std::span<const std::uint32_t> labels);
double frame_error_rate(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels);

/// Labels of every frame, utterance-major (the order of validation_set).
std::vector<std::uint32_t> frame_labels(const std::vector<corpus::Utterance>& utterances);

/// Posteriors for every frame of `utterances`, utterance-major. Work is split
/// over `jobs` model clones; results do not depend on `jobs`.
std::vector<Posteriors> frame_posteriors(models::Model<float>& model, const std::vector<corpus::Utterance>& utterances,
                                         int jobs = 1);

double frame_error_rate(models::Model<float>& model, const std::vector<corpus::Utterance>& utterances, int jobs = 1);

struct AlignmentCounts {
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;
    std::size_t reference_length = 0;

    std::size_t errors() const noexcept { return substitutions + deletions + insertions; }
    AlignmentCounts& operator+=(const AlignmentCounts& o) {
        substitutions += o.substitutions;
        deletions += o.deletions;
        insertions += o.insertions;
        reference_length += o.reference_length;
        return *this;
    }
    friend bool operator==(const AlignmentCounts&, const AlignmentCounts&) = default;
};

/// Unit-cost minimum edit alignment of hypothesis to reference. Among
/// alignments with the fewest errors, the one with the fewest insertions plus
/// deletions wins; that fixes S, D and I uniquely. The path is traced from the
/// start of both sequences preferring diagonal moves, then deletions, then
/// insertions, so substitutions sit as far left as the tie allows.
template <typename Token>
AlignmentCounts align(std::span<const Token> ref, std::span<const Token> hyp) {
    struct Cell {
        std::size_t cost, gaps;
        bool operator<(const Cell& o) const { return cost != o.cost ? cost < o.cost : gaps < o.gaps; }
    };
    const std::size_t n = ref.size(), m = hyp.size();
    // at(i, j): best alignment of the suffixes ref[i..] and hyp[j..].
    std::vector<Cell> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> Cell& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, m) = {n - i, n - i};
    for (std::size_t j = 0; j <= m; ++j) at(n, j) = {m - j, m - j};
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = m; j-- > 0;) {
            const std::size_t sub = ref[i] == hyp[j] ? 0 : 1;
            Cell best{at(i + 1, j + 1).cost + sub, at(i + 1, j + 1).gaps};
            const Cell del{at(i + 1, j).cost + 1, at(i + 1, j).gaps + 1};
            const Cell ins{at(i, j + 1).cost + 1, at(i, j + 1).gaps + 1};
            if (del < best) best = del;
            if (ins < best) best = ins;
            at(i, j) = best;
        }
    }
    AlignmentCounts c;
    c.reference_length = n;
    std::size_t i = 0, j = 0;
    while (i < n || j < m) {
        const Cell here = at(i, j);
        if (i < n && j < m) {
            const std::size_t sub = ref[i] == hyp[j] ? 0 : 1;
            const Cell& diag = at(i + 1, j + 1);
            if (diag.cost + sub == here.cost && diag.gaps == here.gaps) {
                c.substitutions += sub;
                ++i;
                ++j;
                continue;
            }
        }
        if (i < n) {
            const Cell& next = at(i + 1, j);
            if (next.cost + 1 == here.cost && next.gaps + 1 == here.gaps) {
                ++c.deletions;
                ++i;
                continue;
            }
        }
        ++c.insertions;
        ++j;
    }
    return c;
}

inline AlignmentCounts align(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    return align<std::string>(std::span<const std::string>(ref), std::span<const std::string>(hyp));
}
inline AlignmentCounts align(const std::vector<std::uint32_t>& ref, const std::vector<std::uint32_t>& hyp) {
    return align<std::uint32_t>(std::span<const std::uint32_t>(ref), std::span<const std::uint32_t>(hyp));
}

/// (S + D + I) / N * 100. Throws std::domain_error when N == 0.
double word_error_rate(const AlignmentCounts& counts);

/// Runs of equal labels become one token: 1 1 2 2 2 1 -> 1 2 1.
std::vector<std::uint32_t> collapse_repeats(std::span<const std::uint32_t> frames);

/// Token sequence of the decoding proxy: per-frame argmax of p / prior,
/// repeats collapsed. Priors must be positive.
std::vector<std::uint32_t> decode_proxy(std::span<const Posteriors> frames, std::span<const double> priors);
std::vector<std::uint32_t> decode_proxy(models::Model<float>& model, const corpus::Utterance& utterance,
                                        std::span<const double> priors);

/// Token error rate of decode_proxy against the collapsed reference labels,
/// pooled over utterances. `posteriors` covers all frames utterance-major.
AlignmentCounts proxy_alignment(std::span<const Posteriors> posteriors,
                                const std::vector<corpus::Utterance>& utterances, std::span<const double> priors);
double wer_proxy(std::span<const Posteriors> posteriors, const std::vector<corpus::Utterance>& utterances,
                 std::span<const double> priors);

struct ErrorOverlap {
    std::size_t frames = 0;
    std::size_t errors_a = 0;
    std::size_t errors_b = 0;
    std::size_t both = 0;
    std::size_t either = 0;
    /// |A and B| / |A or B|; 1 when neither model errs.
    double iou = 1.0;
    /// Fraction of frames on which the two predictions coincide.
    double agreement = 1.0;
};

ErrorOverlap error_overlap(std::span<const std::uint32_t> pred_a, std::span<const std::uint32_t> pred_b,
                           std::span<const std::uint32_t> labels);
ErrorOverlap error_overlap(std::span<const Posteriors> post_a, std::span<const Posteriors> post_b,
                           std::span<const std::uint32_t> labels);

std::vector<std::uint32_t> predictions(std::span<const Posteriors> posteriors);

struct CostEntry {
    std::string name;
    std::vector<models::Model<float>*> members;  // one for a single model, several for an ensemble
};

struct CostRow {
    std::string name;
    std::size_t parameters = 0;
    std::uint64_t macs = 0;
    double seconds_per_window = 0.0;
    double mac_factor = 1.0;
    double time_factor = 1.0;
};

struct CostReport {
    std::vector<CostRow> rows;  // rows[0] is the baseline
    std::size_t windows = 0;
};

/// Analytic multiply-accumulate counts from configs and mean wall time per
/// window over `windows` (at least 1000) timed forward passes. Factors are
/// relative to entries[0].
CostReport cost_report(std::span<const CostEntry> entries, std::span<const models::Window> windows,
                       std::size_t min_windows = 1000);

std::string cost_report_csv(const CostReport& report);

/// One row of the metrics CSV.
struct MetricsRow {
    std::string experiment;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    int c = 0;
    double gamma = 0.0;
    double fer = 0.0;
    double wer_proxy = 0.0;
    double cost_factor = 1.0;

    friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline constexpr const char* kMetricsHeader = "experiment,seed,lambda,C,gamma,FER,WER_proxy,cost_factor";

/// Provenance lines ("# key: value") followed by the header and rows.
std::string metrics_csv(std::span<const MetricsRow> rows, const std::vector<std::pair<std::string, std::string>>& provenance);
std::string format_metrics_row(const MetricsRow& row);
/// Parses the output of metrics_csv; '#' lines are skipped.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

}  // namespace blend::metrics
