#include "blend/metrics.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "blend/parallel.hpp"

namespace blend::metrics {

std::uint32_t argmax(std::span<const double> p) {
    if (p.empty()) throw std::invalid_argument("argmax: empty distribution");
    std::uint32_t best = 0;
    for (std::uint32_t k = 1; k < p.size(); ++k)
        if (p[k] > p[best]) best = k;
    return best;
}

std::vector<std::uint32_t> predictions(std::span<const Posteriors> posteriors) {
    std::vector<std::uint32_t> out;
    out.reserve(posteriors.size());
    for (const auto& p : posteriors) out.push_back(argmax(p));
    return out;
}

double frame_error_rate(std::span<const std::uint32_t> preds, std::span<const std::uint32_t> labels) {
    if (preds.size() != labels.size()) throw std::invalid_argument("frame_error_rate: prediction/label count mismatch");
    if (labels.empty()) throw std::invalid_argument("frame_error_rate: empty set");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) wrong += preds[i] != labels[i];
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double frame_error_rate(std::span<const Posteriors> posteriors, std::span<const std::uint32_t> labels) {
    const auto preds = predictions(posteriors);
    return frame_error_rate(std::span<const std::uint32_t>(preds), labels);
}

std::vector<std::uint32_t> frame_labels(const std::vector<corpus::Utterance>& utterances) {
    std::vector<std::uint32_t> out;
    for (const auto& u : utterances) out.insert(out.end(), u.labels.begin(), u.labels.end());
    return out;
}

std::vector<Posteriors> frame_posteriors(models::Model<float>& model, const std::vector<corpus::Utterance>& utterances,
                                         int jobs) {
    const auto frames = corpus::validation_set(utterances);
    std::vector<Posteriors> out(frames.size());
    const std::size_t workers = static_cast<std::size_t>(std::max(1, jobs));
    std::vector<std::unique_ptr<models::Model<float>>> replicas;
    for (std::size_t w = 1; w < workers; ++w) replicas.push_back(model.clone());
    parallel_for(frames.size(), jobs, [&](std::size_t i, std::size_t w) {
        auto& m = w == 0 ? model : *replicas[w - 1];
        out[i] = models::predict_posteriors(m, corpus::extract_window(utterances[frames[i].utterance], frames[i].frame, m.context()));
    });
    return out;
}

double frame_error_rate(models::Model<float>& model, const std::vector<corpus::Utterance>& utterances, int jobs) {
    const auto posts = frame_posteriors(model, utterances, jobs);
    const auto labels = frame_labels(utterances);
    return frame_error_rate(std::span<const Posteriors>(posts), labels);
}

double word_error_rate(const AlignmentCounts& c) {
    if (c.reference_length == 0) throw std::domain_error("word_error_rate: empty reference (N = 0)");
    return 100.0 * static_cast<double>(c.errors()) / static_cast<double>(c.reference_length);
}

std::vector<std::uint32_t> collapse_repeats(std::span<const std::uint32_t> frames) {
    std::vector<std::uint32_t> out;
    for (auto y : frames)
        if (out.empty() || out.back() != y) out.push_back(y);
    return out;
}

std::vector<std::uint32_t> decode_proxy(std::span<const Posteriors> frames, std::span<const double> priors) {
    for (double p : priors)
        if (!(p > 0.0)) throw std::invalid_argument("decode_proxy: priors must be positive");
    std::vector<std::uint32_t> best;
    best.reserve(frames.size());
    std::vector<double> scaled(priors.size());
    for (const auto& p : frames) {
        if (p.size() != priors.size()) throw std::invalid_argument("decode_proxy: posterior/prior size mismatch");
        for (std::size_t k = 0; k < p.size(); ++k) scaled[k] = p[k] / priors[k];
        best.push_back(argmax(scaled));
    }
    return collapse_repeats(best);
}

std::vector<std::uint32_t> decode_proxy(models::Model<float>& model, const corpus::Utterance& utterance,
                                        std::span<const double> priors) {
    std::vector<Posteriors> posts;
    posts.reserve(utterance.frames);
    for (std::size_t t = 0; t < utterance.frames; ++t)
        posts.push_back(models::predict_posteriors(model, corpus::extract_window(utterance, t)));
    return decode_proxy(posts, priors);
}

AlignmentCounts proxy_alignment(std::span<const Posteriors> posteriors,
                                const std::vector<corpus::Utterance>& utterances, std::span<const double> priors) {
    AlignmentCounts total;
    std::size_t offset = 0;
    for (const auto& u : utterances) {
        if (offset + u.frames > posteriors.size()) throw std::invalid_argument("proxy_alignment: too few posteriors");
        const auto hyp = decode_proxy(posteriors.subspan(offset, u.frames), priors);
        const auto ref = collapse_repeats(u.labels);
        total += align(ref, hyp);
        offset += u.frames;
    }
    if (offset != posteriors.size()) throw std::invalid_argument("proxy_alignment: too many posteriors");
    return total;
}

double wer_proxy(std::span<const Posteriors> posteriors, const std::vector<corpus::Utterance>& utterances,
                 std::span<const double> priors) {
    return word_error_rate(proxy_alignment(posteriors, utterances, priors));
}

ErrorOverlap error_overlap(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                           std::span<const std::uint32_t> labels) {
    if (a.size() != labels.size() || b.size() != labels.size())
        throw std::invalid_argument("error_overlap: prediction/label count mismatch");
    ErrorOverlap o;
    o.frames = labels.size();
    std::size_t agree = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool ea = a[i] != labels[i], eb = b[i] != labels[i];
        o.errors_a += ea;
        o.errors_b += eb;
        o.both += ea && eb;
        o.either += ea || eb;
        agree += a[i] == b[i];
    }
    o.iou = o.either ? static_cast<double>(o.both) / static_cast<double>(o.either) : 1.0;
    o.agreement = o.frames ? static_cast<double>(agree) / static_cast<double>(o.frames) : 1.0;
    return o;
}

ErrorOverlap error_overlap(std::span<const Posteriors> post_a, std::span<const Posteriors> post_b,
                           std::span<const std::uint32_t> labels) {
    const auto a = predictions(post_a), b = predictions(post_b);
    return error_overlap(std::span<const std::uint32_t>(a), std::span<const std::uint32_t>(b), labels);
}

CostReport cost_report(std::span<const CostEntry> entries, std::span<const models::Window> windows,
                       std::size_t min_windows) {
    if (entries.empty()) throw std::invalid_argument("cost_report: no models");
    if (windows.empty()) throw std::invalid_argument("cost_report: no windows");
    CostReport report;
    report.windows = std::max(min_windows, windows.size());
    for (const auto& e : entries) {
        if (e.members.empty()) throw std::invalid_argument("cost_report: entry '" + e.name + "' has no members");
        CostRow row;
        row.name = e.name;
        for (auto* m : e.members) {
            row.macs += models::forward_macs(m->config());
            row.parameters += m->params().count();
        }
        // Warm-up pass so allocation of first-use buffers is not timed.
        for (auto* m : e.members) models::predict_posteriors(*m, windows[0]);
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < report.windows; ++i) {
            const auto& w = windows[i % windows.size()];
            for (auto* m : e.members) models::predict_posteriors(*m, w);
        }
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        row.seconds_per_window = elapsed.count() / static_cast<double>(report.windows);
        report.rows.push_back(row);
    }
    const auto& base = report.rows.front();
    for (auto& r : report.rows) {
        r.mac_factor = static_cast<double>(r.macs) / static_cast<double>(base.macs);
        r.time_factor = r.seconds_per_window / base.seconds_per_window;
    }
    return report;
}

std::string cost_report_csv(const CostReport& report) {
    std::ostringstream os;
    os << "# windows timed: " << report.windows << '\n';
    os << "model,parameters,macs,ms_per_window,mac_factor,time_factor\n";
    os << std::setprecision(6);
    for (const auto& r : report.rows) {
        os << r.name << ',' << r.parameters << ',' << r.macs << ',' << r.seconds_per_window * 1e3 << ','
           << r.mac_factor << ',' << r.time_factor << '\n';
    }
    return os.str();
}

std::string format_metrics_row(const MetricsRow& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << r.experiment << ',' << r.seed << ',' << r.lambda << ',' << r.c << ',' << r.gamma << ',' << r.fer << ','
       << r.wer_proxy << ',' << r.cost_factor;
    return os.str();
}

std::string metrics_csv(std::span<const MetricsRow> rows,
                        const std::vector<std::pair<std::string, std::string>>& provenance) {
    std::ostringstream os;
    for (const auto& [k, v] : provenance) os << "# " << k << ": " << v << '\n';
    os << kMetricsHeader << '\n';
    for (const auto& r : rows) os << format_metrics_row(r) << '\n';
    return os.str();
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::vector<MetricsRow> rows;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != kMetricsHeader) throw std::invalid_argument("metrics csv: unexpected header '" + line + "'");
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 8) throw std::invalid_argument("metrics csv: expected 8 fields in '" + line + "'");
        MetricsRow r;
        r.experiment = f[0];
        r.seed = std::stoull(f[1]);
        r.lambda = std::stod(f[2]);
        r.c = std::stoi(f[3]);
        r.gamma = std::stod(f[4]);
        r.fer = std::stod(f[5]);
        r.wer_proxy = std::stod(f[6]);
        r.cost_factor = std::stod(f[7]);
        rows.push_back(r);
    }
    if (!header) throw std::invalid_argument("metrics csv: missing header");
    return rows;
}

}  // namespace blend::metrics
