#include "blend/blending.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace blend::blending {

Posteriors ensemble_posterior(std::span<const Posteriors> members, std::span<const double> weights) {
    if (members.empty()) throw std::invalid_argument("ensemble_posterior: no members");
    if (members.size() != weights.size()) throw std::invalid_argument("ensemble_posterior: one weight per member");
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("ensemble_posterior: weights must be nonnegative");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("ensemble_posterior: weights must sum to 1");
    const auto K = members.front().size();
    Posteriors out(K, 0.0);
    for (std::size_t m = 0; m < members.size(); ++m) {
        if (members[m].size() != K) {
            throw std::invalid_argument("ensemble_posterior: member " + std::to_string(m) + " has " +
                                        std::to_string(members[m].size()) + " classes, expected " + std::to_string(K));
        }
        for (std::size_t k = 0; k < K; ++k) out[k] += weights[m] * members[m][k];
    }
    return out;
}

Posteriors ensemble_posterior(const Posteriors& lstm, const Posteriors& cnn, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("ensemble_posterior: gamma must lie in [0,1]");
    const Posteriors members[2] = {lstm, cnn};
    const double weights[2] = {gamma, 1.0 - gamma};
    return ensemble_posterior(members, weights);
}

void check_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("blended_loss: lambda " + std::to_string(lambda) + " outside [0,1]");
}

namespace {
std::vector<double> normalized_probs(const TopCRecord& record) {
    double z = 0.0;
    for (double p : record.probs) z += p;
    if (!(z > 0.0)) throw std::invalid_argument("blended_loss: record has no mass");
    std::vector<double> out(record.probs);
    for (double& p : out) p /= z;
    return out;
}
}  // namespace

double soft_cross_entropy(const TopCRecord& record, std::span<const double> q) {
    const auto p = normalized_probs(record);
    double loss = 0.0;
    for (std::size_t i = 0; i < record.ids.size(); ++i) {
        if (record.ids[i] >= q.size()) throw std::out_of_range("soft_cross_entropy: class id out of range");
        loss -= p[i] * std::log(std::max(q[record.ids[i]], ad::kProbabilityFloor));
    }
    return loss;
}

double blended_loss(const TopCRecord* record, std::uint32_t label, std::span<const double> q, double lambda) {
    check_lambda(lambda);
    if (label >= q.size()) throw std::out_of_range("blended_loss: label out of range");
    const double hard = -std::log(std::max(q[label], ad::kProbabilityFloor));
    if (lambda == 0.0) return hard;
    if (!record) throw std::invalid_argument("blended_loss: lambda > 0 needs a soft-label record");
    const double soft = soft_cross_entropy(*record, q);
    if (lambda == 1.0) return soft;
    return lambda * soft + (1.0 - lambda) * hard;
}

template <typename T>
ad::Var<T> blended_loss(const TopCRecord* record, std::uint32_t label, ad::Var<T> q, double lambda) {
    check_lambda(lambda);
    if (label >= q.value().size()) throw std::out_of_range("blended_loss: label out of range");
    const std::uint32_t ids[1] = {label};
    const double one[1] = {1.0};
    auto hard = ad::cross_entropy<T>(ids, one, q);
    if (lambda == 0.0) return hard;
    if (!record) throw std::invalid_argument("blended_loss: lambda > 0 needs a soft-label record");
    const auto p = normalized_probs(*record);
    auto soft = ad::cross_entropy<T>(record->ids, p, q);
    if (lambda == 1.0) return soft;
    return ad::scale(soft, lambda) + ad::scale(hard, 1.0 - lambda);
}

template <typename T>
ad::Var<T> batch_blended_loss(ad::Tape<T>& tape, models::Model<T>& model, std::span<const BlendExample> batch,
                              double lambda) {
    if (batch.empty()) throw std::invalid_argument("batch_blended_loss: empty batch");
    std::vector<ad::Var<T>> losses;
    losses.reserve(batch.size());
    for (const auto& ex : batch) {
        auto q = ad::softmax(model.logits(tape, ex.window));
        losses.push_back(blended_loss(ex.record, ex.label, q, lambda));
    }
    return ad::scale(ad::sum(ad::concat<T>(losses)), 1.0 / static_cast<double>(batch.size()));
}

double blended_loss_gradient_check(models::Model<double>& model, std::span<const BlendExample> batch, double lambda,
                                   int coordinates, std::uint64_t seed, double eps) {
    auto& ps = model.params();
    auto loss_value = [&] {
        ad::Tape<double> tape;
        return batch_blended_loss(tape, model, batch, lambda).value().item();
    };
    ps.zero_grad();
    {
        ad::Tape<double> tape;
        tape.backward(batch_blended_loss(tape, model, batch, lambda));
    }

    std::mt19937_64 rng(seed);
    std::size_t total = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) total += ps[i].value.size();
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);

    double worst = 0.0;
    for (int n = 0; n < coordinates; ++n) {
        std::size_t flat = pick(rng);
        std::size_t pi = 0;
        while (flat >= ps[pi].value.size()) flat -= ps[pi++].value.size();
        auto& v = ps[pi].value[flat];
        const double saved = v;
        v = saved + eps;
        const double up = loss_value();
        v = saved - eps;
        const double down = loss_value();
        v = saved;
        const double numeric = (up - down) / (2 * eps);
        const double analytic = ps[pi].grad[flat];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

template ad::Var<float> blended_loss(const TopCRecord*, std::uint32_t, ad::Var<float>, double);
template ad::Var<double> blended_loss(const TopCRecord*, std::uint32_t, ad::Var<double>, double);
template ad::Var<float> batch_blended_loss(ad::Tape<float>&, models::Model<float>&, std::span<const BlendExample>,
                                           double);
template ad::Var<double> batch_blended_loss(ad::Tape<double>&, models::Model<double>&, std::span<const BlendExample>,
                                            double);

}  // namespace blend::blending
