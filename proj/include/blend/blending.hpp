#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "blend/ad/tape.hpp"
#include "blend/models/model.hpp"
#include "blend/softlabels.hpp"

namespace blend::blending {

using models::Posteriors;
using softlabels::TopCRecord;

/// Convex combination sum_m w_m p_m. Weights must be nonnegative and sum to
/// 1 within 1e-9; members must share K.
Posteriors ensemble_posterior(std::span<const Posteriors> members, std::span<const double> weights);

/// gamma * lstm + (1 - gamma) * cnn.
Posteriors ensemble_posterior(const Posteriors& lstm, const Posteriors& cnn, double gamma);

void check_lambda(double lambda);

/// Soft term: -sum over retained classes of p_c log q_c, with the record's
/// probabilities divided by their sum so 32-bit stored records still form a
/// distribution.
double soft_cross_entropy(const TopCRecord& record, std::span<const double> q);

/// lambda * soft + (1 - lambda) * (-log q_y). The record may be null only
/// when lambda == 0.
double blended_loss(const TopCRecord* record, std::uint32_t label, std::span<const double> q, double lambda);

/// Same objective recorded on a tape over the student's posterior.
template <typename T>
ad::Var<T> blended_loss(const TopCRecord* record, std::uint32_t label, ad::Var<T> q, double lambda);

struct BlendExample {
    models::Window window;
    std::uint32_t label = 0;
    const TopCRecord* record = nullptr;
};

/// Mean blended loss over `batch` recorded on `tape`.
template <typename T>
ad::Var<T> batch_blended_loss(ad::Tape<T>& tape, models::Model<T>& model, std::span<const BlendExample> batch,
                              double lambda);

/// Compares the autodiff gradient of the mean blended loss against central
/// differences at `coordinates` randomly chosen parameter entries. Returns the
/// largest relative error |a - n| / max(|a|, |n|, 1e-6).
double blended_loss_gradient_check(models::Model<double>& model, std::span<const BlendExample> batch, double lambda,
                                   int coordinates = 50, std::uint64_t seed = 1, double eps = 1e-5);

}  // namespace blend::blending
