#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "blend/ad/params.hpp"
#include "blend/ad/tape.hpp"
#include "blend/models/config.hpp"

namespace blend::models {

/// A window of 2k+1 frames around the frame being classified. Values are
/// frequency-major: values[f * frames + t]. The classified frame sits at
/// column center() = k.
struct Window {
    std::size_t freq = 0;
    std::size_t frames = 0;
    std::vector<float> values;

    std::size_t center() const noexcept { return frames / 2; }
    float at(std::size_t f, std::size_t t) const { return values[f * frames + t]; }
};

/// Normalized class distribution for one window.
using Posteriors = std::vector<double>;

template <typename T>
class Model {
public:
    explicit Model(ModelConfig cfg) : config_(std::move(cfg)) {}
    virtual ~Model() = default;

    const ModelConfig& config() const noexcept { return config_; }
    ModelKind kind() const { return config_kind(config_); }
    int classes() const { return config_classes(config_); }
    int context() const { return config_context(config_); }

    ad::ParamSet<T>& params() noexcept { return params_; }
    const ad::ParamSet<T>& params() const noexcept { return params_; }

    /// Records the forward pass for one window and returns logits [K].
    virtual ad::Var<T> logits(ad::Tape<T>& tape, const Window& window) = 0;
    virtual std::unique_ptr<Model> clone() const = 0;

    /// Fan-in scaled uniform weights, zero biases (LSTM forget gate +1,
    /// peepholes zero). Deterministic in `seed`.
    virtual void initialize(std::uint64_t seed) = 0;

protected:
    ModelConfig config_;
    ad::ParamSet<T> params_;
};

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg);

/// Builds a model whose parameters are copied from `params` (names and shapes
/// must match the architecture).
template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg, const ad::ParamSet<float>& params);

/// Softmax of the model's logits.
template <typename T>
Posteriors predict_posteriors(Model<T>& model, const Window& window);

template <typename T>
std::vector<Posteriors> predict_batch(Model<T>& model, std::span<const Window> windows);

}  // namespace blend::models
