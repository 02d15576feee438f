#pragma once

#include "blend/models/model.hpp"

namespace blend::models {

/// Convolution stack (rectified 2-D convolutions, max pooling) followed by
/// rectified fully connected layers and a linear output layer. Covers both the
/// vision-style and the LVCSR-style layouts; they differ only in config.
template <typename T>
class ConvNet final : public Model<T> {
public:
    explicit ConvNet(const CnnConfig& cfg);

    const CnnConfig& cnn_config() const { return std::get<CnnConfig>(this->config_); }

    ad::Var<T> logits(ad::Tape<T>& tape, const Window& window) override;
    /// Output of the last convolution/pooling stage, before flattening.
    ad::Var<T> features(ad::Tape<T>& tape, ad::Var<T> input);
    ad::Var<T> input(ad::Tape<T>& tape, const Window& window) const;

    std::unique_ptr<Model<T>> clone() const override { return std::make_unique<ConvNet>(*this); }
    void initialize(std::uint64_t seed) override;
};

/// Forward pass of a vision-style network; rejects other layouts.
template <typename T>
ad::Var<T> vision_cnn_forward(ConvNet<T>& net, ad::Tape<T>& tape, const Window& window);

/// Forward pass of an LVCSR-style network; rejects other layouts.
template <typename T>
ad::Var<T> lvcsr_cnn_forward(ConvNet<T>& net, ad::Tape<T>& tape, const Window& window);

extern template class ConvNet<float>;
extern template class ConvNet<double>;

}  // namespace blend::models
