#include "blend/models/cnn.hpp"

#include <cmath>
#include <random>

#include "blend/config.hpp"

namespace blend::models {

namespace {
std::string conv_name(std::size_t block, std::size_t layer) {
    return "conv" + std::to_string(block + 1) + "_" + std::to_string(layer + 1);
}
}  // namespace

template <typename T>
ConvNet<T>::ConvNet(const CnnConfig& cfg) : Model<T>(cfg) {
    cfg.validate();
    auto& ps = this->params_;
    std::size_t channels = static_cast<std::size_t>(cfg.in_channels);
    for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
        for (std::size_t l = 0; l < cfg.blocks[b].convs.size(); ++l) {
            const auto& conv = cfg.blocks[b].convs[l];
            const auto f = static_cast<std::size_t>(conv.filters);
            ps.add(conv_name(b, l) + ".w",
                   {f, channels, static_cast<std::size_t>(conv.kernel_h), static_cast<std::size_t>(conv.kernel_w)});
            ps.add(conv_name(b, l) + ".b", {f});
            channels = f;
        }
    }
    std::size_t in = ad::shape_numel(cfg.shape_trace().back());
    for (std::size_t i = 0; i < cfg.fc_widths.size(); ++i) {
        const auto w = static_cast<std::size_t>(cfg.fc_widths[i]);
        ps.add("fc" + std::to_string(i + 1) + ".w", {w, in});
        ps.add("fc" + std::to_string(i + 1) + ".b", {w});
        in = w;
    }
    ps.add("out.w", {static_cast<std::size_t>(cfg.classes), in});
    ps.add("out.b", {static_cast<std::size_t>(cfg.classes)});
}

template <typename T>
ad::Var<T> ConvNet<T>::input(ad::Tape<T>& tape, const Window& window) const {
    const auto& cfg = cnn_config();
    if (window.freq != static_cast<std::size_t>(cfg.height)) {
        throw ad::DimensionError("cnn input", 1,
                                 "window has " + std::to_string(window.freq) + " channels, model expects " +
                                     std::to_string(cfg.height));
    }
    if (window.frames != static_cast<std::size_t>(cfg.width)) {
        throw ad::DimensionError("cnn input", 2,
                                 "window has " + std::to_string(window.frames) + " frames, model expects " +
                                     std::to_string(cfg.width));
    }
    std::vector<T> values(window.values.begin(), window.values.end());
    return tape.input(ad::Tensor<T>({1, window.freq, window.frames}, std::move(values)));
}

template <typename T>
ad::Var<T> ConvNet<T>::features(ad::Tape<T>& tape, ad::Var<T> x) {
    const auto& cfg = cnn_config();
    auto& ps = this->params_;
    for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
        for (std::size_t l = 0; l < cfg.blocks[b].convs.size(); ++l) {
            const auto name = conv_name(b, l);
            auto k = tape.param(ps.get(name + ".w"));
            auto bias = tape.param(ps.get(name + ".b"));
            x = ad::relu(ad::channel_bias(ad::conv2d(x, k, cfg.blocks[b].convs[l].padding), bias));
        }
        if (cfg.blocks[b].pool_h > 0) x = ad::maxpool(x, cfg.blocks[b].pool_h, cfg.blocks[b].pool_w);
    }
    return x;
}

template <typename T>
ad::Var<T> ConvNet<T>::logits(ad::Tape<T>& tape, const Window& window) {
    const auto& cfg = cnn_config();
    auto& ps = this->params_;
    auto h = ad::flatten(features(tape, input(tape, window)));
    for (std::size_t i = 0; i < cfg.fc_widths.size(); ++i) {
        const auto name = "fc" + std::to_string(i + 1);
        h = ad::relu(ad::dense(h, tape.param(ps.get(name + ".w")), tape.param(ps.get(name + ".b"))));
    }
    return ad::dense(h, tape.param(ps.get("out.w")), tape.param(ps.get("out.b")));
}

template <typename T>
void ConvNet<T>::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto& ps = this->params_;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& p = ps[i];
        if (p.value.rank() == 1) {
            p.value.fill(T{0});
            continue;
        }
        const std::size_t fan_in = p.value.size() / p.value.dim(0);
        const bool output = p.name == "out.w";
        const double limit = std::sqrt((output ? 3.0 : 6.0) / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
    }
}

template <typename T>
ad::Var<T> vision_cnn_forward(ConvNet<T>& net, ad::Tape<T>& tape, const Window& window) {
    if (net.kind() != ModelKind::VisionCnn) throw ConfigError("model.kind", "expected vision_cnn");
    return net.logits(tape, window);
}

template <typename T>
ad::Var<T> lvcsr_cnn_forward(ConvNet<T>& net, ad::Tape<T>& tape, const Window& window) {
    if (net.kind() != ModelKind::LvcsrCnn) throw ConfigError("model.kind", "expected lvcsr_cnn");
    return net.logits(tape, window);
}

template class ConvNet<float>;
template class ConvNet<double>;
template ad::Var<float> vision_cnn_forward(ConvNet<float>&, ad::Tape<float>&, const Window&);
template ad::Var<double> vision_cnn_forward(ConvNet<double>&, ad::Tape<double>&, const Window&);
template ad::Var<float> lvcsr_cnn_forward(ConvNet<float>&, ad::Tape<float>&, const Window&);
template ad::Var<double> lvcsr_cnn_forward(ConvNet<double>&, ad::Tape<double>&, const Window&);

}  // namespace blend::models
