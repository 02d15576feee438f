#include "blend/models/blstm.hpp"

#include <cmath>
#include <random>

namespace blend::models {

namespace {
const char* kMatrices[] = {"W_xi", "W_hi", "W_xf", "W_hf", "W_xc", "W_hc", "W_xo", "W_ho"};
const char* kVectors[] = {"w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o"};
}  // namespace

template <typename T>
std::string Blstm<T>::param_name(int layer, Direction dir, const std::string& field) {
    return "l" + std::to_string(layer + 1) + (dir == Direction::Forward ? ".fwd." : ".bwd.") + field;
}

template <typename T>
Blstm<T>::Blstm(const BlstmConfig& cfg) : Model<T>(cfg) {
    cfg.validate();
    const auto H = static_cast<std::size_t>(cfg.hidden);
    for (int n = 0; n < cfg.layers; ++n) {
        const std::size_t D = n == 0 ? static_cast<std::size_t>(cfg.input_dim) : 2 * H;
        for (auto dir : {Direction::Forward, Direction::Backward}) {
            for (const char* m : kMatrices) {
                const bool from_input = m[2] == 'x';
                this->params_.add(param_name(n, dir, m), {H, from_input ? D : H});
            }
            for (const char* v : kVectors) this->params_.add(param_name(n, dir, v), {H});
        }
    }
    this->params_.add("out.W", {static_cast<std::size_t>(cfg.classes), 2 * H});
    this->params_.add("out.b", {static_cast<std::size_t>(cfg.classes)});
}

template <typename T>
void Blstm<T>::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto& ps = this->params_;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& p = ps[i];
        if (p.value.rank() == 1) {
            const bool forget_bias = p.name.size() > 3 && p.name.compare(p.name.size() - 3, 3, "b_f") == 0;
            p.value.fill(forget_bias ? T{1} : T{0});
            continue;
        }
        const double limit = 1.0 / std::sqrt(static_cast<double>(p.value.dim(1)));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
    }
}

template <typename T>
LstmWeights<T> Blstm<T>::bind(ad::Tape<T>& tape, int layer, Direction dir) {
    auto p = [&](const char* f) { return tape.param(this->params_.get(param_name(layer, dir, f))); };
    return {p("W_xi"), p("W_hi"), p("W_xf"), p("W_hf"), p("W_xc"), p("W_hc"), p("W_xo"), p("W_ho"),
            p("w_ci"), p("w_cf"), p("w_co"), p("b_i"),  p("b_f"),  p("b_c"),  p("b_o")};
}

template <typename T>
LstmStep<T> lstm_cell_step(const LstmWeights<T>& w, ad::Var<T> x, ad::Var<T> h_prev, ad::Var<T> c_prev) {
    using namespace ad;
    auto i_pre = dense(x, w.W_xi, w.b_i) + dense(h_prev, w.W_hi) + w.w_ci * c_prev;
    auto f_pre = dense(x, w.W_xf, w.b_f) + dense(h_prev, w.W_hf) + w.w_cf * c_prev;
    auto i = sigmoid(i_pre);
    auto f = sigmoid(f_pre);
    auto g = ad::tanh(dense(x, w.W_xc, w.b_c) + dense(h_prev, w.W_hc));
    auto c = f * c_prev + i * g;
    auto o_pre = dense(x, w.W_xo, w.b_o) + dense(h_prev, w.W_ho) + w.w_co * c;
    auto h = sigmoid(o_pre) * ad::tanh(c);
    return {h, c, i_pre, f_pre, o_pre};
}

template <typename T>
std::vector<ad::Var<T>> Blstm<T>::frame_inputs(ad::Tape<T>& tape, const Window& window) const {
    const auto& cfg = blstm_config();
    if (window.frames % 2 == 0) {
        throw ad::DimensionError("blstm input", 1, "window width " + std::to_string(window.frames) +
                                                       " is even; no center frame");
    }
    if (window.frames != static_cast<std::size_t>(cfg.window)) {
        throw ad::DimensionError("blstm input", 1,
                                 "window has " + std::to_string(window.frames) + " frames, model expects " +
                                     std::to_string(cfg.window));
    }
    if (window.freq != static_cast<std::size_t>(cfg.input_dim)) {
        throw ad::DimensionError("blstm input", 0,
                                 "window has " + std::to_string(window.freq) + " channels, model expects " +
                                     std::to_string(cfg.input_dim));
    }
    std::vector<ad::Var<T>> xs;
    xs.reserve(window.frames);
    for (std::size_t t = 0; t < window.frames; ++t) {
        ad::Tensor<T> col(ad::Shape{window.freq});
        for (std::size_t f = 0; f < window.freq; ++f) col[f] = static_cast<T>(window.at(f, t));
        xs.push_back(tape.input(std::move(col)));
    }
    return xs;
}

template <typename T>
LayerSequences<T> Blstm<T>::run_layer(ad::Tape<T>& tape, int layer, const std::vector<ad::Var<T>>& in_fwd,
                                      const std::vector<ad::Var<T>>& in_bwd, bool truncate, std::size_t center) {
    const std::size_t T_len = in_fwd.size();
    if (in_bwd.size() != T_len) throw ad::DimensionError("blstm layer", 0, "direction inputs differ in length");
    const auto H = static_cast<std::size_t>(blstm_config().hidden);
    LayerSequences<T> out;
    out.fwd.resize(T_len);
    out.bwd.resize(T_len);

    const auto fw = bind(tape, layer, Direction::Forward);
    auto h = tape.input(ad::Tensor<T>(ad::Shape{H}));
    auto c = h;
    const std::size_t fwd_end = truncate ? center + 1 : T_len;
    for (std::size_t t = 0; t < fwd_end; ++t) {
        auto s = lstm_cell_step(fw, in_fwd[t], h, c);
        h = s.h;
        c = s.c;
        out.fwd[t] = h;
    }

    const auto bw = bind(tape, layer, Direction::Backward);
    h = tape.input(ad::Tensor<T>(ad::Shape{H}));
    c = h;
    const std::size_t bwd_stop = truncate ? center : 0;
    for (std::size_t t = T_len; t-- > bwd_stop;) {
        auto s = lstm_cell_step(bw, in_bwd[t], h, c);
        h = s.h;
        c = s.c;
        out.bwd[t] = h;
    }
    return out;
}

template <typename T>
std::vector<ad::Var<T>> Blstm<T>::layer_inputs(ad::Tape<T>& tape, const Window& window, int layer) {
    auto xs = frame_inputs(tape, window);
    for (int n = 0; n < layer; ++n) {
        auto seq = run_layer(tape, n, xs, xs, false, window.center());
        for (std::size_t t = 0; t < xs.size(); ++t) {
            const ad::Var<T> parts[2] = {seq.fwd[t], seq.bwd[t]};
            xs[t] = ad::concat<T>(parts);
        }
    }
    return xs;
}

template <typename T>
ad::Var<T> Blstm<T>::head(ad::Tape<T>& tape, ad::Var<T> h_fwd, ad::Var<T> h_bwd) {
    const ad::Var<T> parts[2] = {h_fwd, h_bwd};
    return ad::dense(ad::concat<T>(parts), tape.param(this->params_.get("out.W")),
                     tape.param(this->params_.get("out.b")));
}

template <typename T>
ad::Var<T> Blstm<T>::logits(ad::Tape<T>& tape, const Window& window) {
    const int top = blstm_config().layers - 1;
    const auto xs = layer_inputs(tape, window, top);
    const std::size_t center = window.center();
    auto seq = run_layer(tape, top, xs, xs, true, center);
    return head(tape, seq.fwd[center], seq.bwd[center]);
}

template <typename T>
ad::Var<T> blstm_forward(Blstm<T>& net, ad::Tape<T>& tape, const Window& window) {
    return net.logits(tape, window);
}

template class Blstm<float>;
template class Blstm<double>;
template LstmStep<float> lstm_cell_step(const LstmWeights<float>&, ad::Var<float>, ad::Var<float>, ad::Var<float>);
template LstmStep<double> lstm_cell_step(const LstmWeights<double>&, ad::Var<double>, ad::Var<double>,
                                         ad::Var<double>);
template ad::Var<float> blstm_forward(Blstm<float>&, ad::Tape<float>&, const Window&);
template ad::Var<double> blstm_forward(Blstm<double>&, ad::Tape<double>&, const Window&);

}  // namespace blend::models
