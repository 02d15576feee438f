#pragma once

#include <string>
#include <vector>

#include "blend/models/model.hpp"

namespace blend::models {

enum class Direction { Forward, Backward };

/// Tape bindings for one layer/direction of the peephole LSTM. Peepholes
/// (w_ci, w_cf, w_co) are vectors applied elementwise, i.e. diagonal
/// cell-to-gate matrices.
template <typename T>
struct LstmWeights {
    ad::Var<T> W_xi, W_hi, W_xf, W_hf, W_xc, W_hc, W_xo, W_ho;
    ad::Var<T> w_ci, w_cf, w_co;
    ad::Var<T> b_i, b_f, b_c, b_o;
};

template <typename T>
struct LstmStep {
    ad::Var<T> h;
    ad::Var<T> c;
    // Gate pre-activations, exposed for structural checks.
    ad::Var<T> input_pre;
    ad::Var<T> forget_pre;
    ad::Var<T> output_pre;
};

/// One step of the peephole LSTM:
///   i = s(W_xi x + W_hi h' + w_ci . c' + b_i)
///   f = s(W_xf x + W_hf h' + w_cf . c' + b_f)
///   c = f . c' + i . tanh(W_xc x + W_hc h' + b_c)
///   o = s(W_xo x + W_ho h' + w_co . c + b_o)
///   h = o . tanh(c)
/// The output gate peeks at the new cell state; input and forget gates at the
/// previous one.
template <typename T>
LstmStep<T> lstm_cell_step(const LstmWeights<T>& w, ad::Var<T> x, ad::Var<T> h_prev, ad::Var<T> c_prev);

/// Hidden sequences of one bidirectional layer. Entries outside the computed
/// range (top layer only) hold default Vars.
template <typename T>
struct LayerSequences {
    std::vector<ad::Var<T>> fwd;
    std::vector<ad::Var<T>> bwd;
};

/// Deep bidirectional peephole LSTM predicting the center frame of a window.
/// Layers below the top run both directions over the whole window and feed
/// the next layer with [h_fwd; h_bwd]. The top layer runs forward over
/// 1..t* and backward over T..t* only; the output reads [h_fwd(t*); h_bwd(t*)].
template <typename T>
class Blstm final : public Model<T> {
public:
    explicit Blstm(const BlstmConfig& cfg);

    const BlstmConfig& blstm_config() const { return std::get<BlstmConfig>(this->config_); }

    ad::Var<T> logits(ad::Tape<T>& tape, const Window& window) override;

    /// Per-frame input vectors of the window as tape constants.
    std::vector<ad::Var<T>> frame_inputs(ad::Tape<T>& tape, const Window& window) const;

    LstmWeights<T> bind(ad::Tape<T>& tape, int layer, Direction dir);

    /// Runs one layer. The forward direction reads `in_fwd`, the backward
    /// direction `in_bwd` (normally the same sequence). With `truncate`, the
    /// forward pass stops at `center` and the backward pass starts at the end
    /// and stops at `center`.
    LayerSequences<T> run_layer(ad::Tape<T>& tape, int layer, const std::vector<ad::Var<T>>& in_fwd,
                                const std::vector<ad::Var<T>>& in_bwd, bool truncate, std::size_t center);

    /// Inputs to `layer` given the window; layer 0 receives the frames.
    std::vector<ad::Var<T>> layer_inputs(ad::Tape<T>& tape, const Window& window, int layer);

    /// Output head on the top-layer states at the center.
    ad::Var<T> head(ad::Tape<T>& tape, ad::Var<T> h_fwd, ad::Var<T> h_bwd);

    std::unique_ptr<Model<T>> clone() const override { return std::make_unique<Blstm>(*this); }
    void initialize(std::uint64_t seed) override;

    static std::string param_name(int layer, Direction dir, const std::string& field);
};

template <typename T>
ad::Var<T> blstm_forward(Blstm<T>& net, ad::Tape<T>& tape, const Window& window);

extern template class Blstm<float>;
extern template class Blstm<double>;

}  // namespace blend::models
