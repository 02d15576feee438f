#include "blend/models/model.hpp"

#include "blend/models/blstm.hpp"
#include "blend/models/cnn.hpp"

namespace blend::models {

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg) {
    if (const auto* c = std::get_if<CnnConfig>(&cfg)) return std::make_unique<ConvNet<T>>(*c);
    return std::make_unique<Blstm<T>>(std::get<BlstmConfig>(cfg));
}

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg, const ad::ParamSet<float>& params) {
    auto model = make_model<T>(cfg);
    model->params().assign_values(params.template cast<T>());
    return model;
}

template <typename T>
Posteriors predict_posteriors(Model<T>& model, const Window& window) {
    ad::Tape<T> tape;
    auto q = ad::softmax(model.logits(tape, window));
    const auto& v = q.value();
    Posteriors p(v.values().begin(), v.values().end());
    // Renormalize in double so 32-bit models still yield mass 1 to ~1e-15.
    double z = 0.0;
    for (double x : p) z += x;
    for (double& x : p) x /= z;
    return p;
}

template <typename T>
std::vector<Posteriors> predict_batch(Model<T>& model, std::span<const Window> windows) {
    std::vector<Posteriors> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(predict_posteriors(model, w));
    return out;
}

#define BLEND_INSTANTIATE_MODEL(T)                                                                   \
    template std::unique_ptr<Model<T>> make_model<T>(const ModelConfig&);                            \
    template std::unique_ptr<Model<T>> make_model<T>(const ModelConfig&, const ad::ParamSet<float>&); \
    template Posteriors predict_posteriors(Model<T>&, const Window&);                                \
    template std::vector<Posteriors> predict_batch(Model<T>&, std::span<const Window>);

BLEND_INSTANTIATE_MODEL(float)
BLEND_INSTANTIATE_MODEL(double)

}  // namespace blend::models
