#include "blend/ad/tape.hpp"

#include "gemm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace blend::ad {

std::string_view op_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Param: return "param";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::ChannelBias: return "channel_bias";
        case OpKind::MaxPool: return "maxpool";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Dense: return "dense";
        case OpKind::Add: return "add";
        case OpKind::Hadamard: return "hadamard";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Reshape: return "reshape";
        case OpKind::Softmax: return "softmax";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::Sum: return "sum";
        case OpKind::Scale: return "scale";
    }
    return "unknown";
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(*this);
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value, bool requires_grad) {
    if (!value.all_finite()) throw NumericError("input: non-finite value");
    Node<T> n;
    n.op = OpKind::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
    Node<T> n;
    n.op = OpKind::Param;
    n.requires_grad = true;
    n.param = &p;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::push(OpKind op, std::vector<std::uint32_t> parents, Tensor<T> value) {
    if (!value.all_finite()) {
        throw NumericError(std::string(op_name(op)) + ": produced a non-finite value");
    }
    Node<T> n;
    n.op = op;
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [this](std::uint32_t p) { return nodes_[p].requires_grad; });
    n.parents = std::move(parents);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
    const auto& n = nodes_.at(v.id);
    return n.param ? n.param->value : n.value;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::uint32_t id) {
    auto& n = nodes_[id];
    if (n.param) return n.param->grad;
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id);
    if (n.param) return n.param->grad;
    if (n.grad.size() == n.value.size() && !n.value.empty()) return n.grad;
    return Tensor<T>(n.value.shape());
}

template <typename T>
void Tape<T>::clear() {
    nodes_.clear();
    diag_ = {};
}

template <typename T>
void Tape<T>::backward(Var<T> root, T seed) {
    if (root.tape != this) throw std::invalid_argument("backward: root belongs to another tape");
    if (value(root).size() != 1) {
        throw DimensionError("backward", -1,
                             "root must be scalar, got " + shape_str(value(root).shape()));
    }
    for (auto& n : nodes_)
        if (!n.param) n.grad = Tensor<T>();
    grad_buffer(root.id)[0] += seed;
    for (std::uint32_t i = root.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.op == OpKind::Leaf || n.op == OpKind::Param || !n.requires_grad) continue;
        if (n.grad.empty()) continue;
        backward_node(i);
    }
}

namespace {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank()) {
        throw DimensionError(op, -1, "rank " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (a.dim(i) != b.dim(i)) {
            throw DimensionError(op, static_cast<int>(i),
                                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
    if (!a.tape) throw std::invalid_argument("operation on an unbound variable");
    return *a.tape;
}

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
    if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

// Unrolls x [C,H,W] (zero-padded by p) into [C*kh*kw, Ho*Wo] patch columns.
template <typename T>
std::vector<T> im2col(const Tensor<T>& x, int p, std::size_t kh, std::size_t kw, std::size_t Ho, std::size_t Wo) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    std::vector<T> cols(C * kh * kw * Ho * Wo, T{0});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
                T* row = cols.data() + ((c * kh + dy) * kw + dx) * Ho * Wo;
                for (std::size_t y = 0; y < Ho; ++y) {
                    const long iy = static_cast<long>(y + dy) - p;
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    const T* src = &x.at(c, static_cast<std::size_t>(iy), 0);
                    for (std::size_t xx = 0; xx < Wo; ++xx) {
                        const long ix = static_cast<long>(xx + dx) - p;
                        if (ix >= 0 && ix < static_cast<long>(W)) row[y * Wo + xx] = src[ix];
                    }
                }
            }
    return cols;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, int padding) {
    same_tape(input, kernels);
    const auto& x = input.value();
    const auto& k = kernels.value();
    if (x.rank() != 3) throw DimensionError("conv2d", -1, "input must be [C,H,W], got " + shape_str(x.shape()));
    if (k.rank() != 4) throw DimensionError("conv2d", -1, "kernels must be [O,C,kh,kw], got " + shape_str(k.shape()));
    if (k.dim(1) != x.dim(0)) {
        throw DimensionError("conv2d", 0,
                             "input channels " + std::to_string(x.dim(0)) + " vs kernel channels " +
                                 std::to_string(k.dim(1)));
    }
    if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
    const std::size_t C = x.dim(0), O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t Hp = x.dim(1) + 2 * padding, Wp = x.dim(2) + 2 * padding;
    if (Hp < kh) throw DimensionError("conv2d", 1, "height smaller than kernel");
    if (Wp < kw) throw DimensionError("conv2d", 2, "width smaller than kernel");
    const std::size_t Ho = Hp - kh + 1, Wo = Wp - kw + 1;

    const auto cols = im2col(x, padding, kh, kw, Ho, Wo);
    Tensor<T> out(Shape{O, Ho, Wo});
    const int ckk = static_cast<int>(C * kh * kw), hw = static_cast<int>(Ho * Wo);
    detail::gemm(false, false, static_cast<int>(O), hw, ckk, T{1}, k.data(), ckk, cols.data(), hw, T{0},
                 out.data(), hw);
    auto v = tape_of(input).push(OpKind::Conv2d, {input.id, kernels.id}, std::move(out));
    v.tape->node(v.id).aux[0] = padding;
    return v;
}

template <typename T>
Var<T> channel_bias(Var<T> x, Var<T> bias) {
    same_tape(x, bias);
    const auto& xv = x.value();
    const auto& b = bias.value();
    if (xv.rank() < 1) throw DimensionError("channel_bias", -1, "input has no channel axis");
    if (b.rank() != 1) throw DimensionError("channel_bias", -1, "bias must be a vector");
    if (b.dim(0) != xv.dim(0)) {
        throw DimensionError("channel_bias", 0,
                             std::to_string(xv.dim(0)) + " channels vs bias " + std::to_string(b.dim(0)));
    }
    Tensor<T> out = xv;
    const std::size_t per = xv.size() / xv.dim(0);
    for (std::size_t c = 0; c < xv.dim(0); ++c)
        for (std::size_t i = 0; i < per; ++i) out[c * per + i] += b[c];
    return tape_of(x).push(OpKind::ChannelBias, {x.id, bias.id}, std::move(out));
}

template <typename T>
Var<T> maxpool(Var<T> input, int pool_h, int pool_w) {
    const auto& x = input.value();
    if (x.rank() != 3) throw DimensionError("maxpool", -1, "input must be [C,H,W], got " + shape_str(x.shape()));
    if (pool_h < 1 || pool_w < 1) throw std::invalid_argument("maxpool: window must be positive");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H < static_cast<std::size_t>(pool_h)) {
        throw DimensionError("maxpool", 1, "height " + std::to_string(H) + " < window " + std::to_string(pool_h));
    }
    if (W < static_cast<std::size_t>(pool_w)) {
        throw DimensionError("maxpool", 2, "width " + std::to_string(W) + " < window " + std::to_string(pool_w));
    }
    const std::size_t Ho = H / pool_h, Wo = W / pool_w;
    Tensor<T> out(Shape{C, Ho, Wo});
    std::vector<std::uint32_t> argmax(out.size());
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                std::size_t best = (c * H + oy * pool_h) * W + ox * pool_w;
                for (int dy = 0; dy < pool_h; ++dy) {
                    for (int dx = 0; dx < pool_w; ++dx) {
                        const std::size_t idx = (c * H + oy * pool_h + dy) * W + ox * pool_w + dx;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                const std::size_t o = (c * Ho + oy) * Wo + ox;
                out[o] = x[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    auto v = tape_of(input).push(OpKind::MaxPool, {input.id}, std::move(out));
    auto& n = v.tape->node(v.id);
    n.index = std::move(argmax);
    n.aux[0] = pool_h;
    n.aux[1] = pool_w;
    return v;
}

namespace {
template <typename T, typename F>
Var<T> unary(OpKind op, Var<T> x, F f) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = f(v);
    return tape_of(x).push(op, {x.id}, std::move(out));
}
}  // namespace

template <typename T>
Var<T> relu(Var<T> x) {
    return unary(OpKind::Relu, x, [](T v) { return v > T{0} ? v : T{0}; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    return unary(OpKind::Sigmoid, x, [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
    });
}

template <typename T>
Var<T> tanh(Var<T> x) {
    return unary(OpKind::Tanh, x, [](T v) { return std::tanh(v); });
}

namespace {
template <typename T>
Var<T> dense_impl(Var<T> input, Var<T> weights, const Var<T>* bias) {
    same_tape(input, weights);
    const auto& x = input.value();
    const auto& w = weights.value();
    if (w.rank() != 2) throw DimensionError("dense", -1, "weights must be [m,n], got " + shape_str(w.shape()));
    if (x.rank() != 1) throw DimensionError("dense", -1, "input must be a vector, got " + shape_str(x.shape()));
    if (w.dim(1) != x.dim(0)) {
        throw DimensionError("dense", 1,
                             "weights " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    }
    const std::size_t m = w.dim(0), n = w.dim(1);
    Tensor<T> out(Shape{m});
    std::vector<std::uint32_t> parents{weights.id, input.id};
    if (bias) {
        same_tape(input, *bias);
        const auto& b = bias->value();
        if (b.rank() != 1 || b.dim(0) != m) {
            throw DimensionError("dense", 0, "bias " + shape_str(b.shape()) + " vs output " + std::to_string(m));
        }
        std::copy(b.values().begin(), b.values().end(), out.data());
        parents.push_back(bias->id);
    }
    const T* wp = w.data();
    const T* xp = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        T acc = T{0};
        const T* row = wp + i * n;
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * xp[j];
        out[i] += acc;
    }
    return tape_of(input).push(OpKind::Dense, std::move(parents), std::move(out));
}
}  // namespace

template <typename T>
Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias) {
    return dense_impl(input, weights, &bias);
}

template <typename T>
Var<T> dense(Var<T> input, Var<T> weights) {
    return dense_impl<T>(input, weights, nullptr);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    same_tape(a, b);
    check_same_shape("add", a.value(), b.value());
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape_of(a).push(OpKind::Add, {a.id, b.id}, std::move(out));
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
    same_tape(a, b);
    check_same_shape("hadamard", a.value(), b.value());
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return tape_of(a).push(OpKind::Hadamard, {a.id, b.id}, std::move(out));
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::size_t total = 0;
    std::vector<std::uint32_t> parents;
    for (const auto& p : parts) {
        same_tape(parts[0], p);
        total += p.value().size();
        parents.push_back(p.id);
    }
    Tensor<T> out(Shape{total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        std::copy(v.values().begin(), v.values().end(), out.data() + off);
        off += v.size();
    }
    return tape_of(parts[0]).push(OpKind::Concat, std::move(parents), std::move(out));
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t begin, std::size_t length) {
    const auto& v = x.value();
    if (begin + length > v.size() || length == 0) {
        throw DimensionError("slice", 0,
                             "range [" + std::to_string(begin) + "," + std::to_string(begin + length) +
                                 ") outside " + std::to_string(v.size()));
    }
    Tensor<T> out(Shape{length});
    std::copy_n(v.data() + begin, length, out.data());
    auto r = tape_of(x).push(OpKind::Slice, {x.id}, std::move(out));
    r.tape->node(r.id).aux[0] = static_cast<int>(begin);
    return r;
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = x.value();
    out.reshape(std::move(shape));
    return tape_of(x).push(OpKind::Reshape, {x.id}, std::move(out));
}

template <typename T>
Var<T> softmax(Var<T> logits) {
    const auto& z = logits.value();
    if (z.size() == 0) throw DimensionError("softmax", 0, "empty input");
    if (!z.all_finite()) throw NumericError("softmax: non-finite logit");
    const T mx = *std::max_element(z.values().begin(), z.values().end());
    Tensor<T> out(z.shape());
    T total = T{0};
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - mx);
        total += out[i];
    }
    for (auto& v : out.values()) v /= total;
    return tape_of(logits).push(OpKind::Softmax, {logits.id}, std::move(out));
}

template <typename T>
Var<T> cross_entropy(std::span<const std::uint32_t> ids, std::span<const double> probs,
                     Var<T> predicted) {
    if (ids.size() != probs.size()) {
        throw DimensionError("cross_entropy", 0, "target ids and probabilities differ in length");
    }
    const auto& q = predicted.value();
    double mass = 0.0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] >= q.size()) {
            throw DimensionError("cross_entropy", 0,
                                 "class " + std::to_string(ids[k]) + " outside " + std::to_string(q.size()));
        }
        if (!(probs[k] >= 0.0)) throw std::invalid_argument("cross_entropy: negative target probability");
        mass += probs[k];
    }
    if (mass > 1.0 + 1e-9) throw std::invalid_argument("cross_entropy: target mass exceeds 1");
    auto& tape = tape_of(predicted);
    T loss = T{0};
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (probs[k] == 0.0) continue;
        T qk = q[ids[k]];
        if (qk < static_cast<T>(kProbabilityFloor)) {
            qk = static_cast<T>(kProbabilityFloor);
            ++tape.diagnostics().clamped_log_terms;
        }
        loss -= static_cast<T>(probs[k]) * std::log(qk);
    }
    auto v = tape.push(OpKind::CrossEntropy, {predicted.id}, Tensor<T>::scalar(loss));
    auto& n = tape.node(v.id);
    n.index.assign(ids.begin(), ids.end());
    n.weights.assign(probs.begin(), probs.end());
    return v;
}

template <typename T>
Var<T> sum(Var<T> x) {
    T s = T{0};
    for (auto v : x.value().values()) s += v;
    return tape_of(x).push(OpKind::Sum, {x.id}, Tensor<T>::scalar(s));
}

template <typename T>
Var<T> scale(Var<T> x, double factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v *= static_cast<T>(factor);
    auto r = tape_of(x).push(OpKind::Scale, {x.id}, std::move(out));
    r.tape->node(r.id).weights = {static_cast<T>(factor)};
    return r;
}

template <typename T>
void Tape<T>::backward_node(std::uint32_t id) {
    // Parents always precede children, so references into nodes_ stay valid:
    // grad_buffer never appends.
    Node<T>& n = nodes_[id];
    const Tensor<T>& g = n.grad;
    auto wants = [&](std::size_t k) { return nodes_[n.parents[k]].requires_grad; };
    auto val = [&](std::size_t k) -> const Tensor<T>& {
        const auto& p = nodes_[n.parents[k]];
        return p.param ? p.param->value : p.value;
    };

    switch (n.op) {
        case OpKind::Leaf:
        case OpKind::Param:
            return;
        case OpKind::Conv2d: {
            const auto& x = val(0);
            const auto& k = val(1);
            const int p = n.aux[0];
            const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
            const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
            const std::size_t Ho = n.value.dim(1), Wo = n.value.dim(2);
            const int ckk = static_cast<int>(C * kh * kw), hw = static_cast<int>(Ho * Wo);
            if (wants(1)) {
                const auto cols = im2col(x, p, kh, kw, Ho, Wo);
                detail::gemm(false, true, static_cast<int>(O), ckk, hw, T{1}, g.data(), hw, cols.data(), hw, T{1},
                             grad_buffer(n.parents[1]).data(), ckk);
            }
            if (wants(0)) {
                std::vector<T> gcols(static_cast<std::size_t>(ckk) * hw);
                detail::gemm(true, false, ckk, hw, static_cast<int>(O), T{1}, k.data(), ckk, g.data(), hw, T{0},
                             gcols.data(), hw);
                auto& gx = grad_buffer(n.parents[0]);
                // col2im: scatter-add every column entry back to its input pixel.
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t dy = 0; dy < kh; ++dy)
                        for (std::size_t dx = 0; dx < kw; ++dx) {
                            const T* row = gcols.data() + ((c * kh + dy) * kw + dx) * Ho * Wo;
                            for (std::size_t y = 0; y < Ho; ++y) {
                                const long iy = static_cast<long>(y + dy) - p;
                                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                for (std::size_t xx = 0; xx < Wo; ++xx) {
                                    const long ix = static_cast<long>(xx + dx) - p;
                                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                    gx.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                                        row[y * Wo + xx];
                                }
                            }
                        }
            }
            return;
        }
        case OpKind::ChannelBias: {
            const std::size_t C = n.value.dim(0), per = n.value.size() / C;
            if (wants(0)) {
                auto& gx = grad_buffer(n.parents[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (wants(1)) {
                auto& gb = grad_buffer(n.parents[1]);
                for (std::size_t c = 0; c < C; ++c) {
                    T acc = T{0};
                    for (std::size_t i = 0; i < per; ++i) acc += g[c * per + i];
                    gb[c] += acc;
                }
            }
            return;
        }
        case OpKind::MaxPool: {
            auto& gx = grad_buffer(n.parents[0]);
            for (std::size_t o = 0; o < g.size(); ++o) gx[n.index[o]] += g[o];
            return;
        }
        case OpKind::Relu: {
            const auto& x = val(0);
            auto& gx = grad_buffer(n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > T{0}) gx[i] += g[i];
            return;
        }
        case OpKind::Sigmoid: {
            auto& gx = grad_buffer(n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T s = n.value[i];
                gx[i] += g[i] * s * (T{1} - s);
            }
            return;
        }
        case OpKind::Tanh: {
            auto& gx = grad_buffer(n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T t = n.value[i];
                gx[i] += g[i] * (T{1} - t * t);
            }
            return;
        }
        case OpKind::Dense: {
            const auto& w = val(0);
            const auto& x = val(1);
            const std::size_t m = w.dim(0), cols = w.dim(1);
            if (wants(0)) {
                T* gw = grad_buffer(n.parents[0]).data();
                for (std::size_t i = 0; i < m; ++i) {
                    const T gi = g[i];
                    if (gi == T{0}) continue;
                    T* row = gw + i * cols;
                    for (std::size_t j = 0; j < cols; ++j) row[j] += gi * x[j];
                }
            }
            if (wants(1)) {
                T* gx = grad_buffer(n.parents[1]).data();
                for (std::size_t i = 0; i < m; ++i) {
                    const T gi = g[i];
                    if (gi == T{0}) continue;
                    const T* row = w.data() + i * cols;
                    for (std::size_t j = 0; j < cols; ++j) gx[j] += gi * row[j];
                }
            }
            if (n.parents.size() == 3 && wants(2)) {
                auto& gb = grad_buffer(n.parents[2]);
                for (std::size_t i = 0; i < m; ++i) gb[i] += g[i];
            }
            return;
        }
        case OpKind::Add: {
            for (std::size_t k = 0; k < 2; ++k) {
                if (!wants(k)) continue;
                auto& gx = grad_buffer(n.parents[k]);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            return;
        }
        case OpKind::Hadamard: {
            for (std::size_t k = 0; k < 2; ++k) {
                if (!wants(k)) continue;
                const auto& other = val(1 - k);
                auto& gx = grad_buffer(n.parents[k]);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * other[i];
            }
            return;
        }
        case OpKind::Concat: {
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.parents.size(); ++k) {
                const std::size_t len = val(k).size();
                if (wants(k)) {
                    auto& gx = grad_buffer(n.parents[k]);
                    for (std::size_t i = 0; i < len; ++i) gx[i] += g[off + i];
                }
                off += len;
            }
            return;
        }
        case OpKind::Slice: {
            auto& gx = grad_buffer(n.parents[0]);
            const std::size_t begin = static_cast<std::size_t>(n.aux[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[begin + i] += g[i];
            return;
        }
        case OpKind::Reshape: {
            auto& gx = grad_buffer(n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            return;
        }
        case OpKind::Softmax: {
            const auto& q = n.value;
            T dot = T{0};
            for (std::size_t i = 0; i < q.size(); ++i) dot += g[i] * q[i];
            auto& gz = grad_buffer(n.parents[0]);
            for (std::size_t i = 0; i < q.size(); ++i) gz[i] += q[i] * (g[i] - dot);
            return;
        }
        case OpKind::CrossEntropy: {
            const auto& q = val(0);
            auto& gq = grad_buffer(n.parents[0]);
            const T gl = g[0];
            const T floor = static_cast<T>(kProbabilityFloor);
            for (std::size_t k = 0; k < n.index.size(); ++k) {
                const T qk = std::max(q[n.index[k]], floor);
                gq[n.index[k]] -= gl * n.weights[k] / qk;
            }
            return;
        }
        case OpKind::Sum: {
            auto& gx = grad_buffer(n.parents[0]);
            for (auto& v : gx.values()) v += g[0];
            return;
        }
        case OpKind::Scale: {
            auto& gx = grad_buffer(n.parents[0]);
            const T f = n.weights[0];
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += f * g[i];
            return;
        }
    }
}

template struct Var<float>;
template struct Var<double>;
template class Tape<float>;
template class Tape<double>;

#define BLEND_INSTANTIATE_OPS(T)                                                             \
    template Var<T> conv2d(Var<T>, Var<T>, int);                                             \
    template Var<T> channel_bias(Var<T>, Var<T>);                                            \
    template Var<T> maxpool(Var<T>, int, int);                                               \
    template Var<T> relu(Var<T>);                                                            \
    template Var<T> sigmoid(Var<T>);                                                         \
    template Var<T> tanh(Var<T>);                                                            \
    template Var<T> dense(Var<T>, Var<T>, Var<T>);                                           \
    template Var<T> dense(Var<T>, Var<T>);                                                   \
    template Var<T> add(Var<T>, Var<T>);                                                     \
    template Var<T> hadamard(Var<T>, Var<T>);                                                \
    template Var<T> concat(std::span<const Var<T>>);                                         \
    template Var<T> slice(Var<T>, std::size_t, std::size_t);                                 \
    template Var<T> reshape(Var<T>, Shape);                                                  \
    template Var<T> softmax(Var<T>);                                                         \
    template Var<T> cross_entropy(std::span<const std::uint32_t>, std::span<const double>, \
                                  Var<T>);                                                   \
    template Var<T> sum(Var<T>);                                                             \
    template Var<T> scale(Var<T>, double);

BLEND_INSTANTIATE_OPS(float)
BLEND_INSTANTIATE_OPS(double)

}  // namespace blend::ad
