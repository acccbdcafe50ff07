#pragma once

#include "cafeme/autodiff.hpp"
#include "cafeme/tensor.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace cafeme {

/// How predicted modulation parameters act on hidden activations.
///  - gating: a * sigmoid(zeta)
///  - affine: zeta_a * a + zeta_b (FiLM)
///  - open:   gates pinned at sigmoid(+40); the modulator output is ignored
enum class ModulationMode { gating, affine, open };

std::string_view to_string(ModulationMode mode);
ModulationMode parse_modulation_mode(std::string_view name);

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Architecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t n_classes = 0;
    /// h_x: per-example input feature extractor (ReLU layers).
    std::vector<std::size_t> modulator_feature_dims;
    /// h: transform of [h_x(x), one_hot(y)] before averaging (ReLU layers).
    std::vector<std::size_t> modulator_embed_dims;
    /// Hidden layers of the head that maps the client representation to zeta.
    std::vector<std::size_t> modulator_head_dims;
    ModulationMode modulation_mode = ModulationMode::gating;

    void validate() const;
    /// Number of gated units, i.e. the sum of hidden widths.
    std::size_t gated_units() const;
    /// Output width of the modulator head.
    std::size_t head_output_dim() const;
    bool operator==(const Architecture&) const = default;
};

// Parameter containers are templated on the leaf type so that the same
// layout holds plain values (Tensor), tape handles (Var) or gradients.

template <class T>
struct LinearT {
    T weight;  // [fan_in x fan_out]
    T bias;    // [fan_out]
};

template <class T>
struct MlpT {
    std::vector<LinearT<T>> layers;
};

template <class T>
struct ModulatorT {
    MlpT<T> feature;  // h_x
    MlpT<T> embed;    // h
    MlpT<T> head;     // part C
};

template <class T>
struct GlobalModelT {
    ModulatorT<T> mu;
    MlpT<T> psi;
};

/// Per hidden layer: raw zeta (gating) or (zeta_a, zeta_b) in affine mode.
template <class T>
struct ModulationT {
    ModulationMode mode = ModulationMode::gating;
    std::vector<T> zeta;
    std::vector<T> shift;  // affine mode only
};

using BaseParams = MlpT<Tensor>;
using ModulatorParams = ModulatorT<Tensor>;
using GlobalModel = GlobalModelT<Tensor>;
using Modulation = ModulationT<Tensor>;

template <class T, class F>
auto map_params(const LinearT<T>& l, F&& f) {
    using U = decltype(f(l.weight));
    return LinearT<U>{f(l.weight), f(l.bias)};
}

template <class T, class F>
auto map_params(const MlpT<T>& m, F&& f) {
    using U = decltype(f(std::declval<const T&>()));
    MlpT<U> out;
    out.layers.reserve(m.layers.size());
    for (const auto& l : m.layers) out.layers.push_back(map_params(l, f));
    return out;
}

template <class T, class F>
auto map_params(const ModulatorT<T>& m, F&& f) {
    using U = decltype(f(std::declval<const T&>()));
    return ModulatorT<U>{map_params(m.feature, f), map_params(m.embed, f), map_params(m.head, f)};
}

template <class T, class F>
auto map_params(const GlobalModelT<T>& g, F&& f) {
    using U = decltype(f(std::declval<const T&>()));
    return GlobalModelT<U>{map_params(g.mu, f), map_params(g.psi, f)};
}

template <class T, class F>
auto map_params(const ModulationT<T>& m, F&& f) {
    using U = decltype(f(std::declval<const T&>()));
    ModulationT<U> out;
    out.mode = m.mode;
    for (const auto& z : m.zeta) out.zeta.push_back(f(z));
    for (const auto& s : m.shift) out.shift.push_back(f(s));
    return out;
}

// Flattened views in a fixed traversal order.
template <class T>
void collect(MlpT<T>& m, std::vector<T*>& out) {
    for (auto& l : m.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
}
template <class T>
void collect(const MlpT<T>& m, std::vector<const T*>& out) {
    for (const auto& l : m.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
}
template <class M, class P>
void collect_modulator(M& m, std::vector<P*>& out) {
    collect(m.feature, out);
    collect(m.embed, out);
    collect(m.head, out);
}
template <class T>
void collect(ModulatorT<T>& m, std::vector<T*>& out) { collect_modulator(m, out); }
template <class T>
void collect(const ModulatorT<T>& m, std::vector<const T*>& out) { collect_modulator(m, out); }
template <class T>
void collect(GlobalModelT<T>& g, std::vector<T*>& out) {
    collect(g.mu, out);
    collect(g.psi, out);
}
template <class T>
void collect(const GlobalModelT<T>& g, std::vector<const T*>& out) {
    collect(g.mu, out);
    collect(g.psi, out);
}

template <class M>
auto param_ptrs(M& m) {
    if constexpr (std::is_const_v<M>) {
        std::vector<const Tensor*> out;
        collect(m, out);
        return out;
    } else {
        std::vector<Tensor*> out;
        collect(m, out);
        return out;
    }
}

std::size_t param_count(const GlobalModel& g);

/// Records every tensor of `params` as a differentiable leaf on `tape`.
template <class M>
auto bind_params(Tape& tape, const M& params) {
    return map_params(params, [&tape](const Tensor& t) { return tape.param(t); });
}

/// Reads back the gradients of a bound parameter set.
template <class M>
auto grads_of(const Tape& tape, const M& vars) {
    return map_params(vars, [&tape](const Var& v) { return tape.grad(v); });
}

/// p <- p + scale * d over matching layouts.
template <class M>
void axpy_params(M& p, double scale, const M& d) {
    auto dst = param_ptrs(p);
    auto src = param_ptrs(d);
    if (dst.size() != src.size()) throw ShapeError("parameter layout mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) axpy(*dst[i], scale, *src[i]);
}

/// Largest absolute elementwise difference over matching layouts.
template <class M>
double max_abs_param_diff(const M& a, const M& b) {
    auto pa = param_ptrs(a);
    auto pb = param_ptrs(b);
    if (pa.size() != pb.size()) throw ShapeError("parameter layout mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) m = std::max(m, max_abs_diff(*pa[i], *pb[i]));
    return m;
}

template <class M>
bool same_layout(const M& a, const M& b) {
    auto pa = param_ptrs(a);
    auto pb = param_ptrs(b);
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!pa[i]->same_shape(*pb[i])) return false;
    }
    return true;
}

/// Uniform componentwise mean in the given order. The running form
/// m += (x - m) / k keeps identical inputs exact and stays inside [min, max].
template <class M>
M average_params(std::span<const M* const> items) {
    if (items.empty()) throw std::invalid_argument("cannot average an empty parameter list");
    M mean = *items.front();
    auto dst = param_ptrs(mean);
    for (std::size_t k = 1; k < items.size(); ++k) {
        if (!same_layout(mean, *items[k])) {
            throw ShapeError("parameter layout mismatch at item " + std::to_string(k));
        }
        const auto src = param_ptrs(*items[k]);
        const double inv = 1.0 / static_cast<double>(k + 1);
        for (std::size_t p = 0; p < dst.size(); ++p) {
            auto& m = dst[p]->values();
            const auto& x = src[p]->values();
            for (std::size_t i = 0; i < m.size(); ++i) m[i] += (x[i] - m[i]) * inv;
        }
    }
    return mean;
}

using BaseVars = MlpT<Var>;
using ModulatorVars = ModulatorT<Var>;
using GlobalVars = GlobalModelT<Var>;
using ModulationVars = ModulationT<Var>;

/// A labelled mini-batch: features [B x d] and class indices.
struct Batch {
    Tensor x;
    std::vector<int> y;
    std::size_t size() const { return y.size(); }
};

/// activations * sigmoid(zeta), zeta broadcast over the batch.
Var gate(Var activations, Var zeta);
/// zeta_a * activations + zeta_b, broadcast over the batch.
Var film(Var activations, Var zeta_a, Var zeta_b);

Tensor gate(const Tensor& activations, const Tensor& zeta);
Tensor film(const Tensor& activations, const Tensor& zeta_a, const Tensor& zeta_b);

/// Modulated MLP forward. Each hidden layer is relu(linear(.)) followed by
/// the layer's modulation when `zeta` is given; the output layer is plain linear.
Var base_forward(Var x, const BaseVars& psi, const ModulationVars* zeta);
Tensor base_forward(const Tensor& x, const BaseParams& psi, const Modulation* zeta = nullptr);

/// Maps a labelled batch to per-hidden-layer modulation parameters:
/// mean over examples of h(h_x(x) ++ one_hot(y)), then the head MLP, then a
/// split of the head output into per-layer slices.
ModulationVars modulator_forward(Var x, std::span<const int> y, const ModulatorVars& mu, const Architecture& arch);
Modulation modulator_forward(const Batch& batch, const ModulatorParams& mu, const Architecture& arch);

/// Mean cross-entropy of the modulated network on `batch`, recorded on `tape`.
Var modulated_loss(Tape& tape, const Batch& batch, const GlobalVars& omega, const Architecture& arch);

/// Fan-in scaled normal weights (std 1/sqrt(fan_in)), zero biases.
GlobalModel init_global(const Architecture& arch, std::uint64_t seed);
BaseParams init_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out, std::uint64_t seed);

/// Fraction of rows whose arg-max logit equals the target.
double accuracy(const Tensor& logits, std::span<const int> targets);

}  // namespace cafeme
