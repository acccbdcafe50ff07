#include "cafeme/networks.hpp"

#include "cafeme/seed.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace cafeme {

namespace {

constexpr double kOpenGate = 40.0;

std::string join_dims(const std::vector<std::size_t>& dims) {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(dims[i]);
    }
    return s;
}

Var mlp_forward(Var h, const BaseVars& mlp, bool activate_last) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        h = linear(h, mlp.layers[l].weight, mlp.layers[l].bias);
        if (activate_last || l + 1 < mlp.layers.size()) h = relu(h);
    }
    return h;
}

void init_layers(BaseParams& mlp, std::size_t in, std::span<const std::size_t> widths, Rng& rng) {
    for (auto out : widths) {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        Tensor w(Shape{in, out});
        for (auto& v : w.values()) v = dist(rng);
        mlp.layers.push_back({std::move(w), Tensor(Shape{out})});
        in = out;
    }
}

}  // namespace

std::string_view to_string(ModulationMode mode) {
    switch (mode) {
        case ModulationMode::gating: return "gating";
        case ModulationMode::affine: return "affine";
        case ModulationMode::open: return "open";
    }
    return "gating";
}

ModulationMode parse_modulation_mode(std::string_view name) {
    if (name == "gating") return ModulationMode::gating;
    if (name == "affine") return ModulationMode::affine;
    if (name == "open") return ModulationMode::open;
    throw ConfigError("unknown modulation_mode '" + std::string(name) + "' (expected gating, affine or open)");
}

void Architecture::validate() const {
    if (input_dim == 0) throw ConfigError("input_dim must be positive");
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
    if (hidden_widths.empty()) throw ConfigError("hidden_widths needs at least one hidden layer");
    auto positive = [](const std::vector<std::size_t>& dims, const char* key) {
        for (auto d : dims) {
            if (d == 0) throw ConfigError(std::string(key) + " has a zero width: " + join_dims(dims));
        }
    };
    positive(hidden_widths, "hidden_widths");
    positive(modulator_feature_dims, "modulator_feature_dims");
    positive(modulator_embed_dims, "modulator_embed_dims");
    positive(modulator_head_dims, "modulator_head_dims");
}

std::size_t Architecture::gated_units() const {
    return std::accumulate(hidden_widths.begin(), hidden_widths.end(), std::size_t{0});
}

std::size_t Architecture::head_output_dim() const {
    return modulation_mode == ModulationMode::affine ? 2 * gated_units() : gated_units();
}

std::size_t param_count(const GlobalModel& g) {
    std::size_t n = 0;
    for (const Tensor* t : param_ptrs(g)) n += t->size();
    return n;
}

Var gate(Var activations, Var zeta) {
    return mul(activations, sigmoid(zeta));
}

Var film(Var activations, Var zeta_a, Var zeta_b) {
    return add(mul(activations, zeta_a), zeta_b);
}

Tensor gate(const Tensor& activations, const Tensor& zeta) {
    Tape tape;
    return gate(tape.constant(activations), tape.constant(zeta)).value();
}

Tensor film(const Tensor& activations, const Tensor& zeta_a, const Tensor& zeta_b) {
    Tape tape;
    return film(tape.constant(activations), tape.constant(zeta_a), tape.constant(zeta_b)).value();
}

Var base_forward(Var x, const BaseVars& psi, const ModulationVars* zeta) {
    if (psi.layers.size() < 2) throw ShapeError("base network needs a hidden layer and an output layer");
    const std::size_t hidden = psi.layers.size() - 1;
    if (zeta != nullptr) {
        if (zeta->zeta.size() != hidden) {
            throw ShapeError("modulation has " + std::to_string(zeta->zeta.size()) + " layers, base network has " +
                             std::to_string(hidden) + " hidden layers");
        }
        if (zeta->mode == ModulationMode::affine && zeta->shift.size() != hidden) {
            throw ShapeError("affine modulation is missing shift vectors");
        }
    }
    Var h = x;
    for (std::size_t l = 0; l < hidden; ++l) {
        h = relu(linear(h, psi.layers[l].weight, psi.layers[l].bias));
        if (zeta == nullptr) continue;
        if (zeta->mode == ModulationMode::affine) {
            h = film(h, zeta->zeta[l], zeta->shift[l]);
        } else {
            h = gate(h, zeta->zeta[l]);
        }
    }
    return linear(h, psi.layers.back().weight, psi.layers.back().bias);
}

Tensor base_forward(const Tensor& x, const BaseParams& psi, const Modulation* zeta) {
    Tape tape;
    const auto psi_vars = map_params(psi, [&tape](const Tensor& t) { return tape.constant(t); });
    if (zeta == nullptr) return base_forward(tape.constant(x), psi_vars, nullptr).value();
    const auto zeta_vars = map_params(*zeta, [&tape](const Tensor& t) { return tape.constant(t); });
    return base_forward(tape.constant(x), psi_vars, &zeta_vars).value();
}

ModulationVars modulator_forward(Var x, std::span<const int> y, const ModulatorVars& mu, const Architecture& arch) {
    Tape& tape = *x.tape;
    const Tensor& xv = x.value();
    if (y.empty() || xv.rows() == 0) throw std::invalid_argument("empty modulation batch");
    if (xv.rank() != 2 || xv.rows() != y.size()) {
        throw ShapeError("modulation batch features " + shape_str(xv.shape()) + " vs " + std::to_string(y.size()) +
                         " labels");
    }

    ModulationVars out;
    out.mode = arch.modulation_mode;
    if (arch.modulation_mode == ModulationMode::open) {
        for (auto w : arch.hidden_widths) out.zeta.push_back(tape.constant(Tensor(Shape{1, w}, kOpenGate)));
        return out;
    }

    Var features = mlp_forward(x, mu.feature, true);
    Var joint = concat_cols(features, tape.constant(one_hot(y, arch.n_classes)));
    Var embedded = mlp_forward(joint, mu.embed, true);
    Var context = mean_rows(embedded);
    Var head = mlp_forward(context, mu.head, false);
    if (head.value().cols() != arch.head_output_dim()) {
        throw ShapeError("modulator head emits " + std::to_string(head.value().cols()) + " values, expected " +
                         std::to_string(arch.head_output_dim()));
    }

    std::size_t offset = 0;
    for (auto w : arch.hidden_widths) {
        out.zeta.push_back(slice_cols(head, offset, offset + w));
        offset += w;
        if (arch.modulation_mode == ModulationMode::affine) {
            out.shift.push_back(slice_cols(head, offset, offset + w));
            offset += w;
        }
    }
    return out;
}

Modulation modulator_forward(const Batch& batch, const ModulatorParams& mu, const Architecture& arch) {
    Tape tape;
    const auto mu_vars = map_params(mu, [&tape](const Tensor& t) { return tape.constant(t); });
    const auto vars = modulator_forward(tape.constant(batch.x), batch.y, mu_vars, arch);
    return map_params(vars, [](const Var& v) { return v.value(); });
}

Var modulated_loss(Tape& tape, const Batch& batch, const GlobalVars& omega, const Architecture& arch) {
    Var x = tape.constant(batch.x);
    const auto zeta = modulator_forward(x, batch.y, omega.mu, arch);
    return softmax_cross_entropy(base_forward(x, omega.psi, &zeta), batch.y);
}

BaseParams init_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out, std::uint64_t seed) {
    Rng rng(seed);
    BaseParams mlp;
    std::vector<std::size_t> widths(hidden.begin(), hidden.end());
    widths.push_back(out);
    init_layers(mlp, in, widths, rng);
    return mlp;
}

GlobalModel init_global(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    GlobalModel g;
    g.psi = init_mlp(arch.input_dim, arch.hidden_widths, arch.n_classes, derive_seed(seed, 0));

    Rng rng(derive_seed(seed, 1));
    init_layers(g.mu.feature, arch.input_dim, arch.modulator_feature_dims, rng);
    const std::size_t feat_out =
        arch.modulator_feature_dims.empty() ? arch.input_dim : arch.modulator_feature_dims.back();
    init_layers(g.mu.embed, feat_out + arch.n_classes, arch.modulator_embed_dims, rng);
    const std::size_t embed_out =
        arch.modulator_embed_dims.empty() ? feat_out + arch.n_classes : arch.modulator_embed_dims.back();
    std::vector<std::size_t> head = arch.modulator_head_dims;
    head.push_back(arch.head_output_dim());
    init_layers(g.mu.head, embed_out, head, rng);
    return g;
}

double accuracy(const Tensor& logits, std::span<const int> targets) {
    const std::size_t b = logits.rows(), n = logits.cols();
    if (targets.size() != b || b == 0) throw ShapeError("accuracy: logits/targets mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
            if (logits[i * n + j] > logits[i * n + best]) best = j;
        }
        if (static_cast<int>(best) == targets[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(b);
}

}  // namespace cafeme
