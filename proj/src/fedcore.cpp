#include "cafeme/fedcore.hpp"

#include <algorithm>
#include <numeric>

namespace cafeme {

void RoundConfig::validate(std::size_t n_clients) const {
    if (clients_per_round < 1) throw ConfigError("clients_per_round must be >= 1");
    if (n_clients != 0 && clients_per_round > n_clients) {
        throw ConfigError("clients_per_round (" + std::to_string(clients_per_round) + ") exceeds the " +
                          std::to_string(n_clients) + " available clients");
    }
    if (!(inner_lr >= 0.0)) throw ConfigError("inner_lr must be >= 0");
    if (!(outer_lr >= 0.0)) throw ConfigError("outer_lr must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

BatchSampler::BatchSampler(std::size_t n_examples, std::size_t batch_size, std::uint64_t seed)
    : order_(n_examples), batch_(std::min(batch_size, n_examples)), cursor_(n_examples), rng_(seed) {
    if (n_examples == 0) throw std::invalid_argument("cannot sample batches from an empty split");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::size_t> BatchSampler::next() {
    if (cursor_ + batch_ > order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
}

namespace {

Batch slice_batch(const Batch& data, std::span<const std::size_t> idx) {
    const std::size_t d = data.x.cols();
    Batch b{Tensor(Shape{idx.size(), d}), {}};
    b.y.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(&data.x[idx[i] * d], d, &b.x[i * d]);
        b.y.push_back(data.y[idx[i]]);
    }
    return b;
}

}  // namespace

PersonalizationResult personalize(const GlobalModel& omega, const Architecture& arch, const Batch& pers,
                                  std::size_t steps, double alpha, std::size_t batch_size, std::uint64_t seed) {
    if (pers.size() == 0) throw std::invalid_argument("personalization needs a nonempty pers split");
    BatchSampler sampler(pers.size(), batch_size, seed);

    GlobalModel adapted = omega;
    Batch batch;
    for (std::size_t s = 0; s < steps; ++s) {
        batch = slice_batch(pers, sampler.next());
        Tape tape;
        const auto vars = bind_params(tape, adapted);
        tape.backward(modulated_loss(tape, batch, vars, arch));
        // Both updates use gradients taken at the pre-step (mu', psi').
        axpy_params(adapted.mu, -alpha, grads_of(tape, vars.mu));
        axpy_params(adapted.psi, -alpha, grads_of(tape, vars.psi));
    }
    if (steps == 0) batch = slice_batch(pers, sampler.next());

    PersonalizationResult out;
    out.zeta = modulator_forward(batch, adapted.mu, arch);
    out.psi = std::move(adapted.psi);
    out.mu = std::move(adapted.mu);
    out.last_batch = std::move(batch);
    return out;
}

EvalResult evaluate_modulated(const BaseParams& psi, const Modulation& zeta, const Batch& batch) {
    Tape tape;
    const auto psi_vars = map_params(psi, [&tape](const Tensor& t) { return tape.constant(t); });
    const auto zeta_vars = map_params(zeta, [&tape](const Tensor& t) { return tape.constant(t); });
    Var logits = base_forward(tape.constant(batch.x), psi_vars, &zeta_vars);
    return {softmax_cross_entropy(logits, batch.y).value().item(), accuracy(logits.value(), batch.y)};
}

EvalResult evaluate_plain(const BaseParams& psi, const Batch& batch) {
    Tape tape;
    const auto psi_vars = map_params(psi, [&tape](const Tensor& t) { return tape.constant(t); });
    Var logits = base_forward(tape.constant(batch.x), psi_vars, nullptr);
    return {softmax_cross_entropy(logits, batch.y).value().item(), accuracy(logits.value(), batch.y)};
}

ClientUpdate client_round(const GlobalModel& omega, const Architecture& arch, const ClientDataset& client,
                          const RoundConfig& cfg, std::uint64_t round_seed) {
    if (client.pers.empty()) throw std::invalid_argument("client " + std::to_string(client.client_id) + " has no pers split");
    if (client.eval.empty()) throw std::invalid_argument("client " + std::to_string(client.client_id) + " has no eval split");
    const std::uint64_t seed = derive_seed(round_seed, static_cast<std::uint64_t>(client.client_id));

    auto pers = personalize(omega, arch, client.pers_batch(), cfg.personalization_steps, cfg.inner_lr,
                            cfg.batch_size, seed);

    // Eval-split loss of psi' | g_mu'(D'), differentiated at (mu', psi').
    const Batch eval = client.eval_batch();
    Tape tape;
    GlobalVars vars{bind_params(tape, pers.mu), bind_params(tape, pers.psi)};
    Var x_ctx = tape.constant(pers.last_batch.x);
    const auto zeta = modulator_forward(x_ctx, pers.last_batch.y, vars.mu, arch);
    Var logits = base_forward(tape.constant(eval.x), vars.psi, &zeta);
    Var loss = softmax_cross_entropy(logits, eval.y);
    tape.backward(loss);

    ClientUpdate update;
    update.client_id = client.client_id;
    update.eval = {loss.value().item(), accuracy(logits.value(), eval.y)};
    update.train = evaluate_modulated(pers.psi, pers.zeta, pers.last_batch);
    update.gradient = grads_of(tape, vars);
    update.omega_prime = omega;
    axpy_params(update.omega_prime, -cfg.outer_lr, update.gradient);
    return update;
}

GlobalModel server_aggregate(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw std::invalid_argument("server_aggregate needs at least one client update");
    std::vector<const ClientUpdate*> ordered;
    for (const auto& u : updates) ordered.push_back(&u);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });

    std::vector<const GlobalModel*> models;
    models.reserve(ordered.size());
    for (const auto* u : ordered) models.push_back(&u->omega_prime);
    return average_params<GlobalModel>(models);
}

std::vector<std::size_t> sample_clients(std::size_t n_clients, std::size_t m, std::uint64_t seed) {
    if (m > n_clients) {
        throw ConfigError("cannot sample " + std::to_string(m) + " clients from " + std::to_string(n_clients));
    }
    std::vector<std::size_t> pool(n_clients);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng rng(seed);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    return pool;
}

FederationResult run_federation(const GlobalModel& initial, const Architecture& arch,
                                std::span<const ClientDataset> clients, const RoundConfig& cfg) {
    cfg.validate(clients.size());
    FederationResult result{initial, {}};
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        const std::uint64_t round_seed = derive_seed(cfg.seed, t);
        const auto chosen = sample_clients(clients.size(), cfg.clients_per_round, derive_seed(round_seed, ~0ULL));
        std::vector<ClientUpdate> updates;
        updates.reserve(chosen.size());
        for (auto i : chosen) {
            updates.push_back(client_round(result.model, arch, clients[i], cfg, round_seed));
            const auto& u = updates.back();
            result.log.add(t, u.client_id, Phase::train, u.train.loss, u.train.accuracy);
            result.log.add(t, u.client_id, Phase::eval, u.eval.loss, u.eval.accuracy);
        }
        result.model = server_aggregate(updates);
    }
    return result;
}

EvalResult evaluate_personalized(const GlobalModel& omega, const Architecture& arch, const ClientDataset& client,
                                 std::size_t k_steps, double alpha, std::size_t batch_size, std::uint64_t seed) {
    if (client.eval.empty()) throw std::invalid_argument("client " + std::to_string(client.client_id) + " has no eval split");
    const auto pers = personalize(omega, arch, client.pers_batch(), k_steps, alpha, batch_size, seed);
    return evaluate_modulated(pers.psi, pers.zeta, client.eval_batch());
}

}  // namespace cafeme
