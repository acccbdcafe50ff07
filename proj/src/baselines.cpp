#include "cafeme/baselines.hpp"

#include <algorithm>

namespace cafeme {

namespace {

Batch take(const Batch& data, std::span<const std::size_t> idx) {
    const std::size_t d = data.x.cols();
    Batch b{Tensor(Shape{idx.size(), d}), {}};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(&data.x[idx[i] * d], d, &b.x[i * d]);
        b.y.push_back(data.y[idx[i]]);
    }
    return b;
}

std::uint64_t client_seed(std::uint64_t round_seed, int client_id) {
    return derive_seed(round_seed, static_cast<std::uint64_t>(client_id));
}

}  // namespace

BaselineModel plain_gradient(const BaselineModel& psi, const Batch& batch) {
    Tape tape;
    const auto vars = bind_params(tape, psi);
    tape.backward(softmax_cross_entropy(base_forward(tape.constant(batch.x), vars, nullptr), batch.y));
    return grads_of(tape, vars);
}

BaselineModel local_sgd(const BaselineModel& psi, const Batch& data, std::size_t steps, double lr,
                        std::size_t batch_size, std::uint64_t seed) {
    BatchSampler sampler(data.size(), batch_size, seed);
    BaselineModel out = psi;
    for (std::size_t s = 0; s < steps; ++s) axpy_params(out, -lr, plain_gradient(out, take(data, sampler.next())));
    return out;
}

BaselineClientResult fedavg_client(const BaselineModel& model, const ClientDataset& client, std::size_t local_steps,
                                   double lr, std::size_t batch_size, std::uint64_t round_seed) {
    const Batch all = client.data.all();
    BaselineClientResult r;
    r.client_id = client.client_id;
    r.model = local_sgd(model, all, local_steps, lr, batch_size, client_seed(round_seed, client.client_id));
    r.train = evaluate_plain(r.model, all);
    r.eval = client.eval.empty() ? r.train : evaluate_plain(r.model, client.eval_batch());
    return r;
}

BaselineClientResult perfedavg_client(const BaselineModel& model, const ClientDataset& client, std::size_t steps,
                                      double alpha, double beta, std::size_t batch_size, std::uint64_t round_seed) {
    if (client.pers.empty() || client.eval.empty()) {
        throw std::invalid_argument("client " + std::to_string(client.client_id) + " needs pers and eval splits");
    }
    const std::uint64_t seed = client_seed(round_seed, client.client_id);
    const Batch pers = client.pers_batch();
    const Batch eval = client.eval_batch();
    BatchSampler inner_sampler(pers.size(), batch_size, derive_seed(seed, 0));
    BatchSampler outer_sampler(eval.size(), batch_size, derive_seed(seed, 1));

    Batch last_inner;
    BaselineModel adapted;
    BaselineClientResult r;
    r.client_id = client.client_id;
    r.model = first_order_meta_update(
        model, steps, alpha, beta,
        [&](const BaselineModel& p, std::size_t) {
            last_inner = take(pers, inner_sampler.next());
            return plain_gradient(p, last_inner);
        },
        [&](const BaselineModel& p) {
            adapted = p;
            return plain_gradient(p, take(eval, outer_sampler.next()));
        });
    r.train = evaluate_plain(adapted, steps > 0 ? last_inner : pers);
    r.eval = evaluate_plain(adapted, eval);
    return r;
}

BaselineModel baseline_aggregate(std::span<const BaselineClientResult> results) {
    if (results.empty()) throw std::invalid_argument("baseline_aggregate needs at least one client");
    std::vector<const BaselineClientResult*> ordered;
    for (const auto& r : results) ordered.push_back(&r);
    std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });
    std::vector<const BaselineModel*> models;
    for (const auto* r : ordered) models.push_back(&r->model);
    return average_params<BaselineModel>(models);
}

BaselineModel fedavg_round(const BaselineModel& model, std::span<const ClientDataset* const> subset,
                           std::size_t local_steps, double lr, std::size_t batch_size, std::uint64_t seed) {
    if (subset.empty()) throw std::invalid_argument("fedavg_round needs at least one client");
    std::vector<BaselineClientResult> results;
    for (const auto* c : subset) results.push_back(fedavg_client(model, *c, local_steps, lr, batch_size, seed));
    return baseline_aggregate(results);
}

BaselineModel perfedavg_round(const BaselineModel& model, std::span<const ClientDataset* const> subset,
                              std::size_t steps, double alpha, double beta, std::size_t batch_size,
                              std::uint64_t seed) {
    if (subset.empty()) throw std::invalid_argument("perfedavg_round needs at least one client");
    std::vector<BaselineClientResult> results;
    for (const auto* c : subset) results.push_back(perfedavg_client(model, *c, steps, alpha, beta, batch_size, seed));
    return baseline_aggregate(results);
}

EvalResult fedavg_ft_evaluate(const BaselineModel& model, const ClientDataset& client, std::size_t k_steps, double lr,
                              std::size_t batch_size, std::uint64_t seed) {
    if (client.pers.empty() || client.eval.empty()) {
        throw std::invalid_argument("client " + std::to_string(client.client_id) + " needs pers and eval splits");
    }
    const BaselineModel tuned = local_sgd(model, client.pers_batch(), k_steps, lr, batch_size, seed);
    return evaluate_plain(tuned, client.eval_batch());
}

namespace {

template <class ClientFn>
BaselineResult run_baseline(const BaselineModel& initial, std::span<const ClientDataset> clients,
                            const RoundConfig& cfg, ClientFn&& client_fn) {
    cfg.validate(clients.size());
    BaselineResult result{initial, {}};
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        const std::uint64_t round_seed = derive_seed(cfg.seed, t);
        const auto chosen = sample_clients(clients.size(), cfg.clients_per_round, derive_seed(round_seed, ~0ULL));
        std::vector<BaselineClientResult> results;
        for (auto i : chosen) {
            results.push_back(client_fn(result.model, clients[i], round_seed));
            const auto& r = results.back();
            result.log.add(t, r.client_id, Phase::train, r.train.loss, r.train.accuracy);
            result.log.add(t, r.client_id, Phase::eval, r.eval.loss, r.eval.accuracy);
        }
        result.model = baseline_aggregate(results);
    }
    return result;
}

}  // namespace

BaselineResult run_fedavg(const BaselineModel& initial, std::span<const ClientDataset> clients, const RoundConfig& cfg,
                          std::size_t local_steps) {
    return run_baseline(initial, clients, cfg, [&](const BaselineModel& m, const ClientDataset& c, std::uint64_t s) {
        return fedavg_client(m, c, local_steps, cfg.inner_lr, cfg.batch_size, s);
    });
}

BaselineResult run_perfedavg(const BaselineModel& initial, std::span<const ClientDataset> clients,
                             const RoundConfig& cfg) {
    return run_baseline(initial, clients, cfg, [&](const BaselineModel& m, const ClientDataset& c, std::uint64_t s) {
        return perfedavg_client(m, c, cfg.personalization_steps, cfg.inner_lr, cfg.outer_lr, cfg.batch_size, s);
    });
}

}  // namespace cafeme
