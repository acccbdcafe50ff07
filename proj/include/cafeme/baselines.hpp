#pragma once

#include "cafeme/fedcore.hpp"

#include <cstddef>
#include <cstdint>
#include <span>

namespace cafeme {

/// Base network only; no modulator.
using BaselineModel = BaseParams;

/// Gradient of the plain (unmodulated) mean cross-entropy on `batch`.
BaselineModel plain_gradient(const BaselineModel& psi, const Batch& batch);

/// `steps` mini-batch SGD steps on `data` starting from `psi`.
BaselineModel local_sgd(const BaselineModel& psi, const Batch& data, std::size_t steps, double lr,
                        std::size_t batch_size, std::uint64_t seed);

/// First-order MAML update: adapt a copy of `psi` with `steps` inner steps,
/// then step `psi` itself by the outer gradient evaluated at the adapted point.
/// `inner(adapted, s)` and `outer(adapted)` return gradients in psi's layout.
template <class Params, class InnerGrad, class OuterGrad>
Params first_order_meta_update(const Params& psi, std::size_t steps, double alpha, double beta, InnerGrad&& inner,
                               OuterGrad&& outer) {
    Params adapted = psi;
    for (std::size_t s = 0; s < steps; ++s) axpy_params(adapted, -alpha, inner(adapted, s));
    Params updated = psi;
    axpy_params(updated, -beta, outer(adapted));
    return updated;
}

struct BaselineClientResult {
    int client_id = 0;
    BaselineModel model;
    EvalResult train;
    EvalResult eval;
};

/// One FedAvg client: local SGD on all of the client's data.
BaselineClientResult fedavg_client(const BaselineModel& model, const ClientDataset& client, std::size_t local_steps,
                                   double lr, std::size_t batch_size, std::uint64_t round_seed);

/// One first-order Per-FedAvg client: S inner steps on pers batches, then an
/// outer step on an independent eval batch, evaluated at the adapted point.
BaselineClientResult perfedavg_client(const BaselineModel& model, const ClientDataset& client, std::size_t steps,
                                      double alpha, double beta, std::size_t batch_size, std::uint64_t round_seed);

/// Uniform mean of client models, reduced in client-id order.
BaselineModel baseline_aggregate(std::span<const BaselineClientResult> results);

BaselineModel fedavg_round(const BaselineModel& model, std::span<const ClientDataset* const> subset,
                           std::size_t local_steps, double lr, std::size_t batch_size, std::uint64_t seed);

BaselineModel perfedavg_round(const BaselineModel& model, std::span<const ClientDataset* const> subset,
                              std::size_t steps, double alpha, double beta, std::size_t batch_size, std::uint64_t seed);

/// k SGD fine-tuning steps on the pers split, then metrics on the eval split.
EvalResult fedavg_ft_evaluate(const BaselineModel& model, const ClientDataset& client, std::size_t k_steps, double lr,
                              std::size_t batch_size, std::uint64_t seed);

struct BaselineResult {
    BaselineModel model;
    MetricsLog log;
};

/// FedAvg training loop; `local_steps` SGD steps per client per round at cfg.inner_lr.
BaselineResult run_fedavg(const BaselineModel& initial, std::span<const ClientDataset> clients, const RoundConfig& cfg,
                          std::size_t local_steps);

/// Per-FedAvg training loop with S = cfg.personalization_steps, alpha = inner_lr, beta = outer_lr.
BaselineResult run_perfedavg(const BaselineModel& initial, std::span<const ClientDataset> clients,
                             const RoundConfig& cfg);

}  // namespace cafeme
