#pragma once

#include "cafeme/metrics.hpp"
#include "cafeme/networks.hpp"
#include "cafeme/partition.hpp"
#include "cafeme/seed.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cafeme {

struct RoundConfig {
    std::size_t rounds = 200;             // T
    std::size_t clients_per_round = 5;    // M
    std::size_t personalization_steps = 5;  // S
    double inner_lr = 0.05;               // alpha
    double outer_lr = 0.05;               // beta
    std::size_t batch_size = 30;          // B
    std::uint64_t seed = 0;

    /// Throws ConfigError on invalid values; `n_clients` bounds M when nonzero.
    void validate(std::size_t n_clients = 0) const;
    bool operator==(const RoundConfig&) const = default;
};

/// Draws batches of min(B, n) examples without replacement, reshuffling
/// whenever fewer than a full batch remain.
class BatchSampler {
public:
    BatchSampler(std::size_t n_examples, std::size_t batch_size, std::uint64_t seed);
    std::vector<std::size_t> next();

private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t cursor_;
    Rng rng_;
};

struct PersonalizationResult {
    BaseParams psi;
    Modulation zeta;
    ModulatorParams mu;
    /// The batch zeta was last predicted from.
    Batch last_batch;
};

/// S alternating modulate-then-step updates of (mu, psi) on fresh pers batches,
/// then a final zeta prediction from the last batch. `omega` is not modified.
PersonalizationResult personalize(const GlobalModel& omega, const Architecture& arch, const Batch& pers,
                                  std::size_t steps, double alpha, std::size_t batch_size, std::uint64_t seed);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Loss/accuracy of the modulated network psi | zeta on a batch.
EvalResult evaluate_modulated(const BaseParams& psi, const Modulation& zeta, const Batch& batch);
EvalResult evaluate_plain(const BaseParams& psi, const Batch& batch);

struct ClientUpdate {
    int client_id = 0;
    GlobalModel omega_prime;
    /// Gradient of the eval-split loss at the personalized parameters.
    GlobalModel gradient;
    EvalResult train;  // personalized model on its last pers batch
    EvalResult eval;   // personalized model on the eval split
};

/// Personalize on the pers split, then omega' = omega - beta * g where g is the
/// eval-split loss gradient evaluated at (mu', psi') (first-order update).
ClientUpdate client_round(const GlobalModel& omega, const Architecture& arch, const ClientDataset& client,
                          const RoundConfig& cfg, std::uint64_t round_seed);

/// Uniform componentwise mean, reduced in client-id order.
GlobalModel server_aggregate(std::span<const ClientUpdate> updates);

/// M distinct client positions in [0, n_clients), sorted ascending.
std::vector<std::size_t> sample_clients(std::size_t n_clients, std::size_t m, std::uint64_t seed);

struct FederationResult {
    GlobalModel model;
    MetricsLog log;
};

FederationResult run_federation(const GlobalModel& initial, const Architecture& arch,
                                std::span<const ClientDataset> clients, const RoundConfig& cfg);

/// Test-time protocol for a new client: k personalization steps on pers, metrics on eval.
EvalResult evaluate_personalized(const GlobalModel& omega, const Architecture& arch, const ClientDataset& client,
                                 std::size_t k_steps, double alpha, std::size_t batch_size, std::uint64_t seed);

}  // namespace cafeme
