#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cafeme/baselines.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace cafeme;
using namespace cafeme::testing;

namespace {

std::vector<ClientDataset> family_clients(std::size_t n, std::size_t samples, std::uint64_t seed,
                                          ShiftKind shift = ShiftKind::none, std::size_t n_classes = 3,
                                          std::size_t groups = 2) {
    TaskFamilyConfig cfg;
    cfg.n_clients = n;
    cfg.n_classes = n_classes;
    cfg.input_dim = 3;
    cfg.samples_per_client = samples;
    cfg.shift = shift;
    cfg.groups = groups;
    cfg.seed = seed;
    std::vector<ClientDataset> out;
    for (const auto& c : make_task_family(cfg)) out.push_back(split_pers_eval(c, 0.5, derive_seed(seed, 77)));
    return out;
}

BaselineModel scalar_model(double v) {
    BaselineModel m;
    m.layers.push_back({Tensor(Shape{1, 1}, std::vector<double>{v}), Tensor(Shape{1}, std::vector<double>{0.0})});
    return m;
}

double scalar(const BaselineModel& m) { return m.layers[0].weight[0]; }

LossBuilder plain_loss(const Batch& batch, const BaselineModel& like) {
    return [batch, like](Tape& tape, const std::vector<Var>& leaves) {
        auto vars = bind_params(tape, like);
        std::size_t i = 0;
        for (auto& l : vars.layers) {
            l.weight = leaves[i++];
            l.bias = leaves[i++];
        }
        return softmax_cross_entropy(base_forward(tape.constant(batch.x), vars, nullptr), batch.y);
    };
}

std::vector<Tensor> flat(const BaselineModel& m) {
    std::vector<Tensor> out;
    for (const Tensor* t : param_ptrs(m)) out.push_back(*t);
    return out;
}

RoundConfig round_cfg(std::size_t rounds, std::size_t m, double inner, double outer, std::size_t steps = 3) {
    RoundConfig cfg;
    cfg.rounds = rounds;
    cfg.clients_per_round = m;
    cfg.personalization_steps = steps;
    cfg.inner_lr = inner;
    cfg.outer_lr = outer;
    cfg.batch_size = 8;
    cfg.seed = 13;
    return cfg;
}

}  // namespace

TEST_CASE("first-order meta update on a scalar quadratic") {
    // Loss 0.5 psi^2, gradient psi. One inner step from 0.1 with alpha 0.1
    // reaches 0.09; the outer step uses the gradient there.
    const BaselineModel psi = scalar_model(0.1);
    double adapted_at = -1.0;
    auto grad = [](const BaselineModel& p) { return scalar_model(scalar(p)); };
    const BaselineModel out = first_order_meta_update(
        psi, 1, 0.1, 0.5, [&](const BaselineModel& p, std::size_t) { return grad(p); },
        [&](const BaselineModel& p) {
            adapted_at = scalar(p);
            return grad(p);
        });
    CHECK(adapted_at == doctest::Approx(0.09).epsilon(1e-15));
    CHECK(scalar(out) == doctest::Approx(0.1 - 0.5 * 0.09).epsilon(1e-15));
    CHECK(scalar(psi) == 0.1);

    // Zero inner steps: plain gradient step at psi.
    const BaselineModel plain =
        first_order_meta_update(psi, 0, 0.1, 0.5, [&](const BaselineModel& p, std::size_t) { return grad(p); }, grad);
    CHECK(scalar(plain) == doctest::Approx(0.05).epsilon(1e-15));
}

TEST_CASE("plain gradient matches finite differences") {
    Architecture arch = small_arch();
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        BaselineModel psi = init_global(arch, 100 + trial).psi;
        for (Tensor* t : param_ptrs(psi)) *t = away_from_zero(random_tensor(t->shape(), rng, 0.8), 0.05);
        const Batch batch{random_tensor(Shape{6, arch.input_dim}, rng), random_labels(6, arch.n_classes, rng)};
        const auto g = plain_gradient(psi, batch);
        const auto fd = numeric_gradient(flat(psi), plain_loss(batch, psi));
        CHECK(relative_error(flat(g), fd) < 1e-6);
    }
}

TEST_CASE("local SGD reductions") {
    const Architecture arch = small_arch();
    const BaselineModel psi = init_global(arch, 5).psi;
    const auto clients = family_clients(1, 20, 6);
    const Batch all = clients[0].data.all();

    SUBCASE("lr = 0 and zero steps leave the model unchanged") {
        CHECK(max_abs_param_diff(local_sgd(psi, all, 7, 0.0, 4, 1), psi) == 0.0);
        CHECK(max_abs_param_diff(local_sgd(psi, all, 0, 0.3, 4, 1), psi) == 0.0);
    }
    SUBCASE("one full-batch step is one SGD step") {
        BaselineModel expected = psi;
        axpy_params(expected, -0.2, plain_gradient(psi, all));
        CHECK(max_abs_param_diff(local_sgd(psi, all, 1, 0.2, 1000, 9), expected) < 1e-12);
    }
    SUBCASE("single FedAvg client and single step equals one SGD step") {
        const ClientDataset* subset[] = {&clients[0]};
        BaselineModel expected = psi;
        axpy_params(expected, -0.2, plain_gradient(psi, all));
        CHECK(max_abs_param_diff(fedavg_round(psi, subset, 1, 0.2, 1000, 4), expected) < 1e-12);
    }
    SUBCASE("deterministic") {
        CHECK(max_abs_param_diff(local_sgd(psi, all, 5, 0.1, 4, 2), local_sgd(psi, all, 5, 0.1, 4, 2)) == 0.0);
    }
}

TEST_CASE("Per-FedAvg client") {
    const Architecture arch = small_arch();
    const BaselineModel psi = init_global(arch, 15).psi;
    const auto clients = family_clients(2, 24, 16);
    const auto& client = clients[1];

    SUBCASE("alpha = 0 reduces to one outer step on the eval split") {
        const auto r = perfedavg_client(psi, client, 3, 0.0, 0.4, 1000, 1);
        BaselineModel expected = psi;
        axpy_params(expected, -0.4, plain_gradient(psi, client.eval_batch()));
        CHECK(max_abs_param_diff(r.model, expected) < 1e-12);
        CHECK(r.client_id == client.client_id);
    }
    SUBCASE("beta = 0 leaves the model unchanged and reports adapted metrics") {
        const auto r = perfedavg_client(psi, client, 3, 0.2, 0.0, 4, 1);
        CHECK(max_abs_param_diff(r.model, psi) == 0.0);
        CHECK(r.eval.accuracy >= 0.0);
        CHECK(r.eval.accuracy <= 1.0);
    }
    SUBCASE("empty splits") {
        ClientDataset no_eval = client;
        no_eval.eval.clear();
        CHECK_THROWS_AS(perfedavg_client(psi, no_eval, 1, 0.1, 0.1, 4, 1), std::invalid_argument);
        ClientDataset no_pers = client;
        no_pers.pers.clear();
        CHECK_THROWS_AS(perfedavg_client(psi, no_pers, 1, 0.1, 0.1, 4, 1), std::invalid_argument);
        CHECK_THROWS_AS(fedavg_ft_evaluate(psi, no_pers, 1, 0.1, 4, 1), std::invalid_argument);
    }
}

TEST_CASE("open modulation with S = 0 reduces to a plain gradient step") {
    const Architecture arch = small_arch(ModulationMode::open);
    const GlobalModel omega = init_global(arch, 25);
    const auto clients = family_clients(1, 20, 26);
    RoundConfig cfg = round_cfg(1, 1, 0.1, 0.3, 0);
    const auto u = client_round(omega, arch, clients[0], cfg, 3);
    BaseParams expected = omega.psi;
    axpy_params(expected, -0.3, plain_gradient(omega.psi, clients[0].eval_batch()));
    CHECK(max_abs_param_diff(u.omega_prime.psi, expected) < 1e-12);
    CHECK(max_abs_param_diff(u.omega_prime.mu, omega.mu) == 0.0);
}

TEST_CASE("fine-tuning evaluation") {
    const Architecture arch = small_arch();
    const BaselineModel psi = init_global(arch, 35).psi;
    const auto clients = family_clients(1, 30, 36);
    const auto& c = clients[0];

    const auto k0 = fedavg_ft_evaluate(psi, c, 0, 0.1, 4, 1);
    const auto plain = evaluate_plain(psi, c.eval_batch());
    CHECK(k0.accuracy == plain.accuracy);
    CHECK(k0.loss == plain.loss);
    for (std::size_t k : {1u, 5u, 50u}) {
        const auto frozen = fedavg_ft_evaluate(psi, c, k, 0.0, 4, 1);
        CHECK(frozen.accuracy == plain.accuracy);
        CHECK(frozen.loss == plain.loss);
    }
}

TEST_CASE("baseline aggregation") {
    const Architecture arch = small_arch();
    Rng rng(45);
    std::vector<BaselineClientResult> results;
    for (int id = 0; id < 4; ++id) {
        BaselineClientResult r;
        r.client_id = 10 - id;
        r.model = init_global(arch, 46).psi;
        for (Tensor* t : param_ptrs(r.model)) *t = random_tensor(t->shape(), rng);
        results.push_back(r);
    }
    const BaselineModel agg = baseline_aggregate(results);
    BaselineModel manual = results[0].model;
    for (Tensor* t : param_ptrs(manual)) std::fill(t->values().begin(), t->values().end(), 0.0);
    for (const auto& r : results) axpy_params(manual, 0.25, r.model);
    CHECK(max_abs_param_diff(agg, manual) < 1e-12);
    std::reverse(results.begin(), results.end());
    CHECK(max_abs_param_diff(baseline_aggregate(results), agg) == 0.0);
    CHECK_THROWS_AS(baseline_aggregate({}), std::invalid_argument);
    CHECK_THROWS_AS(fedavg_round(agg, {}, 1, 0.1, 4, 1), std::invalid_argument);
}

TEST_CASE("baseline training loops") {
    Architecture arch = small_arch();
    arch.n_classes = 2;
    arch.hidden_widths = {8, 8};
    const auto clients = family_clients(10, 40, 55, ShiftKind::none, 2);
    const BaselineModel init = init_global(arch, 56).psi;

    SUBCASE("T = 0 and determinism") {
        RoundConfig cfg = round_cfg(0, 3, 0.1, 0.1);
        CHECK(max_abs_param_diff(run_fedavg(init, clients, cfg, 3).model, init) == 0.0);
        CHECK(max_abs_param_diff(run_perfedavg(init, clients, cfg).model, init) == 0.0);
        cfg.rounds = 4;
        const auto a = run_perfedavg(init, clients, cfg);
        const auto b = run_perfedavg(init, clients, cfg);
        CHECK(a.log == b.log);
        CHECK(max_abs_param_diff(a.model, b.model) == 0.0);
        CHECK(a.log.size() == 4 * 3 * 2);
        cfg.clients_per_round = 11;
        CHECK_THROWS_AS(run_fedavg(init, clients, cfg, 1), ConfigError);
    }
    SUBCASE("i.i.d. FedAvg reaches high accuracy") {
        RoundConfig cfg = round_cfg(100, 5, 0.1, 0.1);
        const auto r = run_fedavg(init, clients, cfg, 5);
        double acc = 0.0;
        for (const auto& c : clients) acc += evaluate_plain(r.model, c.eval_batch()).accuracy;
        CHECK(acc / static_cast<double>(clients.size()) >= 0.9);
    }
}

TEST_CASE("fine-tuning helps under concept shift") {
    Architecture arch = small_arch();
    arch.n_classes = 4;
    arch.hidden_widths = {16, 16};
    const auto clients = family_clients(12, 80, 65, ShiftKind::label_map, 4, 4);
    const std::span<const ClientDataset> train(clients.data(), 8);
    RoundConfig cfg = round_cfg(150, 4, 0.1, 0.1);
    const auto r = run_fedavg(init_global(arch, 66).psi, train, cfg, 5);
    double k0 = 0.0, k50 = 0.0;
    for (std::size_t i = 8; i < clients.size(); ++i) {
        k0 += fedavg_ft_evaluate(r.model, clients[i], 0, 0.1, 20, i).accuracy;
        k50 += fedavg_ft_evaluate(r.model, clients[i], 50, 0.1, 20, i).accuracy;
    }
    CHECK(k50 > k0 + 0.4);
}
