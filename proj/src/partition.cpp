#include "cafeme/partition.hpp"

#include "cafeme/seed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

namespace cafeme {

void LabeledDataset::push_back(std::span<const double> x, int y) {
    if (dim == 0 && labels.empty()) dim = x.size();
    if (x.size() != dim) {
        throw ShapeError("feature width " + std::to_string(x.size()) + " differs from dataset width " +
                         std::to_string(dim));
    }
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
}

void LabeledDataset::validate() const {
    if (labels.empty()) throw std::invalid_argument("dataset is empty");
    if (dim == 0 || features.size() != labels.size() * dim) throw ShapeError("dataset features are not rectangular");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
            throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
        }
    }
}

Batch LabeledDataset::gather(std::span<const std::size_t> indices) const {
    Batch b{Tensor(Shape{indices.size(), dim}), {}};
    b.y.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        if (src >= size()) throw std::out_of_range("example index " + std::to_string(src) + " out of range");
        std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(src * dim), dim, &b.x[i * dim]);
        b.y.push_back(labels[src]);
    }
    return b;
}

Batch LabeledDataset::all() const {
    std::vector<std::size_t> idx(size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return gather(idx);
}

ClientDataset make_client(int client_id, LabeledDataset data) {
    ClientDataset cd;
    cd.client_id = client_id;
    cd.pers.resize(data.size());
    std::iota(cd.pers.begin(), cd.pers.end(), std::size_t{0});
    cd.data = std::move(data);
    return cd;
}

namespace {

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
    LabeledDataset out;
    out.dim = ds.dim;
    out.n_classes = ds.n_classes;
    out.features.reserve(indices.size() * ds.dim);
    out.labels.reserve(indices.size());
    for (auto i : indices) out.push_back(ds.row(i), ds.labels[i]);
    return out;
}

// Largest-remainder apportionment of `total` items by `weights` (summing to 1).
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
    std::vector<std::size_t> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = weights[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) counts[remainders[k % remainders.size()].second]++;
    return counts;
}

}  // namespace

std::vector<ClientDataset> shards_partition(const LabeledDataset& ds, std::size_t n_clients,
                                            std::size_t shards_per_client, std::uint64_t seed) {
    ds.validate();
    if (n_clients == 0 || shards_per_client == 0) throw std::invalid_argument("shards_partition needs clients and shards");
    const std::size_t n_shards = n_clients * shards_per_client;
    if (ds.size() % n_shards != 0) {
        const double shard_size = static_cast<double>(ds.size()) / static_cast<double>(n_shards);
        throw std::invalid_argument("shards_partition: " + std::to_string(ds.size()) + " examples do not divide into " +
                                    std::to_string(n_shards) + " shards; required shard size " +
                                    std::to_string(shard_size) + " must be a whole number");
    }
    const std::size_t shard_size = ds.size() / n_shards;

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });

    std::vector<std::size_t> shard_ids(n_shards);
    std::iota(shard_ids.begin(), shard_ids.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

    std::vector<ClientDataset> clients;
    clients.reserve(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
        std::vector<std::size_t> idx;
        idx.reserve(shards_per_client * shard_size);
        for (std::size_t s = 0; s < shards_per_client; ++s) {
            const std::size_t shard = shard_ids[c * shards_per_client + s];
            for (std::size_t k = 0; k < shard_size; ++k) idx.push_back(order[shard * shard_size + k]);
        }
        clients.push_back(make_client(static_cast<int>(c), subset(ds, idx)));
    }
    return clients;
}

std::vector<ClientDataset> dirichlet_partition(const LabeledDataset& ds, std::size_t n_clients, double concentration,
                                               std::uint64_t seed, std::size_t min_client_size) {
    ds.validate();
    if (!(concentration > 0.0)) throw std::invalid_argument("dirichlet concentration must be positive");
    if (n_clients == 0) throw std::invalid_argument("dirichlet_partition needs at least one client");
    if (n_clients * std::max<std::size_t>(min_client_size, 1) > ds.size()) {
        throw std::invalid_argument("too few examples for " + std::to_string(n_clients) + " clients");
    }

    Rng rng(seed);
    std::gamma_distribution<double> gamma(concentration, 1.0);
    std::vector<std::vector<std::size_t>> assigned(n_clients);

    for (std::size_t cls = 0; cls < ds.n_classes; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (static_cast<std::size_t>(ds.labels[i]) == cls) members.push_back(i);
        }
        std::shuffle(members.begin(), members.end(), rng);

        std::vector<double> p(n_clients);
        double total = 0.0;
        for (auto& v : p) total += (v = gamma(rng));
        if (total > 0.0) {
            for (auto& v : p) v /= total;
        } else {
            // Every draw underflowed; fall back to the symmetric mean.
            std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(n_clients));
        }

        const auto counts = apportion(members.size(), p);
        std::size_t next = 0;
        for (std::size_t c = 0; c < n_clients; ++c) {
            for (std::size_t k = 0; k < counts[c]; ++k) assigned[c].push_back(members[next++]);
        }
    }

    // Repair undersized clients by moving one example at a time from the current largest client.
    for (std::size_t c = 0; c < n_clients; ++c) {
        while (assigned[c].size() < std::max<std::size_t>(min_client_size, 1)) {
            std::size_t largest = 0;
            for (std::size_t k = 1; k < n_clients; ++k) {
                if (assigned[k].size() > assigned[largest].size()) largest = k;
            }
            assigned[c].push_back(assigned[largest].back());
            assigned[largest].pop_back();
        }
    }

    std::vector<ClientDataset> clients;
    clients.reserve(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
        std::sort(assigned[c].begin(), assigned[c].end());
        clients.push_back(make_client(static_cast<int>(c), subset(ds, assigned[c])));
    }
    return clients;
}

std::string_view to_string(ShiftKind kind) {
    switch (kind) {
        case ShiftKind::none: return "none";
        case ShiftKind::rotation: return "rotation";
        case ShiftKind::label_map: return "concept";
    }
    return "none";
}

ShiftKind parse_shift_kind(std::string_view name) {
    if (name == "none") return ShiftKind::none;
    if (name == "rotation") return ShiftKind::rotation;
    if (name == "concept") return ShiftKind::label_map;
    throw ConfigError("unknown shift '" + std::string(name) + "' (expected none, rotation or concept)");
}

void TaskFamilyConfig::validate() const {
    if (n_clients == 0) throw ConfigError("n_clients must be positive");
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
    if (input_dim == 0) throw ConfigError("input_dim must be positive");
    if (samples_per_client < 2) throw ConfigError("samples_per_client must be at least 2");
    if (!(noise >= 0.0) || !(cluster_radius > 0.0)) throw ConfigError("noise must be >= 0 and cluster_radius > 0");
    if (shift == ShiftKind::rotation) {
        if (input_dim < 2) throw ConfigError("rotation shift needs input_dim >= 2");
        if (!(rotation_min_deg >= 0.0) || !(rotation_max_deg < 360.0) || rotation_min_deg > rotation_max_deg) {
            throw ConfigError("rotation range must satisfy 0 <= min <= max < 360 degrees");
        }
    }
    if (shift == ShiftKind::label_map) {
        if (groups == 0) throw ConfigError("concept shift needs at least one group");
        if (!label_permutations.empty()) {
            if (label_permutations.size() != groups) throw ConfigError("label_permutations must list one map per group");
            for (const auto& perm : label_permutations) {
                std::vector<int> sorted = perm;
                std::sort(sorted.begin(), sorted.end());
                for (std::size_t i = 0; i < sorted.size(); ++i) {
                    if (sorted.size() != n_classes || sorted[i] != static_cast<int>(i)) {
                        throw ConfigError("label_permutations entries must be permutations of 0..n_classes-1");
                    }
                }
            }
        }
    }
}

std::vector<std::vector<int>> concept_permutations(std::size_t groups, std::size_t n_classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> sigma(n_classes);
    std::iota(sigma.begin(), sigma.end(), 0);
    std::shuffle(sigma.begin(), sigma.end(), rng);
    std::vector<int> inverse(n_classes);
    for (std::size_t i = 0; i < n_classes; ++i) inverse[static_cast<std::size_t>(sigma[i])] = static_cast<int>(i);

    // Group g maps class c to sigma(sigma^-1(c) + s_g): rows of a Latin square.
    // Shifts 1..n-1 are shuffled so that group 0 alone keeps the identity.
    std::vector<std::size_t> shifts(n_classes - 1);
    std::iota(shifts.begin(), shifts.end(), std::size_t{1});
    std::shuffle(shifts.begin(), shifts.end(), rng);

    std::vector<std::vector<int>> perms;
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<int> perm(n_classes);
        if (g < n_classes) {
            const std::size_t s = g == 0 ? 0 : shifts[g - 1];
            for (std::size_t c = 0; c < n_classes; ++c) {
                perm[c] = sigma[(static_cast<std::size_t>(inverse[c]) + s) % n_classes];
            }
        } else {
            // More groups than classes: collisions are unavoidable, fall back to random maps.
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
        }
        perms.push_back(std::move(perm));
    }
    return perms;
}

std::vector<ClientDataset> make_task_family(const TaskFamilyConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.input_dim, n = cfg.n_classes;

    // Class means: orthonormalised Gaussian directions (when n <= d) scaled to the radius.
    Rng mean_rng(derive_seed(cfg.seed, 0));
    std::normal_distribution<double> std_normal(0.0, 1.0);
    std::vector<std::vector<double>> means(n, std::vector<double>(d));
    for (std::size_t c = 0; c < n; ++c) {
        auto& m = means[c];
        for (auto& v : m) v = std_normal(mean_rng);
        if (n <= d) {
            for (std::size_t p = 0; p < c; ++p) {
                double dot = 0.0;
                for (std::size_t k = 0; k < d; ++k) dot += m[k] * means[p][k];
                for (std::size_t k = 0; k < d; ++k) m[k] -= dot * means[p][k];
            }
        }
        double norm = 0.0;
        for (double v : m) norm += v * v;
        norm = std::sqrt(norm);
        for (auto& v : m) v /= norm;
    }
    for (auto& m : means) {
        for (auto& v : m) v *= cfg.cluster_radius;
    }

    std::vector<std::vector<int>> perms;
    if (cfg.shift == ShiftKind::label_map) {
        perms = cfg.label_permutations.empty() ? concept_permutations(cfg.groups, n, derive_seed(cfg.seed, 1))
                                               : cfg.label_permutations;
    }

    std::vector<ClientDataset> clients;
    clients.reserve(cfg.n_clients);
    for (std::size_t i = 0; i < cfg.n_clients; ++i) {
        Rng rng(derive_seed(cfg.seed, 1000 + i));
        double angle_deg = 0.0;
        if (cfg.shift == ShiftKind::rotation) {
            angle_deg = std::uniform_real_distribution<double>(cfg.rotation_min_deg, cfg.rotation_max_deg)(rng);
        }
        const double theta = angle_deg * std::numbers::pi / 180.0;
        const double cs = std::cos(theta), sn = std::sin(theta);
        const std::size_t group = cfg.shift == ShiftKind::label_map ? i % cfg.groups : 0;

        std::vector<int> classes(cfg.samples_per_client);
        for (std::size_t k = 0; k < classes.size(); ++k) classes[k] = static_cast<int>(k % n);
        std::shuffle(classes.begin(), classes.end(), rng);

        LabeledDataset ds;
        ds.dim = d;
        ds.n_classes = n;
        std::vector<double> x(d);
        for (int cls : classes) {
            const auto& mean = means[static_cast<std::size_t>(cls)];
            for (std::size_t k = 0; k < d; ++k) x[k] = mean[k] + cfg.noise * std_normal(rng);
            if (cfg.shift == ShiftKind::rotation) {
                const double x0 = x[0], x1 = x[1];
                x[0] = cs * x0 - sn * x1;
                x[1] = sn * x0 + cs * x1;
            }
            const int label = cfg.shift == ShiftKind::label_map ? perms[group][static_cast<std::size_t>(cls)] : cls;
            ds.push_back(x, label);
        }
        ClientDataset cd = make_client(static_cast<int>(i), std::move(ds));
        cd.group = static_cast<int>(group);
        cd.rotation_deg = angle_deg;
        clients.push_back(std::move(cd));
    }
    return clients;
}

ClientDataset split_pers_eval(const ClientDataset& cd, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("pers fraction must lie in (0, 1)");
    const std::size_t n = cd.data.size();
    if (n < 2) throw std::invalid_argument("client " + std::to_string(cd.client_id) + " has fewer than 2 examples");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_pers = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    n_pers = std::clamp<std::size_t>(n_pers, 1, n - 1);

    ClientDataset out = cd;
    out.pers.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_pers));
    out.eval.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_pers), idx.end());
    return out;
}

std::vector<std::vector<std::size_t>> class_counts(std::span<const ClientDataset> clients, std::size_t n_classes) {
    std::vector<std::vector<std::size_t>> counts;
    counts.reserve(clients.size());
    for (const auto& c : clients) {
        std::vector<std::size_t> h(n_classes);
        for (int y : c.data.labels) h.at(static_cast<std::size_t>(y))++;
        counts.push_back(std::move(h));
    }
    return counts;
}

double label_heterogeneity(std::span<const ClientDataset> clients, std::size_t n_classes) {
    if (clients.empty()) throw std::invalid_argument("label_heterogeneity of no clients");
    const auto counts = class_counts(clients, n_classes);
    std::vector<double> pooled(n_classes);
    double total = 0.0;
    for (const auto& h : counts) {
        for (std::size_t k = 0; k < n_classes; ++k) pooled[k] += static_cast<double>(h[k]);
    }
    for (double v : pooled) total += v;
    for (auto& v : pooled) v /= total;

    double mean_tv = 0.0;
    for (const auto& h : counts) {
        double n = 0.0;
        for (auto v : h) n += static_cast<double>(v);
        double tv = 0.0;
        for (std::size_t k = 0; k < n_classes; ++k) tv += std::abs(static_cast<double>(h[k]) / n - pooled[k]);
        mean_tv += 0.5 * tv;
    }
    return mean_tv / static_cast<double>(counts.size());
}

void write_partition_stats(std::ostream& os, std::span<const ClientDataset> clients, std::size_t n_classes) {
    const auto counts = class_counts(clients, n_classes);
    os << "client_id,class,count\n";
    for (std::size_t i = 0; i < clients.size(); ++i) {
        for (std::size_t k = 0; k < n_classes; ++k) {
            os << clients[i].client_id << ',' << k << ',' << counts[i][k] << '\n';
        }
    }
}

}  // namespace cafeme
