#pragma once

#include "cafeme/networks.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

namespace cafeme {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Row-major feature matrix with one class index per row.
struct LabeledDataset {
    std::size_t dim = 0;
    std::size_t n_classes = 0;
    std::vector<double> features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
    void push_back(std::span<const double> x, int y);
    /// Throws unless nonempty, rectangular and every label is in range.
    void validate() const;
    Batch gather(std::span<const std::size_t> indices) const;
    Batch all() const;
};

struct ClientDataset {
    int client_id = 0;
    LabeledDataset data;
    std::vector<std::size_t> pers;
    std::vector<std::size_t> eval;
    /// Concept-shift group, or 0.
    int group = 0;
    /// Covariate-shift rotation in degrees, or 0.
    double rotation_deg = 0.0;

    Batch pers_batch() const { return data.gather(pers); }
    Batch eval_batch() const { return data.gather(eval); }
};

/// Wraps a dataset as a client whose pers split holds every index.
ClientDataset make_client(int client_id, LabeledDataset data);

std::vector<ClientDataset> shards_partition(const LabeledDataset& ds, std::size_t n_clients,
                                            std::size_t shards_per_client, std::uint64_t seed);

/// Clients smaller than `min_client_size` are topped up one example at a
/// time from the current largest client.
std::vector<ClientDataset> dirichlet_partition(const LabeledDataset& ds, std::size_t n_clients, double concentration,
                                               std::uint64_t seed, std::size_t min_client_size = 1);

enum class ShiftKind { none, rotation, label_map };

std::string_view to_string(ShiftKind kind);
ShiftKind parse_shift_kind(std::string_view name);

struct TaskFamilyConfig {
    std::size_t n_clients = 25;
    std::size_t n_classes = 5;
    std::size_t input_dim = 8;
    std::size_t samples_per_client = 60;
    ShiftKind shift = ShiftKind::none;
    /// Rotation angles, in degrees, are drawn uniformly from [min, max].
    double rotation_min_deg = 0.0;
    double rotation_max_deg = 200.0;
    /// Concept-shift groups; clients are assigned round-robin.
    std::size_t groups = 1;
    /// Optional explicit label maps, one per group (group 0 first).
    std::vector<std::vector<int>> label_permutations;
    /// Distance of every class mean from the origin.
    double cluster_radius = 3.0;
    /// Per-coordinate standard deviation around the class mean.
    double noise = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TaskFamilyConfig&) const = default;
};

/// Synthetic Gaussian-cluster clients with the configured shift.
std::vector<ClientDataset> make_task_family(const TaskFamilyConfig& cfg);

/// Label maps used for concept shift: group 0 is the identity and, when
/// groups <= n_classes, no two groups agree on the label of any class.
std::vector<std::vector<int>> concept_permutations(std::size_t groups, std::size_t n_classes, std::uint64_t seed);

/// Seeded shuffle; the first ceil(fraction * n) indices go to pers, the rest to eval.
ClientDataset split_pers_eval(const ClientDataset& cd, double fraction, std::uint64_t seed);

/// Per-client class histogram, [client][class].
std::vector<std::vector<std::size_t>> class_counts(std::span<const ClientDataset> clients, std::size_t n_classes);

/// Mean total-variation distance between each client's label distribution and the pooled one.
double label_heterogeneity(std::span<const ClientDataset> clients, std::size_t n_classes);

/// Writes `client_id,class,count` rows.
void write_partition_stats(std::ostream& os, std::span<const ClientDataset> clients, std::size_t n_classes);

/// Big-endian IDX image (0x00000803) and label (0x00000801) files; pixels scaled to [0, 1].
LabeledDataset idx_load(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

}  // namespace cafeme
