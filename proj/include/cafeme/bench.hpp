#pragma once

#include "cafeme/baselines.hpp"
#include "cafeme/fedcore.hpp"
#include "cafeme/partition.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cafeme {

enum class Method { cafeme, fedavg, fedavg_ft, perfedavg };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

enum class DataSource { synthetic, idx };
enum class PartitionScheme { family, shards, dirichlet };

std::string_view to_string(DataSource source);
std::string_view to_string(PartitionScheme scheme);

struct DataConfig {
    DataSource source = DataSource::synthetic;
    /// `family` uses the task family's own per-client generation; `shards`
    /// and `dirichlet` partition one pooled dataset.
    PartitionScheme partition = PartitionScheme::family;
    TaskFamilyConfig family;  // family.n_clients is derived from train + test clients
    std::size_t train_clients = 20;
    std::size_t test_clients = 5;
    double pers_fraction = 0.5;
    std::size_t shards_per_client = 2;
    double concentration = 0.3;
    std::string idx_images;
    std::string idx_labels;

    bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
    Method method = Method::cafeme;
    std::size_t n_repeats = 5;
    std::uint64_t seed = 0;
    std::string output_dir = "results";
    DataConfig data;
    Architecture arch;
    RoundConfig rounds;
    /// FedAvg local SGD steps per round.
    std::size_t local_steps = 5;
    /// Personalization / fine-tuning steps for held-out clients.
    std::size_t test_steps = 50;

    /// Throws ConfigError naming the first invalid field.
    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Desk-scale defaults for every optional key.
ExperimentConfig default_config();

/// INI-style `key = value` under [experiment], [data], [model], [federation].
/// Unknown keys, unknown sections and a missing `method` are errors.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);
/// Canonical form listing every key; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

struct ExperimentData {
    std::vector<ClientDataset> train;
    std::vector<ClientDataset> test;
};

/// Clients with pers/eval splits; the last `test_clients` are held out.
ExperimentData build_clients(const ExperimentConfig& cfg, std::uint64_t seed);

struct TrainedModel {
    Method method = Method::cafeme;
    GlobalModel global;     // cafeme
    BaselineModel baseline;  // fedavg, fedavg_ft, perfedavg
    MetricsLog log;
};

TrainedModel train_method(const ExperimentConfig& cfg, const ExperimentData& data, std::uint64_t seed);

/// Test-time protocol of each method on a held-out client with k adaptation steps.
/// Plain FedAvg never adapts and ignores k.
EvalResult evaluate_client(const ExperimentConfig& cfg, const TrainedModel& model, const ClientDataset& client,
                           std::size_t k_steps, std::uint64_t seed);

/// Stable per-repeat seed; repeat r's seed does not depend on n_repeats.
std::uint64_t repeat_seed(std::uint64_t master_seed, std::size_t repeat);

struct RunResult {
    MetricsLog log;  // train/eval rounds plus test records at round T
    double test_loss = 0.0;
    double test_accuracy = 0.0;
};

/// Builds clients, trains and evaluates held-out clients for repeat `repeat` (1-based).
RunResult run_single(const ExperimentConfig& cfg, std::size_t repeat);

struct SummaryRow {
    std::string method;
    std::string metric;
    double mean = 0.0;
    double std = 0.0;  // population
    std::size_t n_runs = 0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Two-pass mean and population standard deviation.
MeanStd mean_std(std::span<const double> values);

struct ExperimentOutput {
    std::vector<std::filesystem::path> run_csvs;
    std::filesystem::path summary_csv;
    std::vector<SummaryRow> summary;
};

/// Writes <out>/<method>_run<r>.csv per repeat and <out>/<method>_summary.csv.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

/// Groups run CSVs named <method>_run<r>.csv by method and reports mean and
/// population std of the per-run test accuracy and loss.
std::vector<SummaryRow> summarize(std::span<const std::filesystem::path> csv_paths);
/// All *_run*.csv files in a directory.
std::vector<SummaryRow> summarize_dir(const std::filesystem::path& dir);

void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows);

}  // namespace cafeme
