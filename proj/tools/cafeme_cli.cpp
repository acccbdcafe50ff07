#include "cafeme/bench.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

constexpr const char* kOutputEnv = "CAFEME_OUTPUT_DIR";

void print_summary(const std::vector<cafeme::SummaryRow>& rows) {
    cafeme::write_summary_csv(std::cout, rows);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Personalized federated learning lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<std::size_t> repeats;
    std::string out_dir;
    auto* run = app.add_subcommand("run", "Train and evaluate one method over seeded repeats");
    run->add_option("--config", config_path, "INI experiment config")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Master seed (overrides [experiment] seed)");
    run->add_option("--method", method, "cafeme, fedavg, fedavg_ft or perfedavg");
    run->add_option("--repeats", repeats, "Number of repeats (overrides [experiment] repeats)");
    run->add_option("--out", out_dir, std::string("Output directory (overrides ") + kOutputEnv + " and the config)");

    std::string in_dir;
    std::string summary_out;
    auto* summarize = app.add_subcommand("summarize", "Aggregate <method>_run<r>.csv files into mean and std");
    summarize->add_option("--in", in_dir, "Directory holding run CSVs")->required()->check(CLI::ExistingDirectory);
    summarize->add_option("--summary", summary_out, "Also write the summary CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto cfg = cafeme::parse_config(config_path);
            if (seed) cfg.seed = *seed;
            if (method) cfg.method = cafeme::parse_method(*method);
            if (repeats) cfg.n_repeats = *repeats;
            if (!out_dir.empty()) {
                cfg.output_dir = out_dir;
            } else if (const char* env = std::getenv(kOutputEnv); env && *env) {
                cfg.output_dir = env;
            }
            cfg.validate();
            const auto start = std::chrono::steady_clock::now();
            const auto result = cafeme::run_experiment(cfg);
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
            print_summary(result.summary);
            std::cerr << "wrote " << result.run_csvs.size() << " run CSVs and " << result.summary_csv.string() << " in "
                      << elapsed.count() << " s\n";
        } else if (*summarize) {
            const auto rows = cafeme::summarize_dir(in_dir);
            print_summary(rows);
            if (!summary_out.empty()) {
                std::ofstream os(summary_out, std::ios::binary);
                if (!os) throw std::runtime_error("cannot write " + summary_out);
                cafeme::write_summary_csv(os, rows);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
