#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cafeme/bench.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace cafeme;
namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::path(CAFEME_TEST_DATA_DIR) / "bench";

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

/// Seconds-scale experiment on a small concept-shift family.
ExperimentConfig tiny_config(Method method, const std::string& out) {
    ExperimentConfig cfg = default_config();
    cfg.method = method;
    cfg.n_repeats = 2;
    cfg.seed = 3;
    cfg.output_dir = (kScratch / out).string();
    cfg.data.train_clients = 6;
    cfg.data.test_clients = 2;
    cfg.data.family.shift = ShiftKind::label_map;
    cfg.data.family.groups = 2;
    cfg.data.family.n_classes = cfg.arch.n_classes = 3;
    cfg.data.family.input_dim = cfg.arch.input_dim = 4;
    cfg.data.family.samples_per_client = 30;
    cfg.arch.hidden_widths = {8};
    cfg.arch.modulator_feature_dims = cfg.arch.modulator_embed_dims = cfg.arch.modulator_head_dims = {4};
    cfg.rounds.rounds = 4;
    cfg.rounds.clients_per_round = 3;
    cfg.rounds.personalization_steps = 2;
    cfg.rounds.batch_size = 8;
    cfg.local_steps = 2;
    cfg.test_steps = 3;
    return cfg;
}

const char* kMinimal = "[experiment]\nmethod = fedavg\n";

}  // namespace

TEST_CASE("method names round-trip") {
    for (Method m : {Method::cafeme, Method::fedavg, Method::fedavg_ft, Method::perfedavg}) {
        CHECK(parse_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_method("sgd"), ConfigError);
}

TEST_CASE("configuration parsing") {
    SUBCASE("defaults fill every optional key") {
        const auto cfg = parse_config_text(kMinimal);
        ExperimentConfig expected = default_config();
        expected.method = Method::fedavg;
        CHECK(cfg == expected);
    }
    SUBCASE("serialize and parse round-trip") {
        ExperimentConfig cfg = tiny_config(Method::perfedavg, "rt");
        cfg.arch.modulation_mode = ModulationMode::affine;
        cfg.rounds.inner_lr = 0.1 + 0.2;  // not exactly representable in short decimal
        cfg.data.concentration = 1.0 / 3.0;
        cfg.data.partition = PartitionScheme::dirichlet;
        CHECK(parse_config_text(serialize_config(cfg)) == cfg);
        CHECK(serialize_config(parse_config_text(serialize_config(cfg))) == serialize_config(cfg));
    }
    SUBCASE("data dimensions set both the family and the model") {
        const auto cfg = parse_config_text(std::string(kMinimal) + "[data]\ninput_dim = 6\nn_classes = 7\n");
        CHECK(cfg.arch.input_dim == 6);
        CHECK(cfg.data.family.input_dim == 6);
        CHECK(cfg.arch.n_classes == 7);
        CHECK(cfg.data.family.n_classes == 7);
    }
    SUBCASE("missing method names the key") {
        try {
            (void)parse_config_text("[experiment]\nrepeats = 2\n");
            FAIL("expected a configuration error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("method") != std::string::npos);
        }
    }
    SUBCASE("invalid values and unknown keys") {
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[federation]\nclients_per_round = 0\n"), ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[federation]\nclients_per_round = 30\n"),
                        ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[federation]\nlearning_rate = 0.1\n"), ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[optimizer]\ninner_lr = 0.1\n"), ConfigError);
        CHECK_THROWS_AS(parse_config_text("seed = 3\n" + std::string(kMinimal)), ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[federation]\nrounds = many\n"), ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[federation]\ninner_lr = -1\n"), ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[data]\npers_fraction = 1\n"), ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[data]\nsource = idx\npartition = shards\n"),
                        ConfigError);
        CHECK_THROWS_AS(parse_config_text(std::string(kMinimal) + "[model]\nmodulation_mode = film\n"), ConfigError);
        CHECK_THROWS_AS(parse_config(kScratch / "does_not_exist.ini"), ConfigError);
    }
    SUBCASE("shipped configs parse") {
        for (const char* name : {"concept_shift.ini", "affine.ini", "smoke.ini"}) {
            CAPTURE(name);
            CHECK_NOTHROW(parse_config(fs::path(CAFEME_CONFIG_DIR) / name));
        }
    }
}

TEST_CASE("client construction") {
    ExperimentConfig cfg = tiny_config(Method::cafeme, "clients");
    const auto data = build_clients(cfg, 5);
    CHECK(data.train.size() == 6);
    CHECK(data.test.size() == 2);
    for (const auto& c : data.train) {
        CHECK(!c.pers.empty());
        CHECK(!c.eval.empty());
    }
    const auto again = build_clients(cfg, 5);
    CHECK(again.test[1].data.features == data.test[1].data.features);
    CHECK(again.test[1].pers == data.test[1].pers);

    cfg.data.partition = PartitionScheme::shards;
    cfg.data.shards_per_client = 2;
    const auto shards = build_clients(cfg, 5);
    CHECK(shards.train.size() + shards.test.size() == 8);

    cfg.data.partition = PartitionScheme::dirichlet;
    const auto dir = build_clients(cfg, 5);
    for (const auto& c : dir.train) CHECK(c.data.size() >= 2);
}

TEST_CASE("mean and population std") {
    const std::vector<double> a = {0.90, 0.92, 0.94};
    const auto ms = mean_std(a);
    CHECK(ms.mean == doctest::Approx(0.92).epsilon(1e-14));
    CHECK(ms.std == doctest::Approx(std::sqrt(0.0008 / 3.0)).epsilon(1e-12));
    CHECK(ms.std == doctest::Approx(0.01633).epsilon(1e-3));

    const std::vector<double> b = {1.0, 2.0, 3.0};
    CHECK(mean_std(b).std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
    const std::vector<double> one = {0.7};
    CHECK(mean_std(one).std == 0.0);
    CHECK_THROWS_AS(mean_std(std::vector<double>{}), std::invalid_argument);

    // Welford's single-pass recurrence as an independent oracle.
    std::vector<double> v;
    for (int i = 0; i < 50; ++i) v.push_back(0.5 + 0.3 * std::sin(0.37 * i));
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double delta = v[i] - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (v[i] - mean);
    }
    const auto got = mean_std(v);
    CHECK(std::abs(got.mean - mean) < 1e-12);
    CHECK(std::abs(got.std - std::sqrt(m2 / static_cast<double>(v.size()))) < 1e-12);
}

TEST_CASE("experiments write reproducible CSVs") {
    for (Method m : {Method::cafeme, Method::fedavg, Method::fedavg_ft, Method::perfedavg}) {
        CAPTURE(to_string(m));
        const auto a = run_experiment(tiny_config(m, "det_a"));
        const auto b = run_experiment(tiny_config(m, "det_b"));
        REQUIRE(a.run_csvs.size() == 2);
        for (std::size_t i = 0; i < a.run_csvs.size(); ++i) {
            CHECK(a.run_csvs[i].filename() == std::string(to_string(m)) + "_run" + std::to_string(i + 1) + ".csv");
            CHECK(slurp(a.run_csvs[i]) == slurp(b.run_csvs[i]));
        }
        CHECK(slurp(a.summary_csv) == slurp(b.summary_csv));
        CHECK(slurp(a.run_csvs[0]) != slurp(a.run_csvs[1]));
    }
}

TEST_CASE("repeat seeds do not depend on the repeat count") {
    ExperimentConfig three = tiny_config(Method::fedavg_ft, "rep3");
    three.n_repeats = 3;
    ExperimentConfig two = tiny_config(Method::fedavg_ft, "rep2");
    const auto a = run_experiment(three);
    const auto b = run_experiment(two);
    CHECK(slurp(a.run_csvs[0]) == slurp(b.run_csvs[0]));
    CHECK(slurp(a.run_csvs[1]) == slurp(b.run_csvs[1]));
    CHECK(repeat_seed(9, 1) != repeat_seed(9, 2));
}

TEST_CASE("zero rounds give chance accuracy") {
    ExperimentConfig cfg = tiny_config(Method::fedavg, "t0");
    cfg.rounds.rounds = 0;
    cfg.n_repeats = 5;
    cfg.data.test_clients = 4;
    cfg.data.family.samples_per_client = 200;
    const auto out = run_experiment(cfg);
    double acc = 0.0;
    for (const auto& row : out.summary) {
        if (row.metric == "test_accuracy") acc = row.mean;
    }
    CHECK(std::abs(acc - 1.0 / 3.0) < 0.12);
}

TEST_CASE("summaries") {
    const fs::path dir = kScratch / "summ";
    fs::remove_all(dir);
    const std::string header = "round,client_id,phase,loss,accuracy\n";
    write_file(dir / "cafeme_run1.csv", header + "3,0,eval,0.5,0.5\n3,7,test,0.4,0.9\n3,8,test,0.6,0.7\n");
    write_file(dir / "cafeme_run2.csv", header + "3,7,test,0.2,1\n3,8,test,0.2,1\n");
    write_file(dir / "fedavg_run1.csv", header + "3,7,test,1,0.25\n");
    write_file(dir / "notes.txt", "ignored");

    const auto rows = summarize_dir(dir);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].method == "cafeme");
    CHECK(rows[0].metric == "test_accuracy");
    CHECK(rows[0].mean == doctest::Approx(0.9));
    CHECK(rows[0].std == doctest::Approx(0.1));
    CHECK(rows[0].n_runs == 2);
    CHECK(rows[1].metric == "test_loss");
    CHECK(rows[1].mean == doctest::Approx(0.35));
    CHECK(rows[2].method == "fedavg");
    CHECK(rows[2].std == 0.0);
    CHECK(rows[2].n_runs == 1);

    std::ostringstream os;
    write_summary_csv(os, rows);
    CHECK(os.str().rfind("method,metric,mean,std,n_runs\n", 0) == 0);

    CHECK_THROWS_AS(summarize({}), std::invalid_argument);
    CHECK_THROWS(summarize_dir(kScratch / "empty_nonexistent"));

    write_file(dir / "bad" / "cafeme_run1.csv", "round,client,phase,loss,accuracy\n3,7,test,0.2,1\n");
    try {
        (void)summarize_dir(dir / "bad");
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("cafeme_run1.csv") != std::string::npos);
    }
    write_file(dir / "notest" / "cafeme_run1.csv", header + "3,0,eval,0.5,0.5\n");
    CHECK_THROWS(summarize_dir(dir / "notest"));
}
