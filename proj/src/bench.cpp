#include "cafeme/bench.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <sstream>

namespace cafeme {

std::string_view to_string(Method method) {
    switch (method) {
        case Method::cafeme: return "cafeme";
        case Method::fedavg: return "fedavg";
        case Method::fedavg_ft: return "fedavg_ft";
        case Method::perfedavg: return "perfedavg";
    }
    return "cafeme";
}

Method parse_method(std::string_view name) {
    if (name == "cafeme") return Method::cafeme;
    if (name == "fedavg") return Method::fedavg;
    if (name == "fedavg_ft") return Method::fedavg_ft;
    if (name == "perfedavg") return Method::perfedavg;
    throw ConfigError("unknown method '" + std::string(name) + "' (expected cafeme, fedavg, fedavg_ft or perfedavg)");
}

std::string_view to_string(DataSource source) {
    return source == DataSource::idx ? "idx" : "synthetic";
}

std::string_view to_string(PartitionScheme scheme) {
    switch (scheme) {
        case PartitionScheme::family: return "family";
        case PartitionScheme::shards: return "shards";
        case PartitionScheme::dirichlet: return "dirichlet";
    }
    return "family";
}

namespace {

DataSource parse_source(std::string_view s) {
    if (s == "synthetic") return DataSource::synthetic;
    if (s == "idx") return DataSource::idx;
    throw ConfigError("unknown data source '" + std::string(s) + "' (expected synthetic or idx)");
}

PartitionScheme parse_scheme(std::string_view s) {
    if (s == "family") return PartitionScheme::family;
    if (s == "shards") return PartitionScheme::shards;
    if (s == "dirichlet") return PartitionScheme::dirichlet;
    throw ConfigError("unknown partition '" + std::string(s) + "' (expected family, shards or dirichlet)");
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
    return value;
}

std::vector<std::size_t> parse_dims(const std::string& key, const std::string& text) {
    std::vector<std::size_t> dims;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        dims.push_back(parse_number<std::size_t>(key, item));
    }
    return dims;
}

std::string dims_str(const std::vector<std::size_t>& dims) {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(dims[i]);
    }
    return s;
}

struct KeySpec {
    const char* section;
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define CAFEME_SIZE_KEY(section, key, field)                                                                  \
    KeySpec {                                                                                                   \
        section, key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_number<std::size_t>(key, v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.field); }                                   \
    }
#define CAFEME_DOUBLE_KEY(section, key, field)                                                                \
    KeySpec {                                                                                                   \
        section, key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_number<double>(key, v); }, \
            [](const ExperimentConfig& c) { return format_double(c.field); }                                    \
    }
#define CAFEME_DIMS_KEY(section, key, field)                                                                  \
    KeySpec {                                                                                                   \
        section, key, [](ExperimentConfig& c, const std::string& v) { c.field = parse_dims(key, v); },          \
            [](const ExperimentConfig& c) { return dims_str(c.field); }                                         \
    }
#define CAFEME_STRING_KEY(section, key, field)                                                                \
    KeySpec {                                                                                                   \
        section, key, [](ExperimentConfig& c, const std::string& v) { c.field = v; },                           \
            [](const ExperimentConfig& c) { return c.field; }                                                   \
    }

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = {
        {"experiment", "method", [](ExperimentConfig& c, const std::string& v) { c.method = parse_method(v); },
         [](const ExperimentConfig& c) { return std::string(to_string(c.method)); }},
        CAFEME_SIZE_KEY("experiment", "repeats", n_repeats),
        {"experiment", "seed",
         [](ExperimentConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        CAFEME_STRING_KEY("experiment", "output_dir", output_dir),

        {"data", "source", [](ExperimentConfig& c, const std::string& v) { c.data.source = parse_source(v); },
         [](const ExperimentConfig& c) { return std::string(to_string(c.data.source)); }},
        {"data", "partition", [](ExperimentConfig& c, const std::string& v) { c.data.partition = parse_scheme(v); },
         [](const ExperimentConfig& c) { return std::string(to_string(c.data.partition)); }},
        {"data", "shift", [](ExperimentConfig& c, const std::string& v) { c.data.family.shift = parse_shift_kind(v); },
         [](const ExperimentConfig& c) { return std::string(to_string(c.data.family.shift)); }},
        CAFEME_SIZE_KEY("data", "train_clients", data.train_clients),
        CAFEME_SIZE_KEY("data", "test_clients", data.test_clients),
        {"data", "input_dim",
         [](ExperimentConfig& c, const std::string& v) {
             c.arch.input_dim = c.data.family.input_dim = parse_number<std::size_t>("input_dim", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.arch.input_dim); }},
        {"data", "n_classes",
         [](ExperimentConfig& c, const std::string& v) {
             c.arch.n_classes = c.data.family.n_classes = parse_number<std::size_t>("n_classes", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.arch.n_classes); }},
        CAFEME_SIZE_KEY("data", "samples_per_client", data.family.samples_per_client),
        CAFEME_DOUBLE_KEY("data", "rotation_min", data.family.rotation_min_deg),
        CAFEME_DOUBLE_KEY("data", "rotation_max", data.family.rotation_max_deg),
        CAFEME_SIZE_KEY("data", "groups", data.family.groups),
        CAFEME_DOUBLE_KEY("data", "cluster_radius", data.family.cluster_radius),
        CAFEME_DOUBLE_KEY("data", "noise", data.family.noise),
        CAFEME_DOUBLE_KEY("data", "pers_fraction", data.pers_fraction),
        CAFEME_SIZE_KEY("data", "shards_per_client", data.shards_per_client),
        CAFEME_DOUBLE_KEY("data", "concentration", data.concentration),
        CAFEME_STRING_KEY("data", "idx_images", data.idx_images),
        CAFEME_STRING_KEY("data", "idx_labels", data.idx_labels),

        CAFEME_DIMS_KEY("model", "hidden_widths", arch.hidden_widths),
        CAFEME_DIMS_KEY("model", "modulator_feature_dims", arch.modulator_feature_dims),
        CAFEME_DIMS_KEY("model", "modulator_embed_dims", arch.modulator_embed_dims),
        CAFEME_DIMS_KEY("model", "modulator_head_dims", arch.modulator_head_dims),
        {"model", "modulation_mode",
         [](ExperimentConfig& c, const std::string& v) { c.arch.modulation_mode = parse_modulation_mode(v); },
         [](const ExperimentConfig& c) { return std::string(to_string(c.arch.modulation_mode)); }},

        CAFEME_SIZE_KEY("federation", "rounds", rounds.rounds),
        CAFEME_SIZE_KEY("federation", "clients_per_round", rounds.clients_per_round),
        CAFEME_SIZE_KEY("federation", "personalization_steps", rounds.personalization_steps),
        CAFEME_DOUBLE_KEY("federation", "inner_lr", rounds.inner_lr),
        CAFEME_DOUBLE_KEY("federation", "outer_lr", rounds.outer_lr),
        CAFEME_SIZE_KEY("federation", "batch_size", rounds.batch_size),
        CAFEME_SIZE_KEY("federation", "local_steps", local_steps),
        CAFEME_SIZE_KEY("federation", "test_steps", test_steps),
    };
    return specs;
}

#undef CAFEME_SIZE_KEY
#undef CAFEME_DOUBLE_KEY
#undef CAFEME_DIMS_KEY
#undef CAFEME_STRING_KEY

}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.data.family.input_dim = c.arch.input_dim = 8;
    c.data.family.n_classes = c.arch.n_classes = 5;
    c.arch.hidden_widths = {32, 32};
    c.arch.modulator_feature_dims = {32};
    c.arch.modulator_embed_dims = {32};
    c.arch.modulator_head_dims = {32};
    return c;
}

void ExperimentConfig::validate() const {
    if (n_repeats < 1) throw ConfigError("repeats must be >= 1");
    if (data.train_clients < 1) throw ConfigError("train_clients must be >= 1");
    if (data.test_clients < 1) throw ConfigError("test_clients must be >= 1");
    if (!(data.pers_fraction > 0.0 && data.pers_fraction < 1.0)) throw ConfigError("pers_fraction must lie in (0, 1)");
    if (!(data.concentration > 0.0)) throw ConfigError("concentration must be positive");
    if (data.shards_per_client < 1) throw ConfigError("shards_per_client must be >= 1");
    if (data.source == DataSource::idx && (data.idx_images.empty() || data.idx_labels.empty())) {
        throw ConfigError("source = idx needs idx_images and idx_labels");
    }
    if (data.source == DataSource::idx && data.partition == PartitionScheme::family) {
        throw ConfigError("source = idx needs partition = shards or dirichlet");
    }
    if (data.source == DataSource::synthetic && data.partition == PartitionScheme::shards &&
        data.family.samples_per_client % data.shards_per_client != 0) {
        throw ConfigError("samples_per_client must be a multiple of shards_per_client");
    }
    TaskFamilyConfig fam = data.family;
    fam.n_clients = data.train_clients + data.test_clients;
    fam.validate();
    arch.validate();
    if (arch.input_dim != data.family.input_dim || arch.n_classes != data.family.n_classes) {
        throw ConfigError("model and data disagree on input_dim / n_classes");
    }
    rounds.validate(data.train_clients);
}

ExperimentConfig parse_config_text(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax error: ") + e.what());
    }

    ExperimentConfig cfg = default_config();
    bool has_method = false;
    const auto& specs = key_specs();
    for (const auto& [section, entries] : tree) {
        if (entries.empty()) {
            throw ConfigError("key '" + section + "' must appear inside a [section]");
        }
        for (const auto& [key, value] : entries) {
            auto it = std::find_if(specs.begin(), specs.end(),
                                   [&](const KeySpec& s) { return s.section == section && s.key == key; });
            if (it == specs.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
            it->set(cfg, value.data());
            if (key == "method") has_method = true;
        }
    }
    if (!has_method) throw ConfigError("missing required key 'method' in [experiment]");
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    std::string current;
    for (const auto& spec : key_specs()) {
        if (spec.section != current) {
            if (!current.empty()) os << '\n';
            current = spec.section;
            os << '[' << current << "]\n";
        }
        os << spec.key << " = " << spec.get(cfg) << '\n';
    }
    return os.str();
}

ExperimentData build_clients(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t total = cfg.data.train_clients + cfg.data.test_clients;
    TaskFamilyConfig fam = cfg.data.family;
    fam.n_clients = total;
    fam.seed = derive_seed(seed, 1);

    std::vector<ClientDataset> clients;
    if (cfg.data.partition == PartitionScheme::family) {
        clients = make_task_family(fam);
    } else {
        LabeledDataset pooled;
        if (cfg.data.source == DataSource::idx) {
            pooled = idx_load(cfg.data.idx_images, cfg.data.idx_labels);
            if (pooled.dim != cfg.arch.input_dim || pooled.n_classes > cfg.arch.n_classes) {
                throw ConfigError("IDX data has " + std::to_string(pooled.dim) + " features and " +
                                  std::to_string(pooled.n_classes) + " classes; set input_dim and n_classes to match");
            }
            pooled.n_classes = cfg.arch.n_classes;
        } else {
            for (const auto& c : make_task_family(fam)) {
                for (std::size_t i = 0; i < c.data.size(); ++i) pooled.push_back(c.data.row(i), c.data.labels[i]);
            }
            pooled.n_classes = fam.n_classes;
        }
        if (cfg.data.partition == PartitionScheme::shards) {
            // Drop the tail so the pool cuts into whole shards.
            const std::size_t n_shards = total * cfg.data.shards_per_client;
            const std::size_t keep = pooled.size() / n_shards * n_shards;
            pooled.labels.resize(keep);
            pooled.features.resize(keep * pooled.dim);
            clients = shards_partition(pooled, total, cfg.data.shards_per_client, derive_seed(seed, 2));
        } else {
            clients = dirichlet_partition(pooled, total, cfg.data.concentration, derive_seed(seed, 2), 2);
        }
    }

    ExperimentData data;
    const std::uint64_t split_seed = derive_seed(seed, 3);
    for (std::size_t i = 0; i < clients.size(); ++i) {
        auto split = split_pers_eval(clients[i], cfg.data.pers_fraction,
                                     derive_seed(split_seed, static_cast<std::uint64_t>(clients[i].client_id)));
        (i < cfg.data.train_clients ? data.train : data.test).push_back(std::move(split));
    }
    return data;
}

TrainedModel train_method(const ExperimentConfig& cfg, const ExperimentData& data, std::uint64_t seed) {
    TrainedModel out;
    out.method = cfg.method;
    RoundConfig rounds = cfg.rounds;
    rounds.seed = derive_seed(seed, 2);
    // Every method starts from the same base-network initialization.
    const GlobalModel init = init_global(cfg.arch, derive_seed(seed, 1));
    switch (cfg.method) {
        case Method::cafeme: {
            auto r = run_federation(init, cfg.arch, data.train, rounds);
            out.global = std::move(r.model);
            out.log = std::move(r.log);
            break;
        }
        case Method::fedavg:
        case Method::fedavg_ft: {
            auto r = run_fedavg(init.psi, data.train, rounds, cfg.local_steps);
            out.baseline = std::move(r.model);
            out.log = std::move(r.log);
            break;
        }
        case Method::perfedavg: {
            auto r = run_perfedavg(init.psi, data.train, rounds);
            out.baseline = std::move(r.model);
            out.log = std::move(r.log);
            break;
        }
    }
    return out;
}

EvalResult evaluate_client(const ExperimentConfig& cfg, const TrainedModel& model, const ClientDataset& client,
                           std::size_t k_steps, std::uint64_t seed) {
    switch (model.method) {
        case Method::cafeme:
            return evaluate_personalized(model.global, cfg.arch, client, k_steps, cfg.rounds.inner_lr,
                                         cfg.rounds.batch_size, seed);
        case Method::fedavg:
            return evaluate_plain(model.baseline, client.eval_batch());
        case Method::fedavg_ft:
        case Method::perfedavg:
            return fedavg_ft_evaluate(model.baseline, client, k_steps, cfg.rounds.inner_lr, cfg.rounds.batch_size, seed);
    }
    throw std::logic_error("unhandled method");
}

std::uint64_t repeat_seed(std::uint64_t master_seed, std::size_t repeat) {
    return derive_seed(master_seed, repeat);
}

RunResult run_single(const ExperimentConfig& cfg, std::size_t repeat) {
    const std::uint64_t seed = repeat_seed(cfg.seed, repeat);
    const auto data = build_clients(cfg, derive_seed(seed, 1));
    auto model = train_method(cfg, data, derive_seed(seed, 2));

    RunResult run;
    run.log = std::move(model.log);
    const std::uint64_t test_seed = derive_seed(seed, 3);
    double loss = 0.0, acc = 0.0;
    for (const auto& client : data.test) {
        const auto r = evaluate_client(cfg, model, client, cfg.test_steps,
                                       derive_seed(test_seed, static_cast<std::uint64_t>(client.client_id)));
        run.log.add(cfg.rounds.rounds, client.client_id, Phase::test, r.loss, r.accuracy);
        loss += r.loss;
        acc += r.accuracy;
    }
    run.test_loss = loss / static_cast<double>(data.test.size());
    run.test_accuracy = acc / static_cast<double>(data.test.size());
    return run;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("mean_std of no values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::filesystem::path dir = cfg.output_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());

    ExperimentOutput out;
    const std::string method(to_string(cfg.method));
    for (std::size_t r = 1; r <= cfg.n_repeats; ++r) {
        const auto run = run_single(cfg, r);
        const auto path = dir / (method + "_run" + std::to_string(r) + ".csv");
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + path.string());
        run.log.write_csv(os);
        if (!os) throw std::runtime_error("write failed for " + path.string());
        out.run_csvs.push_back(path);
    }
    out.summary = summarize(out.run_csvs);
    out.summary_csv = dir / (method + "_summary.csv");
    std::ofstream os(out.summary_csv, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + out.summary_csv.string());
    write_summary_csv(os, out.summary);
    return out;
}

std::vector<SummaryRow> summarize(std::span<const std::filesystem::path> csv_paths) {
    if (csv_paths.empty()) throw std::invalid_argument("summarize needs at least one run CSV");
    static const std::regex name_re(R"((.+)_run(\d+))");

    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_method;
    for (const auto& path : csv_paths) {
        std::smatch m;
        const std::string stem = path.stem().string();
        if (!std::regex_match(stem, m, name_re)) {
            throw SchemaError("run CSV name " + path.filename().string() + " does not match <method>_run<r>.csv");
        }
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read " + path.string());
        MetricsLog log;
        try {
            log = MetricsLog::read_csv(in);
        } catch (const SchemaError& e) {
            throw SchemaError(path.string() + ": " + e.what());
        }
        const bool has_test = std::any_of(log.records().begin(), log.records().end(),
                                          [](const MetricRecord& r) { return r.phase == Phase::test; });
        if (!has_test) throw SchemaError(path.string() + ": no test records");
        const auto [loss, acc] = log.mean(Phase::test);
        auto& [accs, losses] = per_method[m[1].str()];
        accs.push_back(acc);
        losses.push_back(loss);
    }

    std::vector<SummaryRow> rows;
    for (const auto& [method, values] : per_method) {
        const auto acc = mean_std(values.first);
        const auto loss = mean_std(values.second);
        rows.push_back({method, "test_accuracy", acc.mean, acc.std, values.first.size()});
        rows.push_back({method, "test_loss", loss.mean, loss.std, values.second.size()});
    }
    return rows;
}

std::vector<SummaryRow> summarize_dir(const std::filesystem::path& dir) {
    static const std::regex run_re(R"((.+)_run(\d+)\.csv)");
    std::vector<std::tuple<std::string, int, std::filesystem::path>> found;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && std::regex_match(name, m, run_re)) {
            found.emplace_back(m[1].str(), std::stoi(m[2].str()), entry.path());
        }
    }
    if (ec) throw std::runtime_error("cannot list " + dir.string() + ": " + ec.message());
    std::sort(found.begin(), found.end());
    std::vector<std::filesystem::path> paths;
    for (const auto& f : found) paths.push_back(std::get<2>(f));
    return summarize(paths);
}

void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows) {
    os << "method,metric,mean,std,n_runs\n";
    for (const auto& r : rows) {
        os << r.method << ',' << r.metric << ',' << format_double(r.mean) << ',' << format_double(r.std) << ','
           << r.n_runs << '\n';
    }
}

}  // namespace cafeme
