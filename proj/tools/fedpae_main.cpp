#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedpae/common.hpp"
#include "fedpae/data.hpp"
#include "fedpae/harness.hpp"
#include "fedpae/selection.hpp"

namespace fs = std::filesystem;
using namespace fedpae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInput = 3;
constexpr int kExitInternal = 4;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cmd_gen(const std::string& spec_path, const std::string& out_path,
            const std::string& csv_path) {
    nlohmann::json j = nlohmann::json::parse(read_file(spec_path));
    data::SyntheticSpec spec;
    spec.n_classes = j.value("n_classes", spec.n_classes);
    spec.n_features = j.value("n_features", spec.n_features);
    spec.n_samples = j.value("n_samples", spec.n_samples);
    spec.class_separation = j.value("class_separation", spec.class_separation);
    spec.noise_scale = j.value("noise_scale", spec.noise_scale);
    spec.seed = j.value("seed", spec.seed);
    auto ds = data::generate_synthetic(spec);
    if (!out_path.empty()) data::save_binary(ds, out_path);
    if (!csv_path.empty()) data::save_csv(ds, csv_path);
    std::cout << "generated " << ds.size() << " samples, " << ds.n_features() << " features, "
              << ds.n_classes << " classes\n";
    return kExitOk;
}

int cmd_partition(const std::string& data_path, double alpha, int clients, uint64_t seed,
                  int min_samples, const std::string& out_path) {
    data::Dataset ds = data_path.ends_with(".csv") ? data::load_csv(data_path)
                                                   : data::load_binary(data_path);
    data::PartitionSpec spec;
    spec.alpha = alpha;
    spec.n_clients = clients;
    spec.seed = seed;
    spec.min_client_samples = min_samples;
    auto assignment = data::partition_dirichlet(ds, spec);
    data::PartitionFile part;
    part.alpha = alpha;
    part.seed = seed;
    for (int i = 0; i < clients; ++i)
        part.clients.push_back(data::split_shard(
            i, assignment[i], spec.split_fractions, ds,
            derive_seed(seed, "split/" + std::to_string(i))));
    data::save_partition_json(part, out_path);
    std::cout << "partitioned " << ds.size() << " samples across " << clients << " clients\n";
    return kExitOk;
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
    std::string text = read_file(config_path);
    auto config = harness::config_from_json(text);
    auto alphas = harness::sweep_alphas_from_json(text);
    auto seeds = harness::sweep_seeds_from_json(text);
    if (const char* env = std::getenv("FEDPAE_SEED")) {
        uint64_t s = std::strtoull(env, nullptr, 10);
        config.master_seed = s;
        seeds = {s};
    }
    if (alphas.size() == 1 && seeds.size() == 1) {
        config.alpha = alphas[0];
        config.master_seed = seeds[0];
        auto report = harness::run_experiment(config);
        harness::emit_report(report, out_dir);
        std::cout << "alpha=" << format_sig(report.alpha)
                  << " fedpae_mean=" << format_sig(report.methods.at("fedpae").mean)
                  << " runtime_s=" << format_sig(report.runtime_seconds) << "\n";
    } else {
        auto sweep = harness::run_sweep(config, alphas, seeds);
        harness::emit_sweep(sweep, out_dir);
        double total = 0.0;
        for (const auto& r : sweep.runs) total += r.runtime_seconds;
        std::cout << sweep.runs.size() << " runs, total runtime_s=" << format_sig(total) << "\n";
    }
    std::cout << "results written to " << out_dir << "\n";
    return kExitOk;
}

int cmd_report(const std::string& in_dir, const std::string& format) {
    std::string text = read_file((fs::path(in_dir) / "results.json").string());
    if (format == "json") {
        std::cout << text;
        return kExitOk;
    }
    // Rebuild the CSV from the raw per-client values.
    nlohmann::json j = nlohmann::json::parse(text);
    std::cout << "method,alpha,mean_accuracy,sd,ci95_half_width\n";
    auto emit_methods = [](const nlohmann::json& run) {
        double alpha = run.at("alpha").get<double>();
        for (const auto& [name, m] : run.at("methods").items()) {
            auto stats = harness::make_stats(m.at("per_client").get<std::vector<double>>());
            std::cout << name << "," << format_sig(alpha) << "," << format_sig(stats.mean) << ","
                      << format_sig(stats.sd) << "," << format_sig(stats.ci95_half_width) << "\n";
        }
    };
    if (j.contains("runs"))
        for (const auto& run : j.at("runs")) emit_methods(run);
    else
        emit_methods(j);
    return kExitOk;
}

int cmd_oracle(const std::string& bench_path, int k) {
    fs::path p(bench_path);
    if (fs::is_directory(p)) p /= "matrix.bin";
    auto matrix = selection::load_matrix(p.string());
    auto [mask, acc] = selection::exhaustive_oracle(matrix, k);
    std::cout << "oracle_mask=" << moo::mask_to_string(mask)
              << " oracle_accuracy=" << format_sig(acc) << "\n";
    fs::path sel_path = p.parent_path() / "selection.json";
    if (fs::exists(sel_path)) {
        nlohmann::json j = nlohmann::json::parse(read_file(sel_path.string()));
        double chosen = j.at("val_accuracy").get<double>();
        std::cout << "selected_accuracy=" << format_sig(chosen)
                  << " ratio=" << format_sig(acc > 0 ? chosen / acc : 0.0) << "\n";
    }
    return kExitOk;
}

int cmd_cost(const std::string& params_path) {
    auto params = harness::parse_cost_params(read_file(params_path));
    double fedpae = harness::estimate_flops(params);
    std::cout << "fedpae_flops=" << format_sig(fedpae, 9) << "\n";
    if (params.fedavg_fwd_flops > 0) {
        double fedavg = harness::estimate_fedavg_flops(params);
        std::cout << "fedavg_flops=" << format_sig(fedavg, 9) << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FedPAE: decentralized personalized federated learning via peer-to-peer "
                 "model sharing and ensemble selection"};
    app.require_subcommand(1);

    std::string spec_path, out_path, csv_path;
    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    gen->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
    gen->add_option("--out", out_path, "Binary cache output path");
    gen->add_option("--csv", csv_path, "CSV output path");

    std::string data_path, part_out;
    double alpha = 0.1;
    int clients = 20;
    uint64_t seed = 42;
    int min_samples = 3;
    auto* partition = app.add_subcommand("partition", "Dirichlet-partition a dataset");
    partition->add_option("--data", data_path, "Dataset file (.bin or .csv)")->required();
    partition->add_option("--alpha", alpha, "Dirichlet concentration")->required();
    partition->add_option("--clients", clients, "Number of clients")->required();
    partition->add_option("--seed", seed, "Partition seed");
    partition->add_option("--min-samples", min_samples, "Per-client sample floor");
    partition->add_option("--out", part_out, "Partition JSON output")->required();

    std::string config_path, run_out;
    auto* run = app.add_subcommand("run", "Run an experiment (or sweep) from a config");
    run->add_option("--config", config_path, "Experiment config JSON")->required();
    run->add_option("--out", run_out, "Output directory")->required();

    std::string report_in, report_format = "csv";
    auto* report = app.add_subcommand("report", "Re-emit results from a results directory");
    report->add_option("--in", report_in, "Results directory")->required();
    report->add_option("--format", report_format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));

    std::string bench_path;
    int oracle_k = 5;
    auto* oracle = app.add_subcommand("oracle", "Exhaustive ensemble check for a saved bench");
    oracle->add_option("--bench", bench_path, "Client directory or matrix.bin")->required();
    oracle->add_option("--k", oracle_k, "Ensemble cardinality");

    std::string cost_path;
    auto* cost = app.add_subcommand("cost", "Evaluate the computational cost model");
    cost->add_option("--params", cost_path, "Cost parameters JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(spec_path, out_path, csv_path);
        if (partition->parsed())
            return cmd_partition(data_path, alpha, clients, seed, min_samples, part_out);
        if (run->parsed()) return cmd_run(config_path, run_out);
        if (report->parsed()) return cmd_report(report_in, report_format);
        if (oracle->parsed()) return cmd_oracle(bench_path, oracle_k);
        if (cost->parsed()) return cmd_cost(cost_path);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}
