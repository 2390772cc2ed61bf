#include "fedpae/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace fedpae::harness {

using data::LabeledSet;

std::vector<learners::LearnerSpec> ExperimentConfig::default_slots() {
    using learners::Architecture;
    std::vector<learners::LearnerSpec> slots(5);
    slots[0].architecture = Architecture::logistic_regression;
    slots[1].architecture = Architecture::mlp;
    slots[1].hidden_sizes = {32};
    slots[2].architecture = Architecture::mlp;
    slots[2].hidden_sizes = {64, 32};
    slots[3].architecture = Architecture::nearest_centroid;
    slots[4].architecture = Architecture::decision_stump_forest;
    slots[4].n_stumps = 50;
    return slots;
}

ExperimentConfig ExperimentConfig::desk_default() {
    ExperimentConfig c;
    c.synthetic.n_classes = 8;
    c.synthetic.n_features = 8;
    c.synthetic.n_samples = 16000;
    c.synthetic.class_separation = 7.0;
    c.synthetic.noise_scale = 1.0;
    c.alpha = 0.1;
    c.n_clients = 20;
    c.min_client_samples = 60;
    c.slots = default_slots();
    c.ensemble_k = 5;
    // FedAvg trains a single shared model for everyone, so it gets the
    // highest-capacity slot architecture.
    c.fedavg_spec.architecture = learners::Architecture::mlp;
    c.fedavg_spec.hidden_sizes = {64, 32};
    c.fedavg_rounds = 500;
    return c;
}

void ExperimentConfig::validate() const {
    if (n_clients < 2) throw ConfigError("experiment: n_clients must be >= 2");
    if (slots.empty()) throw ConfigError("experiment: at least one learner slot required");
    for (const auto& s : slots) s.validate();
    if (ensemble_k < 1) throw ConfigError("experiment: ensemble_k must be >= 1");
    nsga.validate();
    if (schedule.stagger < 0) throw ConfigError("experiment: stagger must be >= 0");
    if (schedule.settle_delay < 0) throw ConfigError("experiment: settle_delay must be >= 0");
    if (schedule.link_latency < 1) throw ConfigError("experiment: link_latency must be >= 1");
    for (const auto& b : baselines)
        if (b != "local_single" && b != "local_ensemble" && b != "fedavg")
            throw ConfigError("experiment: unknown baseline " + b);
    if (baselines.count("fedavg")) {
        fedavg_spec.validate();
        if (fedavg_rounds < 1) throw ConfigError("experiment: fedavg_rounds must be >= 1");
    }
    if (dataset_path.empty()) {
        // Synthetic invariants are checked by the generator; catch the cheap
        // ones here so the error names the config stage.
        if (synthetic.n_samples < synthetic.n_classes)
            throw ConfigError("experiment: synthetic n_samples must be >= n_classes");
    }
}

MethodStats make_stats(std::vector<double> per_client) {
    MethodStats s;
    s.per_client = std::move(per_client);
    s.mean = mean_of(s.per_client);
    s.sd = sample_sd(s.per_client);
    if (!s.per_client.empty())
        s.ci95_half_width = 1.96 * s.sd / std::sqrt(static_cast<double>(s.per_client.size()));
    return s;
}

double relative_change(double method_acc, double base_acc) {
    if (base_acc == 0.0) throw InputError("relative_change: undefined for zero base accuracy");
    return (method_acc - base_acc) / base_acc;
}

namespace {

// Deterministic parallel map over [0, n): worker threads pull indices from a
// shared counter; every index writes only its own output slot.
void parallel_for(int n, const std::function<void(int)>& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    int workers = std::max(1, std::min<int>(n, static_cast<int>(hw ? hw : 1)));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&]() {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

double vote_accuracy(const std::vector<const learners::Predictor*>& members,
                     const LabeledSet& set, selection::VotingRule rule) {
    if (members.empty()) throw InputError("vote_accuracy: no ensemble members");
    size_t correct = 0;
    std::vector<double> acc(set.n_classes);
    for (size_t i = 0; i < set.size(); ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const auto* m : members) {
            auto proba = learners::predict_proba(*m, set.x.row_span(i));
            if (rule == selection::VotingRule::soft) {
                for (int c = 0; c < set.n_classes; ++c) acc[c] += proba[c];
            } else {
                int best = 0;
                for (int c = 1; c < set.n_classes; ++c)
                    if (proba[c] > proba[best]) best = c;
                acc[best] += 1.0;
            }
        }
        int best = 0;
        for (int c = 1; c < set.n_classes; ++c)
            if (acc[c] > acc[best]) best = c;
        if (best == set.y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
    config.validate();
    auto t_start = std::chrono::steady_clock::now();
    const uint64_t master = config.master_seed;

    data::Dataset ds;
    if (!config.dataset_path.empty()) {
        ds = config.dataset_path.ends_with(".csv") ? data::load_csv(config.dataset_path)
                                                   : data::load_binary(config.dataset_path);
    } else {
        data::SyntheticSpec spec = config.synthetic;
        spec.seed = derive_seed(master, "dataset");
        ds = data::generate_synthetic(spec);
    }

    data::PartitionSpec pspec;
    pspec.alpha = config.alpha;
    pspec.n_clients = config.n_clients;
    pspec.seed = derive_seed(master, "partition");
    pspec.min_client_samples = config.min_client_samples;
    auto assignment = data::partition_dirichlet(ds, pspec);

    const int n = config.n_clients;
    const int n_slots = static_cast<int>(config.slots.size());
    std::vector<LabeledSet> train_sets(n), val_sets(n), test_sets(n);
    for (int i = 0; i < n; ++i) {
        auto shard = data::split_shard(i, assignment[i], pspec.split_fractions, ds,
                                       derive_seed(master, "split/" + std::to_string(i)));
        train_sets[i] = data::gather(ds, shard.train_idx);
        val_sets[i] = data::gather(ds, shard.val_idx);
        test_sets[i] = data::gather(ds, shard.test_idx);
    }

    // Train every slot of every client once; all methods share these models.
    std::vector<std::vector<learners::Predictor>> models(n);
    std::vector<std::vector<learners::TrainReport>> reports(n);
    parallel_for(n, [&](int i) {
        models[i].resize(n_slots);
        reports[i].resize(n_slots);
        for (int j = 0; j < n_slots; ++j) {
            learners::LearnerSpec spec = config.slots[j];
            spec.seed = derive_seed(master, "train/" + std::to_string(i) + "/" + std::to_string(j));
            auto [pred, rep] = learners::train(spec, train_sets[i], val_sets[i]);
            pred.origin.client_id = static_cast<uint32_t>(i);
            pred.origin.slot = static_cast<uint32_t>(j);
            models[i][j] = std::move(pred);
            reports[i][j] = rep;
        }
    });

    // Peer-to-peer exchange and per-client ensemble selection.
    std::vector<net::ClientContext> contexts(n);
    for (int i = 0; i < n; ++i) contexts[i] = {models[i], val_sets[i]};
    auto topo = net::Topology::complete(n, config.schedule.link_latency);
    auto schedule = net::build_default_schedule(n, n_slots, config.schedule.stagger,
                                                config.schedule.settle_delay,
                                                derive_seed(master, "schedule"));
    net::SimOptions sim_opts;
    sim_opts.storage_mode = config.storage_mode;
    sim_opts.ensemble_k = config.ensemble_k;
    sim_opts.nsga = config.nsga;
    sim_opts.seed = derive_seed(master, "sim");
    auto sim = net::run_simulation(topo, schedule, contexts, sim_opts);

    ExperimentReport report;
    report.alpha = config.alpha;
    report.master_seed = master;
    report.n_clients = n;
    report.trace = std::move(sim.trace);

    // Model lookup by id; every evaluation below must hit this cache.
    std::map<selection::ModelId, const learners::Predictor*> cache;
    std::vector<std::vector<uint64_t>> fwd_flops(n, std::vector<uint64_t>(n_slots, 0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n_slots; ++j) {
            cache.emplace(selection::model_id_of(models[i][j]), &models[i][j]);
            fwd_flops[i][j] = learners::forward_flops(config.slots[j], ds.n_features(),
                                                      ds.n_classes);
        }
    }
    auto lookup = [&](const selection::ModelId& id) -> const learners::Predictor* {
        auto it = cache.find(id);
        if (it == cache.end())
            throw InternalError("experiment: chosen model missing from cache: " + id.str());
        report.model_cache_hits += 1;
        return it->second;
    };

    std::vector<double> fedpae_acc(n), chosen_fwd(n);
    for (int i = 0; i < n; ++i) {
        if (sim.selections[i].empty())
            throw InternalError("experiment: client never selected an ensemble");
        const auto& sel = sim.selections[i].back().result;
        std::vector<const learners::Predictor*> members;
        double fwd_sum = 0.0;
        for (const auto& id : sel.chosen_model_ids) {
            members.push_back(lookup(id));
            fwd_sum += static_cast<double>(fwd_flops[id.origin_client][id.slot]);
        }
        fedpae_acc[i] = vote_accuracy(members, test_sets[i], selection::VotingRule::soft);
        chosen_fwd[i] = fwd_sum;
        report.local_fraction.push_back(sel.local_fraction);
        report.pf_size.push_back(sel.pf_size);
        report.selections.push_back(sel);
        report.matrices.push_back(
            selection::materialize_predictions(sim.benches[i], val_sets[i]));
    }
    report.methods["fedpae"] = make_stats(fedpae_acc);
    report.mean_local_fraction = mean_of(report.local_fraction);
    {
        std::vector<double> pf(report.pf_size.begin(), report.pf_size.end());
        report.mean_pf_size = mean_of(pf);
    }

    if (config.baselines.count("local_single")) {
        std::vector<double> acc(n);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            for (int j = 1; j < n_slots; ++j)
                if (reports[i][j].best_val_accuracy > reports[i][best].best_val_accuracy)
                    best = j;
            acc[i] = vote_accuracy({lookup(selection::model_id_of(models[i][best]))},
                                   test_sets[i], selection::VotingRule::soft);
        }
        report.methods["local_single"] = make_stats(acc);
    }
    if (config.baselines.count("local_ensemble")) {
        std::vector<double> acc(n);
        for (int i = 0; i < n; ++i) {
            std::vector<const learners::Predictor*> members;
            for (int j = 0; j < n_slots; ++j)
                members.push_back(lookup(selection::model_id_of(models[i][j])));
            acc[i] = vote_accuracy(members, test_sets[i], selection::VotingRule::soft);
        }
        report.methods["local_ensemble"] = make_stats(acc);
    }
    if (config.baselines.count("fedavg")) {
        learners::LearnerSpec shared = config.fedavg_spec;
        shared.seed = derive_seed(master, "fedavg");
        auto global = learners::fedavg_train(train_sets, shared, config.fedavg_rounds);
        std::vector<double> acc(n);
        for (int i = 0; i < n; ++i) acc[i] = learners::accuracy(global, test_sets[i]);
        report.methods["fedavg"] = make_stats(acc);
    }

    if (report.methods.count("local_ensemble")) {
        const auto& base = report.methods.at("local_ensemble").per_client;
        for (const auto& [name, stats] : report.methods) {
            if (name == "local_ensemble") continue;
            std::vector<double> rel(n);
            for (int i = 0; i < n; ++i)
                rel[i] = base[i] > 0.0 ? relative_change(stats.per_client[i], base[i])
                                       : std::numeric_limits<double>::quiet_NaN();
            report.relative_change[name] = std::move(rel);
        }
    }

    // Cost estimate from realized magnitudes.
    report.mean_epochs_per_slot.resize(n_slots, 0.0);
    for (int j = 0; j < n_slots; ++j) {
        double m = 0.0;
        for (int i = 0; i < n; ++i) m += reports[i][j].epochs_run;
        report.mean_epochs_per_slot[j] = m / n;
    }
    {
        CostModelParams params;
        params.n_clients = n;
        double mean_train = 0.0, mean_val = 0.0;
        for (int i = 0; i < n; ++i) {
            mean_train += static_cast<double>(train_sets[i].size());
            mean_val += static_cast<double>(val_sets[i].size());
        }
        params.train_samples = mean_train / n;
        params.val_samples = mean_val / n;
        for (int j = 0; j < n_slots; ++j)
            params.slots.push_back({std::string(learners::arch_name(config.slots[j].architecture)),
                                    static_cast<double>(fwd_flops[0][j]),
                                    std::max(1.0, report.mean_epochs_per_slot[j])});
        params.population = config.nsga.population_size;
        params.generations = config.nsga.generations;
        params.eval_cost = objective_eval_cost(config.ensemble_k);
        params.pareto_size = std::max(1.0, report.mean_pf_size);
        params.chosen_fwd_sum = std::max(1.0, mean_of(chosen_fwd));
        params.fedavg_fwd_flops = static_cast<double>(
            learners::forward_flops(config.fedavg_spec, ds.n_features(), ds.n_classes));
        params.fedavg_rounds = config.fedavg_rounds;
        params.fedavg_samples_per_round = params.train_samples;
        report.flops.fedpae = estimate_flops(params);
        report.flops.fedavg = estimate_fedavg_flops(params);
    }

    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---- cost model ----

void CostModelParams::validate() const {
    if (n_clients <= 0) throw ConfigError("cost params: n_clients must be positive");
    if (slots.empty()) throw ConfigError("cost params: at least one slot required");
    for (const auto& s : slots) {
        if (s.fwd_flops <= 0) throw ConfigError("cost params: slot fwd_flops must be positive");
        if (s.train_iters <= 0) throw ConfigError("cost params: slot train_iters must be positive");
    }
    if (train_samples <= 0) throw ConfigError("cost params: train_samples must be positive");
    if (multiplier < 1) throw ConfigError("cost params: multiplier must be >= 1");
    if (population <= 0 || generations <= 0)
        throw ConfigError("cost params: population and generations must be positive");
    if (eval_cost <= 0) throw ConfigError("cost params: eval_cost must be positive");
    if (pareto_size <= 0) throw ConfigError("cost params: pareto_size must be positive");
    if (val_samples <= 0) throw ConfigError("cost params: val_samples must be positive");
    if (chosen_fwd_sum <= 0) throw ConfigError("cost params: chosen_fwd_sum must be positive");
}

double objective_eval_cost(int k) {
    // k member-accuracy adds + 1 mean, C(k,2) pairwise adds + 1 mean, on
    // top of statistics precomputed once per prediction matrix.
    return static_cast<double>(k) + 1.0 + static_cast<double>(k) * (k - 1) / 2.0 + 1.0;
}

double estimate_flops(const CostModelParams& p) {
    p.validate();
    double train = 0.0;
    for (const auto& s : p.slots) train += p.multiplier * s.fwd_flops * s.train_iters * p.train_samples;
    double nsga = p.population * p.generations * p.eval_cost;
    double pareto_eval = p.pareto_size * p.val_samples * p.chosen_fwd_sum;
    return p.n_clients * (train + nsga + pareto_eval);
}

double estimate_fedavg_flops(const CostModelParams& p) {
    if (p.fedavg_fwd_flops <= 0 || p.fedavg_rounds <= 0 || p.fedavg_samples_per_round <= 0)
        throw ConfigError("cost params: fedavg_fwd_flops, fedavg_rounds and "
                          "fedavg_samples_per_round must be positive");
    return p.n_clients * p.fedavg_rounds * p.multiplier * p.fedavg_fwd_flops *
           p.fedavg_samples_per_round;
}

CostModelParams parse_cost_params(const std::string& json_text) {
    json j = json::parse(json_text);
    CostModelParams p;
    p.n_clients = j.at("n_clients").get<double>();
    p.multiplier = j.value("multiplier", 3.0);
    std::map<std::string, double> table;
    if (j.contains("flops_table"))
        for (const auto& [name, v] : j.at("flops_table").items()) table[name] = v.get<double>();
    auto resolve_fwd = [&](const json& slot) -> double {
        if (slot.contains("fwd_flops")) return slot.at("fwd_flops").get<double>();
        std::string arch = slot.at("architecture").get<std::string>();
        auto it = table.find(arch);
        if (it == table.end())
            throw ConfigError("cost params: architecture missing from flops_table: " + arch);
        return it->second;
    };
    for (const auto& slot : j.at("slots")) {
        SlotCost s;
        s.architecture = slot.value("architecture", std::string("unnamed"));
        s.fwd_flops = resolve_fwd(slot);
        s.train_iters = slot.at("train_iters").get<double>();
        p.slots.push_back(std::move(s));
    }
    p.train_samples = j.at("train_samples").get<double>();
    p.population = j.at("population").get<double>();
    p.generations = j.at("generations").get<double>();
    if (j.contains("eval_cost"))
        p.eval_cost = j.at("eval_cost").get<double>();
    else if (j.contains("ensemble_k"))
        p.eval_cost = objective_eval_cost(j.at("ensemble_k").get<int>());
    else
        throw ConfigError("cost params: provide eval_cost or ensemble_k");
    p.pareto_size = j.at("pareto_size").get<double>();
    p.val_samples = j.at("val_samples").get<double>();
    p.chosen_fwd_sum = j.at("chosen_fwd_sum").get<double>();
    if (j.contains("fedavg")) {
        const auto& f = j.at("fedavg");
        if (f.contains("fwd_flops")) {
            p.fedavg_fwd_flops = f.at("fwd_flops").get<double>();
        } else {
            std::string arch = f.at("architecture").get<std::string>();
            auto it = table.find(arch);
            if (it == table.end())
                throw ConfigError("cost params: architecture missing from flops_table: " + arch);
            p.fedavg_fwd_flops = it->second;
        }
        p.fedavg_rounds = f.value("rounds", 500.0);
        p.fedavg_samples_per_round = f.value("samples_per_round", p.train_samples);
    }
    return p;
}

CostModelParams desk_default_cost_params() {
    auto config = ExperimentConfig::desk_default();
    const int d = config.synthetic.n_features;
    const int C = config.synthetic.n_classes;
    CostModelParams p;
    p.n_clients = config.n_clients;
    p.train_samples = 0.7 * config.synthetic.n_samples / config.n_clients;
    p.val_samples = 0.15 * config.synthetic.n_samples / config.n_clients;
    double chosen = 0.0;
    for (const auto& slot : config.slots) {
        double fwd = static_cast<double>(learners::forward_flops(slot, d, C));
        bool gradient = slot.architecture == learners::Architecture::logistic_regression ||
                        slot.architecture == learners::Architecture::mlp;
        // 60 epochs is the typical early-stopping point under the default
        // patience; one-shot learners fit in a single pass.
        p.slots.push_back(
            {std::string(learners::arch_name(slot.architecture)), fwd, gradient ? 60.0 : 1.0});
        chosen += fwd;
    }
    p.population = config.nsga.population_size;
    p.generations = config.nsga.generations;
    p.eval_cost = objective_eval_cost(config.ensemble_k);
    p.pareto_size = 20.0;
    p.chosen_fwd_sum = chosen;
    p.fedavg_fwd_flops =
        static_cast<double>(learners::forward_flops(config.fedavg_spec, d, C));
    p.fedavg_rounds = config.fedavg_rounds;
    p.fedavg_samples_per_round = p.train_samples;
    return p;
}

// ---- report emission ----

namespace {

ordered_json stats_to_json(const MethodStats& s) {
    ordered_json j;
    j["per_client"] = ordered_json::array();
    for (double v : s.per_client) j["per_client"].push_back(round_sig(v));
    j["mean"] = round_sig(s.mean);
    j["sd"] = round_sig(s.sd);
    j["ci95_half_width"] = round_sig(s.ci95_half_width);
    return j;
}

ordered_json report_to_json(const ExperimentReport& r) {
    ordered_json j;
    j["alpha"] = round_sig(r.alpha);
    j["master_seed"] = r.master_seed;
    j["n_clients"] = r.n_clients;
    j["methods"] = ordered_json::object();
    for (const auto& [name, stats] : r.methods) j["methods"][name] = stats_to_json(stats);
    j["relative_change_vs_local_ensemble"] = ordered_json::object();
    for (const auto& [name, rel] : r.relative_change) {
        ordered_json arr = ordered_json::array();
        for (double v : rel)
            arr.push_back(std::isnan(v) ? ordered_json(nullptr) : ordered_json(round_sig(v)));
        j["relative_change_vs_local_ensemble"][name] = std::move(arr);
    }
    j["local_fraction"] = ordered_json::object();
    j["local_fraction"]["per_client"] = ordered_json::array();
    for (double v : r.local_fraction) j["local_fraction"]["per_client"].push_back(round_sig(v));
    j["local_fraction"]["mean"] = round_sig(r.mean_local_fraction);
    j["pf_size"] = ordered_json::object();
    j["pf_size"]["per_client"] = r.pf_size;
    j["pf_size"]["mean"] = round_sig(r.mean_pf_size);
    j["flops_estimate"] = ordered_json::object();
    j["flops_estimate"]["fedpae"] = round_sig(r.flops.fedpae);
    j["flops_estimate"]["fedavg_baseline"] = round_sig(r.flops.fedavg);
    j["mean_epochs_per_slot"] = ordered_json::array();
    for (double v : r.mean_epochs_per_slot) j["mean_epochs_per_slot"].push_back(round_sig(v));
    j["model_cache_hits"] = r.model_cache_hits;
    return j;
}

void write_text_atomic(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw InputError("emit: cannot open " + tmp + " for writing");
        out << text;
        if (!out) throw InputError("emit: write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

std::string results_csv_header() { return "method,alpha,mean_accuracy,sd,ci95_half_width\n"; }

void append_results_rows(std::string& csv, const ExperimentReport& r) {
    for (const auto& [name, stats] : r.methods) {
        csv += name;
        csv += ",";
        csv += format_sig(r.alpha);
        csv += ",";
        csv += format_sig(stats.mean);
        csv += ",";
        csv += format_sig(stats.sd);
        csv += ",";
        csv += format_sig(stats.ci95_half_width);
        csv += "\n";
    }
}

std::string relchange_csv_header() { return "alpha,seed,client,method,relative_change\n"; }

void append_relchange_rows(std::string& csv, const ExperimentReport& r) {
    for (const auto& [name, rel] : r.relative_change) {
        for (size_t i = 0; i < rel.size(); ++i) {
            csv += format_sig(r.alpha);
            csv += ",";
            csv += std::to_string(r.master_seed);
            csv += ",";
            csv += std::to_string(i);
            csv += ",";
            csv += name;
            csv += ",";
            csv += std::isnan(rel[i]) ? "" : format_sig(rel[i]);
            csv += "\n";
        }
    }
}

void emit_client_artifacts(const ExperimentReport& report, const fs::path& dir) {
    fs::create_directories(dir / "pareto");
    for (size_t i = 0; i < report.selections.size(); ++i) {
        std::string cname = "client_" + std::to_string(i);
        selection::save_pareto_jsonl(report.selections[i], report.matrices[i],
                                     (dir / "pareto" / (cname + ".jsonl")).string());
        fs::create_directories(dir / cname);
        selection::save_matrix(report.matrices[i], (dir / cname / "matrix.bin").string());
        selection::save_selection_json(report.selections[i],
                                       (dir / cname / "selection.json").string());
    }
    net::write_trace_jsonl(report.trace, (dir / "trace.jsonl").string());
}

}  // namespace

void emit_report(const ExperimentReport& report, const std::string& out_dir) {
    fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("emit_report: cannot create output directory " + out_dir);

    // results.json is written first, to a temp file, so a failure leaves no
    // partial report behind.
    write_text_atomic((dir / "results.json").string(), report_to_json(report).dump(2) + "\n");

    std::string csv = results_csv_header();
    append_results_rows(csv, report);
    write_text_atomic((dir / "results.csv").string(), csv);

    std::string rel = relchange_csv_header();
    append_relchange_rows(rel, report);
    write_text_atomic((dir / "relative_change.csv").string(), rel);

    emit_client_artifacts(report, dir);
}

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<double>& alphas,
                      const std::vector<uint64_t>& seeds) {
    if (alphas.empty() || seeds.empty()) throw ConfigError("sweep: alphas and seeds required");
    SweepResult sweep;
    for (double alpha : alphas) {
        for (uint64_t seed : seeds) {
            ExperimentConfig config = base;
            config.alpha = alpha;
            config.master_seed = seed;
            sweep.runs.push_back(run_experiment(config));
        }
    }
    return sweep;
}

void emit_sweep(const SweepResult& sweep, const std::string& out_dir) {
    fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("emit_sweep: cannot create output directory " + out_dir);

    ordered_json j;
    j["runs"] = ordered_json::array();
    for (const auto& r : sweep.runs) j["runs"].push_back(report_to_json(r));

    // Aggregate per (method, alpha): pool per-client accuracies across seeds.
    std::map<std::string, std::map<double, std::vector<double>>> pooled;
    for (const auto& r : sweep.runs)
        for (const auto& [name, stats] : r.methods) {
            auto& bucket = pooled[name][r.alpha];
            bucket.insert(bucket.end(), stats.per_client.begin(), stats.per_client.end());
        }
    j["aggregate"] = ordered_json::array();
    std::string csv = results_csv_header();
    for (const auto& [name, by_alpha] : pooled) {
        for (const auto& [alpha, values] : by_alpha) {
            MethodStats stats = make_stats(values);
            ordered_json row;
            row["method"] = name;
            row["alpha"] = round_sig(alpha);
            row["mean"] = round_sig(stats.mean);
            row["sd"] = round_sig(stats.sd);
            row["ci95_half_width"] = round_sig(stats.ci95_half_width);
            row["n"] = values.size();
            j["aggregate"].push_back(std::move(row));
            csv += name + "," + format_sig(alpha) + "," + format_sig(stats.mean) + "," +
                   format_sig(stats.sd) + "," + format_sig(stats.ci95_half_width) + "\n";
        }
    }
    write_text_atomic((dir / "results.json").string(), j.dump(2) + "\n");
    write_text_atomic((dir / "results.csv").string(), csv);

    std::string rel = relchange_csv_header();
    for (const auto& r : sweep.runs) append_relchange_rows(rel, r);
    write_text_atomic((dir / "relative_change.csv").string(), rel);

    for (const auto& r : sweep.runs) {
        std::string run_name =
            "alpha_" + format_sig(r.alpha) + "_seed_" + std::to_string(r.master_seed);
        emit_report(r, (dir / "runs" / run_name).string());
    }
}

// ---- config JSON ----

namespace {

learners::LearnerSpec learner_from_json(const json& j) {
    learners::LearnerSpec s;
    s.architecture = learners::arch_from_name(j.at("architecture").get<std::string>());
    s.hidden_sizes = j.value("hidden_sizes", std::vector<int>{});
    s.n_stumps = j.value("n_stumps", 50);
    s.learning_rate = j.value("learning_rate", 0.01);
    s.batch_size = j.value("batch_size", 10);
    s.max_epochs = j.value("max_epochs", 500);
    s.patience = j.value("patience", 50);
    return s;
}

ordered_json learner_to_json(const learners::LearnerSpec& s) {
    ordered_json j;
    j["architecture"] = std::string(learners::arch_name(s.architecture));
    if (s.architecture == learners::Architecture::mlp) j["hidden_sizes"] = s.hidden_sizes;
    if (s.architecture == learners::Architecture::decision_stump_forest)
        j["n_stumps"] = s.n_stumps;
    j["learning_rate"] = s.learning_rate;
    j["batch_size"] = s.batch_size;
    j["max_epochs"] = s.max_epochs;
    j["patience"] = s.patience;
    return j;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    ExperimentConfig c = ExperimentConfig::desk_default();
    if (j.contains("synthetic")) {
        const auto& s = j.at("synthetic");
        c.synthetic.n_classes = s.value("n_classes", c.synthetic.n_classes);
        c.synthetic.n_features = s.value("n_features", c.synthetic.n_features);
        c.synthetic.n_samples = s.value("n_samples", c.synthetic.n_samples);
        c.synthetic.class_separation = s.value("class_separation", c.synthetic.class_separation);
        c.synthetic.noise_scale = s.value("noise_scale", c.synthetic.noise_scale);
    }
    c.dataset_path = j.value("dataset_path", std::string());
    c.alpha = j.value("alpha", c.alpha);
    c.n_clients = j.value("n_clients", c.n_clients);
    c.min_client_samples = j.value("min_client_samples", c.min_client_samples);
    if (j.contains("slots")) {
        c.slots.clear();
        for (const auto& s : j.at("slots")) c.slots.push_back(learner_from_json(s));
    }
    c.ensemble_k = j.value("ensemble_k", c.ensemble_k);
    if (j.contains("nsga")) {
        const auto& s = j.at("nsga");
        c.nsga.population_size = s.value("population_size", c.nsga.population_size);
        c.nsga.generations = s.value("generations", c.nsga.generations);
        c.nsga.crossover_rate = s.value("crossover_rate", c.nsga.crossover_rate);
        c.nsga.mutation_rate = s.value("mutation_rate", c.nsga.mutation_rate);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        c.schedule.stagger = s.value("stagger", c.schedule.stagger);
        c.schedule.settle_delay = s.value("settle_delay", c.schedule.settle_delay);
        c.schedule.link_latency = s.value("link_latency", c.schedule.link_latency);
    }
    std::string mode = j.value("storage_mode", std::string("full_models"));
    if (mode == "full_models")
        c.storage_mode = selection::StorageMode::full_models;
    else if (mode == "predictions_only")
        c.storage_mode = selection::StorageMode::predictions_only;
    else
        throw ConfigError("config: unknown storage_mode " + mode);
    if (j.contains("baselines")) {
        c.baselines.clear();
        for (const auto& b : j.at("baselines")) c.baselines.insert(b.get<std::string>());
    }
    if (j.contains("fedavg")) {
        const auto& f = j.at("fedavg");
        if (f.contains("architecture")) c.fedavg_spec = learner_from_json(f);
        c.fedavg_rounds = f.value("rounds", c.fedavg_rounds);
    }
    c.master_seed = j.value("master_seed", c.master_seed);
    return c;
}

std::string config_to_json(const ExperimentConfig& c) {
    ordered_json j;
    j["synthetic"] = {{"n_classes", c.synthetic.n_classes},
                      {"n_features", c.synthetic.n_features},
                      {"n_samples", c.synthetic.n_samples},
                      {"class_separation", c.synthetic.class_separation},
                      {"noise_scale", c.synthetic.noise_scale}};
    if (!c.dataset_path.empty()) j["dataset_path"] = c.dataset_path;
    j["alpha"] = c.alpha;
    j["n_clients"] = c.n_clients;
    j["min_client_samples"] = c.min_client_samples;
    j["slots"] = ordered_json::array();
    for (const auto& s : c.slots) j["slots"].push_back(learner_to_json(s));
    j["ensemble_k"] = c.ensemble_k;
    j["nsga"] = {{"population_size", c.nsga.population_size},
                 {"generations", c.nsga.generations},
                 {"crossover_rate", c.nsga.crossover_rate},
                 {"mutation_rate", c.nsga.mutation_rate}};
    j["schedule"] = {{"stagger", c.schedule.stagger},
                     {"settle_delay", c.schedule.settle_delay},
                     {"link_latency", c.schedule.link_latency}};
    j["storage_mode"] = c.storage_mode == selection::StorageMode::full_models
                            ? "full_models"
                            : "predictions_only";
    j["baselines"] = c.baselines;
    ordered_json f = learner_to_json(c.fedavg_spec);
    f["rounds"] = c.fedavg_rounds;
    j["fedavg"] = std::move(f);
    j["master_seed"] = c.master_seed;
    return j.dump(2) + "\n";
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::vector<double> sweep_alphas_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    if (j.contains("alphas")) return j.at("alphas").get<std::vector<double>>();
    return {j.value("alpha", 0.1)};
}

std::vector<uint64_t> sweep_seeds_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    if (j.contains("seeds")) return j.at("seeds").get<std::vector<uint64_t>>();
    return {j.value("master_seed", static_cast<uint64_t>(42))};
}

}  // namespace fedpae::harness
