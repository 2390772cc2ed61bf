#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedpae/common.hpp"
#include "fedpae/data.hpp"
#include "fedpae/learners.hpp"
#include "fedpae/moo.hpp"
#include "fedpae/network.hpp"
#include "fedpae/selection.hpp"

namespace fedpae::harness {

struct ScheduleParams {
    int64_t stagger = 10;
    int64_t settle_delay = 15;
    int64_t link_latency = 1;
};

/// One experiment: synthetic data (or a dataset file), Dirichlet partition at
/// one alpha, five heterogeneous learner slots per client, peer-to-peer
/// exchange, ensemble selection, and the baselines.
struct ExperimentConfig {
    data::SyntheticSpec synthetic;
    std::string dataset_path;  // non-empty overrides the synthetic spec
    double alpha = 0.1;
    int n_clients = 20;
    int min_client_samples = 60;
    std::vector<learners::LearnerSpec> slots;
    int ensemble_k = 5;
    moo::NsgaConfig nsga;
    ScheduleParams schedule;
    selection::StorageMode storage_mode = selection::StorageMode::full_models;
    std::set<std::string> baselines{"local_single", "local_ensemble", "fedavg"};
    learners::LearnerSpec fedavg_spec;
    int fedavg_rounds = 500;
    uint64_t master_seed = 42;

    /// The five default heterogeneous slots: logistic regression, mlp(32),
    /// mlp(64,32), nearest centroid, and a 50-stump forest.
    static std::vector<learners::LearnerSpec> default_slots();
    static ExperimentConfig desk_default();
    void validate() const;
};

struct MethodStats {
    std::vector<double> per_client;
    double mean = 0.0;
    double sd = 0.0;
    double ci95_half_width = 0.0;
};

MethodStats make_stats(std::vector<double> per_client);

struct CostEstimate {
    double fedpae = 0.0;
    double fedavg = 0.0;
};

struct ExperimentReport {
    double alpha = 0.0;
    uint64_t master_seed = 0;
    int n_clients = 0;
    // Method name -> per-client test accuracies and summary stats.
    std::map<std::string, MethodStats> methods;
    // Method name -> per-client relative change vs the local ensemble
    // baseline (NaN marks an undefined base).
    std::map<std::string, std::vector<double>> relative_change;
    std::vector<double> local_fraction;
    double mean_local_fraction = 0.0;
    std::vector<int> pf_size;
    double mean_pf_size = 0.0;
    CostEstimate flops;
    double runtime_seconds = 0.0;  // reported on stdout, not serialized
    size_t model_cache_hits = 0;

    std::vector<selection::EnsembleSelection> selections;  // last per client
    std::vector<selection::PredictionMatrix> matrices;     // per client
    std::vector<net::TraceRecord> trace;
    std::vector<double> mean_epochs_per_slot;
};

ExperimentReport run_experiment(const ExperimentConfig& config);

/// (method_acc - base_acc) / base_acc; base must be non-zero.
double relative_change(double method_acc, double base_acc);

struct SlotCost {
    std::string architecture;
    double fwd_flops = 0.0;
    double train_iters = 0.0;
};

/// Inputs to the closed-form cost estimate
///   total = N * (sum_slots multiplier*fwd*T*D + P*G*c_eval + pf*V*chosen_fwd)
/// and the FedAvg comparison
///   fedavg = N * rounds * multiplier * fedavg_fwd * samples_per_round.
struct CostModelParams {
    double n_clients = 0.0;
    std::vector<SlotCost> slots;
    double train_samples = 0.0;  // D
    double multiplier = 3.0;     // forward + backward(2x) per training pass
    double population = 0.0;     // P
    double generations = 0.0;    // G
    double eval_cost = 0.0;      // c_eval: objective arithmetic per mask
    double pareto_size = 0.0;    // pf
    double val_samples = 0.0;    // V
    double chosen_fwd_sum = 0.0; // sum of forward flops over the chosen ensemble
    double fedavg_fwd_flops = 0.0;
    double fedavg_rounds = 0.0;
    double fedavg_samples_per_round = 0.0;

    void validate() const;
};

/// Per-mask objective cost: k member-accuracy adds, C(k,2) pairwise adds,
/// and the two means, on top of precomputed per-model statistics.
double objective_eval_cost(int k);

double estimate_flops(const CostModelParams& params);
double estimate_fedavg_flops(const CostModelParams& params);

/// Fills params from a JSON document; per-slot forward flops resolve through
/// the "flops_table" by architecture name (missing entry -> ConfigError).
CostModelParams parse_cost_params(const std::string& json_text);

/// Desk-default parameters matching ExperimentConfig::desk_default().
CostModelParams desk_default_cost_params();

/// Writes results.json, results.csv, relative_change.csv, pareto/ (per-client
/// front JSONL), trace.jsonl, and client_<i>/ (matrix.bin + selection.json)
/// under out_dir. results.json goes through a temp file + rename.
void emit_report(const ExperimentReport& report, const std::string& out_dir);

struct SweepResult {
    std::vector<ExperimentReport> runs;  // alpha-major, then seed
};

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<double>& alphas,
                      const std::vector<uint64_t>& seeds);
void emit_sweep(const SweepResult& sweep, const std::string& out_dir);

// Experiment config JSON (the `fedpae run --config` file format).
ExperimentConfig config_from_json(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::string& path);

std::vector<double> sweep_alphas_from_json(const std::string& json_text);
std::vector<uint64_t> sweep_seeds_from_json(const std::string& json_text);

}  // namespace fedpae::harness
