#pragma once

#include <array>
#include <string>
#include <vector>

#include "fedpae/common.hpp"

namespace fedpae::data {

/// A labeled classification dataset: n_samples x n_features real features
/// plus integer class labels in [0, n_classes).
struct Dataset {
    FloatMatrix features;
    std::vector<int> labels;
    int n_classes = 0;

    size_t size() const { return labels.size(); }
    int n_features() const { return static_cast<int>(features.cols); }
    void validate() const;
};

/// Isotropic Gaussian-mixture generator spec. Class means sit on a regular
/// simplex with pairwise distance class_separation, so noise_scale = 0 makes
/// the classes exactly separable.
struct SyntheticSpec {
    int n_classes = 2;
    int n_features = 2;
    int n_samples = 100;
    double class_separation = 4.0;
    double noise_scale = 1.0;
    uint64_t seed = 0;
};

struct PartitionSpec {
    double alpha = 0.5;
    int n_clients = 2;
    uint64_t seed = 0;
    std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
    // Post-allocation floor: clients below it receive samples transferred
    // from the currently largest client (1 repairs empty clients only).
    int min_client_samples = 1;
};

/// One client's train/validation/test index sets into the parent Dataset.
struct ClientShard {
    int client_id = 0;
    std::vector<int> train_idx;
    std::vector<int> val_idx;
    std::vector<int> test_idx;
};

/// Features+labels materialized for a subset of a dataset.
struct LabeledSet {
    FloatMatrix x;
    std::vector<int> y;
    int n_classes = 0;

    size_t size() const { return y.size(); }
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Per-class Dirichlet(alpha) proportions allocated with largest-remainder
/// rounding; returns one index list per client covering the dataset exactly.
std::vector<std::vector<int>> partition_dirichlet(const Dataset& dataset, const PartitionSpec& spec);

ClientShard split_shard(int client_id, const std::vector<int>& client_indices,
                        const std::array<double, 3>& fractions, const Dataset& dataset,
                        uint64_t seed);

std::vector<int> class_histogram(const std::vector<int>& indices, const Dataset& dataset);

/// Shannon entropy (nats) of a count histogram; empty histogram -> 0.
double label_entropy(const std::vector<int>& counts);

LabeledSet gather(const Dataset& dataset, const std::vector<int>& indices);

// CSV: header "f0,...,f{d-1},label". Binary cache: "FPDS" is not used; the
// layout is u32 n_samples, u32 n_features, u32 n_classes, row-major f32
// features, u16 labels, all little-endian.
void save_csv(const Dataset& dataset, const std::string& path);
Dataset load_csv(const std::string& path);
void save_binary(const Dataset& dataset, const std::string& path);
Dataset load_binary(const std::string& path);

struct PartitionFile {
    double alpha = 0.0;
    uint64_t seed = 0;
    std::vector<ClientShard> clients;
};

void save_partition_json(const PartitionFile& part, const std::string& path);
PartitionFile load_partition_json(const std::string& path);

}  // namespace fedpae::data
