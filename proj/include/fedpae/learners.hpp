#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedpae/common.hpp"
#include "fedpae/data.hpp"

namespace fedpae::learners {

using data::LabeledSet;

enum class Architecture : uint8_t {
    logistic_regression = 0,
    mlp = 1,
    nearest_centroid = 2,
    decision_stump_forest = 3,
};

std::string_view arch_name(Architecture a);
Architecture arch_from_name(std::string_view name);

struct LearnerSpec {
    Architecture architecture = Architecture::logistic_regression;
    std::vector<int> hidden_sizes;  // mlp only
    int n_stumps = 50;              // decision_stump_forest only
    double learning_rate = 0.01;
    int batch_size = 10;
    int max_epochs = 500;
    int patience = 50;
    uint64_t seed = 0;

    void validate() const;
};

struct ModelOrigin {
    uint32_t client_id = 0;
    uint32_t slot = 0;
    uint64_t training_seed = 0;
};

/// An immutable trained model. The parameter blob is a flat f32 array whose
/// layout is architecture-specific and self-describing (mlp and stump-forest
/// blobs start with their own shape header), so serialize/deserialize need
/// nothing beyond (architecture, n_features, n_classes, params).
struct Predictor {
    Architecture architecture = Architecture::logistic_regression;
    int n_features = 0;
    int n_classes = 0;
    ModelOrigin origin;
    std::vector<float> params;
};

struct TrainReport {
    int epochs_run = 0;
    double best_val_accuracy = 0.0;
    bool stopped_early = false;
    uint64_t training_flops = 0;
    // Extras beyond the required fields, used by invariants and reporting.
    int best_epoch = 0;
    double last_val_accuracy = 0.0;
    bool single_class_warning = false;
};

/// Train with per-epoch validation and best-snapshot early stopping: the
/// returned parameters are the ones with maximal validation accuracy (ties
/// resolved to the earliest epoch); training stops after `patience`
/// consecutive epochs without improvement. One-shot architectures
/// (nearest_centroid, decision_stump_forest) run a single fitting pass.
std::pair<Predictor, TrainReport> train(const LearnerSpec& spec, const LabeledSet& train_set,
                                        const LabeledSet& val_set);

/// Class-probability vector for one sample; entries sum to 1 within 1e-6.
std::vector<double> predict_proba(const Predictor& p, std::span<const float> x);

/// Argmax of predict_proba; ties resolve to the lowest class index.
int predict_class(const Predictor& p, std::span<const float> x);

double accuracy(const Predictor& p, const LabeledSet& set);

/// Estimated multiply-add count of one forward pass, used by the cost model.
uint64_t forward_flops(Architecture a, int n_features, int n_classes,
                       const std::vector<int>& hidden_sizes, int n_stumps);
uint64_t forward_flops(const LearnerSpec& spec, int n_features, int n_classes);

// Self-describing binary format, also the MODEL message payload:
// magic "FPAE", u16 version, u8 architecture, u32 n_features, u32 n_classes,
// u32 origin client, u32 origin slot, u64 training seed, u64 parameter byte
// length, f32 parameters; all little-endian.
std::vector<uint8_t> serialize_predictor(const Predictor& p);
Predictor deserialize_predictor(std::span<const uint8_t> bytes);

/// Deterministic mini-batch sequence: indices reshuffled once per epoch with
/// a seed derived from (seed, epoch), consumed batch by batch.
class BatchStream {
  public:
    BatchStream(uint64_t seed, int n_samples, int batch_size);

    /// Next batch of indices (last batch of an epoch may be short).
    const std::vector<int>& next();

  private:
    void reshuffle();
    uint64_t seed_;
    int n_;
    int batch_size_;
    int epoch_ = 0;
    size_t pos_ = 0;
    std::vector<int> order_;
    std::vector<int> batch_;
};

/// Plain SGD for `n_steps` mini-batches (no early stopping); uses the same
/// init and batch stream as fedavg_train, so a one-client FedAvg run is
/// bit-identical to this.
Predictor local_sgd(const LearnerSpec& spec, const LabeledSet& train_set, int n_steps);

/// Synchronous FedAvg: per round, broadcast the global parameters, every
/// client takes one local SGD step on one mini-batch, and the global
/// parameters become the train-size-weighted average of the client results.
Predictor fedavg_train(const std::vector<LabeledSet>& client_train_sets,
                       const std::vector<LearnerSpec>& per_client_specs, int rounds);
Predictor fedavg_train(const std::vector<LabeledSet>& client_train_sets,
                       const LearnerSpec& shared_spec, int rounds);

}  // namespace fedpae::learners
