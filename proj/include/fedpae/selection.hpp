#pragma once

#include <compare>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedpae/common.hpp"
#include "fedpae/data.hpp"
#include "fedpae/learners.hpp"
#include "fedpae/moo.hpp"

namespace fedpae::selection {

using data::LabeledSet;

/// Globally unique model identity: origin client, bench slot, and a content
/// hash of the serialized predictor.
struct ModelId {
    uint32_t origin_client = 0;
    uint32_t slot = 0;
    uint64_t content_hash = 0;

    auto operator<=>(const ModelId&) const = default;
    std::string str() const;
};

ModelId model_id_of(const learners::Predictor& p);

struct ModelDescriptor {
    ModelId id;
    learners::Architecture architecture = learners::Architecture::logistic_regression;
    uint32_t origin_client = 0;
    bool is_local = false;
};

/// Flattened per-sample probability vectors of one model on the owner's
/// validation set: n_val * n_classes floats, sample-major.
using PredictionColumn = std::vector<float>;

enum class StorageMode : uint8_t { full_models = 0, predictions_only = 1 };

struct BenchEntry {
    ModelDescriptor descriptor;
    std::optional<learners::Predictor> model;   // full_models mode
    std::optional<PredictionColumn> column;     // predictions_only mode
};

/// A client's repository of local and peer models (or their stored
/// prediction columns when storage-constrained).
struct ModelBench {
    int owner = 0;
    StorageMode storage_mode = StorageMode::full_models;
    std::vector<BenchEntry> entries;

    size_t size() const { return entries.size(); }
    void validate() const;
};

/// Per-model probability columns over a fixed validation set, in bench
/// order, plus the validation labels. Member accuracies are precomputed;
/// pairwise diversities fill in lazily.
struct PredictionMatrix {
    int n_val = 0;
    int n_classes = 0;
    std::vector<ModelDescriptor> models;
    std::vector<PredictionColumn> columns;
    std::vector<int> labels;
    std::vector<double> member_accuracy;

    size_t bench_size() const { return columns.size(); }
    void finalize();  // validates and computes member accuracies
};

PredictionColumn predict_column(const learners::Predictor& p, const LabeledSet& val);

PredictionMatrix materialize_predictions(const ModelBench& bench, const LabeledSet& val);

/// Mean member validation accuracy of the selected models.
double strength(const moo::Mask& mask, const PredictionMatrix& matrix);

/// Degree of independence of two probability columns: (1 - rho) / 2 with rho
/// the Pearson correlation of the flattened columns. Both columns constant
/// and equal -> 0; one constant otherwise -> 0.5.
double pairwise_diversity(const PredictionColumn& a, const PredictionColumn& b);

/// Mean pairwise diversity over all selected pairs; singletons return 0.
double diversity(const moo::Mask& mask, const PredictionMatrix& matrix);

enum class VotingRule : uint8_t { soft = 0, hard = 1 };

/// Combined prediction per validation sample: soft voting averages the
/// selected probability vectors, hard voting counts member argmax votes;
/// ties always resolve to the lowest class index.
std::vector<int> ensemble_predict(const moo::Mask& mask, const PredictionMatrix& matrix,
                                  VotingRule rule = VotingRule::soft);

double overall_accuracy(const moo::Mask& mask, const PredictionMatrix& matrix,
                        VotingRule rule = VotingRule::soft);

using PairwiseDiversityFn = double (*)(const PredictionColumn&, const PredictionColumn&);

struct SelectionOptions {
    VotingRule voting = VotingRule::soft;
    // Pluggable pairwise measure; swap the function to change the diversity
    // objective.
    PairwiseDiversityFn pairwise = &pairwise_diversity;
};

struct EnsembleSelection {
    moo::Chromosome chosen_mask;
    std::vector<ModelId> chosen_model_ids;
    double val_accuracy = 0.0;
    double local_fraction = 0.0;
    moo::ParetoFront pareto_front;
    int pf_size = 0;
    // Safeguard bookkeeping: the local-preference seed and its accuracy.
    moo::Mask local_seed_mask;
    double local_seed_accuracy = 0.0;
};

/// Full selection procedure: run NSGA-II on (strength, diversity) with the
/// local-preference mask seeded into the population, then pick the highest
/// overall validation accuracy over the Pareto front plus the seeds (ties:
/// higher local fraction, then lexicographically smallest mask). The seed
/// comparison guarantees the result is never worse on validation than the
/// local-preference ensemble.
EnsembleSelection select_ensemble(const ModelBench& bench, const LabeledSet& val, int k,
                                  const moo::NsgaConfig& nsga,
                                  const SelectionOptions& opts = {});
EnsembleSelection select_from_matrix(const PredictionMatrix& matrix, int k,
                                     const moo::NsgaConfig& nsga,
                                     const SelectionOptions& opts = {});

/// Enumerates every cardinality-k mask and returns the best by overall
/// accuracy (ties: higher local fraction, then lexicographically smallest).
/// Refuses when C(bench_size, k) exceeds 10^6.
std::pair<moo::Mask, double> exhaustive_oracle(const PredictionMatrix& matrix, int k,
                                               VotingRule rule = VotingRule::soft);

double local_fraction_of(const moo::Mask& mask, const PredictionMatrix& matrix);

// Matrix binary format "FPBM" and JSON exports (selection result and
// Fig-3-style Pareto front lines with per-entry validation accuracy).
void save_matrix(const PredictionMatrix& matrix, const std::string& path);
PredictionMatrix load_matrix(const std::string& path);
void save_selection_json(const EnsembleSelection& sel, const std::string& path);
void save_pareto_jsonl(const EnsembleSelection& sel, const PredictionMatrix& matrix,
                       const std::string& path);

}  // namespace fedpae::selection
