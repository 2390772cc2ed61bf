#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fedpae/common.hpp"

namespace fedpae::moo {

/// Inclusion mask over a model bench, one 0/1 byte per slot.
using Mask = std::vector<uint8_t>;

int popcount(const Mask& mask);
std::string mask_to_string(const Mask& mask);
Mask mask_from_string(const std::string& s);

/// Fixed-cardinality binary chromosome: exactly `cardinality` set bits.
struct Chromosome {
    Mask mask;
    int cardinality = 0;
};

/// Both objectives are maximized.
struct ObjectiveVector {
    double strength = 0.0;
    double diversity = 0.0;
};

struct NsgaConfig {
    int population_size = 100;
    int generations = 100;
    double crossover_rate = 0.9;
    double mutation_rate = -1.0;  // < 0 means 1 / bench_size
    uint64_t seed = 0;

    void validate() const;
};

struct ParetoEntry {
    Chromosome chromosome;
    ObjectiveVector objectives;
};

/// Mutually non-dominated entries, deduplicated by mask, sorted by
/// descending strength (then diversity, then mask) for stable output.
struct ParetoFront {
    std::vector<ParetoEntry> entries;

    size_t size() const { return entries.size(); }
    bool contains(const Mask& mask) const;
};

/// True iff `a` is at least as good as `b` in both objectives and strictly
/// better in at least one.
bool dominates(const ObjectiveVector& a, const ObjectiveVector& b);

/// Deb-style fast non-dominated sort: front 0 is the maximal non-dominated
/// set, each later front is non-dominated once earlier fronts are removed.
std::vector<std::vector<int>> fast_nondominated_sort(const std::vector<ObjectiveVector>& objectives);

/// Crowding distances for one front: per objective, boundary entries get
/// +infinity and interior entries the normalized gap between neighbours; a
/// zero objective range contributes 0.
std::vector<double> crowding_distance(const std::vector<ObjectiveVector>& front);

/// Force popcount(mask) == k by clearing or setting uniformly-random bits.
Mask repair_cardinality(Mask mask, int k, Rng& rng);

using EvaluateFn = std::function<ObjectiveVector(const Mask&)>;

/// NSGA-II over cardinality-k masks of length bench_size: seeds plus random
/// masks form the initial population; each generation applies binary
/// tournament on (rank, crowding), uniform crossover, per-bit mutation,
/// cardinality repair, and elitist (mu+lambda) survival. Returns the
/// deduplicated non-dominated front of the final population. Evaluations are
/// memoized by mask, and the whole run is deterministic for a fixed seed.
ParetoFront evolve(const NsgaConfig& config, int bench_size, int k, const EvaluateFn& evaluate,
                   const std::vector<Mask>& seeds);

}  // namespace fedpae::moo
