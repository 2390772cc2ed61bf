#include "fedpae/moo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace fedpae::moo {

int popcount(const Mask& mask) {
    int c = 0;
    for (uint8_t b : mask) c += b ? 1 : 0;
    return c;
}

std::string mask_to_string(const Mask& mask) {
    std::string s(mask.size(), '0');
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) s[i] = '1';
    return s;
}

Mask mask_from_string(const std::string& s) {
    Mask m(s.size(), 0);
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '1')
            m[i] = 1;
        else if (s[i] != '0')
            throw InputError("mask string must contain only 0 and 1");
    }
    return m;
}

void NsgaConfig::validate() const {
    if (population_size < 2 || population_size % 2 != 0)
        throw ConfigError("nsga config: population_size must be even and >= 2");
    if (generations < 1) throw ConfigError("nsga config: generations must be >= 1");
    if (crossover_rate < 0.0 || crossover_rate > 1.0)
        throw ConfigError("nsga config: crossover_rate must be in [0,1]");
    if (mutation_rate > 1.0) throw ConfigError("nsga config: mutation_rate must be <= 1");
}

bool ParetoFront::contains(const Mask& mask) const {
    for (const auto& e : entries)
        if (e.chromosome.mask == mask) return true;
    return false;
}

bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
    if (std::isnan(a.strength) || std::isnan(a.diversity) || std::isnan(b.strength) ||
        std::isnan(b.diversity))
        throw InputError("dominates: NaN objective");
    bool ge = a.strength >= b.strength && a.diversity >= b.diversity;
    bool gt = a.strength > b.strength || a.diversity > b.diversity;
    return ge && gt;
}

std::vector<std::vector<int>> fast_nondominated_sort(
    const std::vector<ObjectiveVector>& objectives) {
    const int n = static_cast<int>(objectives.size());
    if (n == 0) return {};

    std::vector<std::vector<int>> dominated(n);  // indices each point dominates
    std::vector<int> dom_count(n, 0);            // how many points dominate i

    for (int p = 0; p < n; ++p) {
        for (int q = 0; q < n; ++q) {
            if (p == q) continue;
            if (dominates(objectives[p], objectives[q]))
                dominated[p].push_back(q);
            else if (dominates(objectives[q], objectives[p]))
                dom_count[p] += 1;
        }
    }

    std::vector<std::vector<int>> fronts(1);
    for (int p = 0; p < n; ++p)
        if (dom_count[p] == 0) fronts[0].push_back(p);

    size_t i = 0;
    while (!fronts[i].empty()) {
        std::vector<int> next;
        for (int p : fronts[i]) {
            for (int q : dominated[p]) {
                if (--dom_count[q] == 0) next.push_back(q);
            }
        }
        ++i;
        fronts.push_back(std::move(next));
    }
    fronts.pop_back();
    return fronts;
}

std::vector<double> crowding_distance(const std::vector<ObjectiveVector>& front) {
    const size_t n = front.size();
    if (n == 0) throw InputError("crowding_distance: empty front");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(n, 0.0);

    auto accumulate_objective = [&](auto get) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return get(front[a]) < get(front[b]); });
        dist[order.front()] = inf;
        dist[order.back()] = inf;
        double range = get(front[order.back()]) - get(front[order.front()]);
        if (range <= 0.0) return;  // zero range contributes nothing
        for (size_t j = 1; j + 1 < n; ++j) {
            if (std::isinf(dist[order[j]])) continue;
            dist[order[j]] += (get(front[order[j + 1]]) - get(front[order[j - 1]])) / range;
        }
    };
    accumulate_objective([](const ObjectiveVector& o) { return o.strength; });
    accumulate_objective([](const ObjectiveVector& o) { return o.diversity; });
    return dist;
}

Mask repair_cardinality(Mask mask, int k, Rng& rng) {
    const int n = static_cast<int>(mask.size());
    if (n < k) throw InputError("repair_cardinality: bench smaller than cardinality");
    int count = popcount(mask);
    if (count > k) {
        std::vector<int> set_bits;
        for (int i = 0; i < n; ++i)
            if (mask[i]) set_bits.push_back(i);
        while (count > k) {
            int pick = rng.uniform_int(static_cast<int>(set_bits.size()));
            mask[set_bits[pick]] = 0;
            set_bits.erase(set_bits.begin() + pick);
            --count;
        }
    } else if (count < k) {
        std::vector<int> clear_bits;
        for (int i = 0; i < n; ++i)
            if (!mask[i]) clear_bits.push_back(i);
        while (count < k) {
            int pick = rng.uniform_int(static_cast<int>(clear_bits.size()));
            mask[clear_bits[pick]] = 1;
            clear_bits.erase(clear_bits.begin() + pick);
            ++count;
        }
    }
    return mask;
}

namespace {

Mask random_cardinality_mask(int bench_size, int k, Rng& rng) {
    // Partial Fisher-Yates over slot indices; first k become set bits.
    std::vector<int> idx(bench_size);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
        int j = i + rng.uniform_int(bench_size - i);
        std::swap(idx[i], idx[j]);
    }
    Mask m(bench_size, 0);
    for (int i = 0; i < k; ++i) m[idx[i]] = 1;
    return m;
}

struct MemoEvaluator {
    const EvaluateFn& fn;
    std::unordered_map<std::string, ObjectiveVector> memo;

    ObjectiveVector operator()(const Mask& mask) {
        std::string key = mask_to_string(mask);
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        ObjectiveVector v = fn(mask);
        if (std::isnan(v.strength) || std::isnan(v.diversity))
            throw InputError("evolve: evaluate returned NaN for mask " + key);
        memo.emplace(std::move(key), v);
        return v;
    }
};

}  // namespace

ParetoFront evolve(const NsgaConfig& config, int bench_size, int k, const EvaluateFn& evaluate,
                   const std::vector<Mask>& seeds) {
    config.validate();
    if (bench_size < 1) throw InputError("evolve: bench_size must be positive");
    if (k < 1 || k > bench_size) throw InputError("evolve: cardinality k out of range");
    if (static_cast<int>(seeds.size()) > config.population_size)
        throw InputError("evolve: more seeds than population slots");
    for (const auto& s : seeds) {
        if (static_cast<int>(s.size()) != bench_size)
            throw InputError("evolve: seed mask length mismatch");
        if (popcount(s) != k) throw InputError("evolve: seed mask cardinality mismatch");
    }

    const int P = config.population_size;
    const double mut_rate =
        config.mutation_rate >= 0.0 ? config.mutation_rate : 1.0 / bench_size;

    Rng rng(config.seed);
    MemoEvaluator eval{evaluate, {}};

    std::vector<Mask> pop = seeds;
    pop.reserve(2 * P);
    while (static_cast<int>(pop.size()) < P)
        pop.push_back(random_cardinality_mask(bench_size, k, rng));

    std::vector<ObjectiveVector> objs;
    objs.reserve(2 * P);
    for (const auto& m : pop) objs.push_back(eval(m));

    auto assert_cardinality = [&](const Mask& m) {
        if (popcount(m) != k)
            throw InternalError("evolve: chromosome lost cardinality " + mask_to_string(m));
    };

    for (int gen = 0; gen < config.generations; ++gen) {
        // Rank and per-front crowding over the current population.
        auto fronts = fast_nondominated_sort(objs);
        std::vector<int> rank(pop.size(), 0);
        std::vector<double> crowd(pop.size(), 0.0);
        for (size_t f = 0; f < fronts.size(); ++f) {
            std::vector<ObjectiveVector> fo;
            fo.reserve(fronts[f].size());
            for (int idx : fronts[f]) {
                rank[idx] = static_cast<int>(f);
                fo.push_back(objs[idx]);
            }
            auto cd = crowding_distance(fo);
            for (size_t j = 0; j < fronts[f].size(); ++j) crowd[fronts[f][j]] = cd[j];
        }

        auto tournament = [&]() -> int {
            int a = rng.uniform_int(P);
            int b = rng.uniform_int(P);
            if (rank[a] != rank[b]) return rank[a] < rank[b] ? a : b;
            if (crowd[a] != crowd[b]) return crowd[a] > crowd[b] ? a : b;
            return a;
        };

        // Children (lambda = P).
        std::vector<Mask> children;
        children.reserve(P);
        for (int c = 0; c < P; ++c) {
            const Mask& p1 = pop[tournament()];
            const Mask& p2 = pop[tournament()];
            Mask child(bench_size, 0);
            if (rng.uniform() < config.crossover_rate) {
                for (int i = 0; i < bench_size; ++i)
                    child[i] = rng.uniform() < 0.5 ? p1[i] : p2[i];
            } else {
                child = p1;
            }
            for (int i = 0; i < bench_size; ++i)
                if (rng.uniform() < mut_rate) child[i] ^= 1;
            child = repair_cardinality(std::move(child), k, rng);
            assert_cardinality(child);
            children.push_back(std::move(child));
        }

        // (mu + lambda) survival by (rank, crowding) over parents + children.
        std::vector<Mask> pool = std::move(pop);
        pool.insert(pool.end(), std::make_move_iterator(children.begin()),
                    std::make_move_iterator(children.end()));
        std::vector<ObjectiveVector> pool_objs = std::move(objs);
        for (size_t i = P; i < pool.size(); ++i) pool_objs.push_back(eval(pool[i]));

        auto pool_fronts = fast_nondominated_sort(pool_objs);
        pop.clear();
        objs.clear();
        for (const auto& front : pool_fronts) {
            if (static_cast<int>(pop.size()) == P) break;
            if (static_cast<int>(pop.size() + front.size()) <= P) {
                for (int idx : front) {
                    pop.push_back(pool[idx]);
                    objs.push_back(pool_objs[idx]);
                }
                continue;
            }
            // Truncate this front by descending crowding, stable on index.
            std::vector<ObjectiveVector> fo;
            fo.reserve(front.size());
            for (int idx : front) fo.push_back(pool_objs[idx]);
            auto cd = crowding_distance(fo);
            std::vector<int> order(front.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return cd[a] > cd[b]; });
            for (int o : order) {
                if (static_cast<int>(pop.size()) == P) break;
                pop.push_back(pool[front[o]]);
                objs.push_back(pool_objs[front[o]]);
            }
            break;
        }
    }

    // Deduplicated non-dominated front of the final population.
    auto final_fronts = fast_nondominated_sort(objs);
    ParetoFront result;
    if (!final_fronts.empty()) {
        for (int idx : final_fronts[0]) {
            if (result.contains(pop[idx])) continue;
            result.entries.push_back({Chromosome{pop[idx], k}, objs[idx]});
        }
    }
    std::stable_sort(result.entries.begin(), result.entries.end(),
                     [](const ParetoEntry& a, const ParetoEntry& b) {
                         if (a.objectives.strength != b.objectives.strength)
                             return a.objectives.strength > b.objectives.strength;
                         if (a.objectives.diversity != b.objectives.diversity)
                             return a.objectives.diversity > b.objectives.diversity;
                         return mask_to_string(a.chromosome.mask) <
                                mask_to_string(b.chromosome.mask);
                     });

    // The returned front must be mutually non-dominated.
    for (size_t a = 0; a < result.entries.size(); ++a)
        for (size_t b = 0; b < result.entries.size(); ++b)
            if (a != b && dominates(result.entries[a].objectives, result.entries[b].objectives))
                throw InternalError("evolve: returned front is not mutually non-dominated");
    return result;
}

}  // namespace fedpae::moo
