#include "fedpae/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace fedpae::selection {

std::string ModelId::str() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "c%u_s%u_%016llx", origin_client, slot,
                  static_cast<unsigned long long>(content_hash));
    return buf;
}

ModelId model_id_of(const learners::Predictor& p) {
    auto bytes = learners::serialize_predictor(p);
    std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    return ModelId{p.origin.client_id, p.origin.slot, fnv1a64(view)};
}

void ModelBench::validate() const {
    bool any_local = false;
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (e.descriptor.is_local != (e.descriptor.origin_client == static_cast<uint32_t>(owner)))
            throw InputError("bench: is_local flag inconsistent with origin for " +
                             e.descriptor.id.str());
        any_local |= e.descriptor.is_local;
        for (size_t j = i + 1; j < entries.size(); ++j)
            if (entries[j].descriptor.id == e.descriptor.id)
                throw InputError("bench: duplicate model id " + e.descriptor.id.str());
        if (storage_mode == StorageMode::full_models && !e.model.has_value())
            throw InputError("bench: missing predictor for " + e.descriptor.id.str());
        if (storage_mode == StorageMode::predictions_only && !e.column.has_value())
            throw InputError("bench: missing prediction column for " + e.descriptor.id.str());
    }
    if (!any_local) throw InputError("bench: no locally trained entry");
}

static int argmax_lowest(const float* p, int n) {
    int best = 0;
    for (int c = 1; c < n; ++c)
        if (p[c] > p[best]) best = c;
    return best;
}

void PredictionMatrix::finalize() {
    if (columns.size() != models.size())
        throw InternalError("prediction matrix: column/descriptor count mismatch");
    if (static_cast<int>(labels.size()) != n_val)
        throw InternalError("prediction matrix: label count mismatch");
    const size_t expect = static_cast<size_t>(n_val) * n_classes;
    member_accuracy.assign(columns.size(), 0.0);
    for (size_t j = 0; j < columns.size(); ++j) {
        if (columns[j].size() != expect)
            throw IntegrityError("prediction matrix: column length mismatch for model " +
                                 models[j].id.str());
        for (int i = 0; i < n_val; ++i) {
            const float* p = columns[j].data() + static_cast<size_t>(i) * n_classes;
            double sum = 0.0;
            for (int c = 0; c < n_classes; ++c) sum += p[c];
            if (std::abs(sum - 1.0) > 1e-6)
                throw IntegrityError("prediction matrix: unnormalized probabilities for model " +
                                     models[j].id.str());
            if (argmax_lowest(p, n_classes) == labels[i]) member_accuracy[j] += 1.0;
        }
        member_accuracy[j] /= n_val;
    }
}

PredictionColumn predict_column(const learners::Predictor& p, const LabeledSet& val) {
    PredictionColumn col;
    col.reserve(val.size() * val.n_classes);
    for (size_t i = 0; i < val.size(); ++i) {
        auto proba = learners::predict_proba(p, val.x.row_span(i));
        for (double v : proba) col.push_back(static_cast<float>(v));
    }
    return col;
}

PredictionMatrix materialize_predictions(const ModelBench& bench, const LabeledSet& val) {
    bench.validate();
    PredictionMatrix m;
    m.n_val = static_cast<int>(val.size());
    m.n_classes = val.n_classes;
    m.labels = val.y;
    const size_t expect = static_cast<size_t>(m.n_val) * m.n_classes;
    for (const auto& e : bench.entries) {
        m.models.push_back(e.descriptor);
        if (e.column.has_value()) {
            if (e.column->size() != expect)
                throw IntegrityError("materialize: stored column length mismatch for model " +
                                     e.descriptor.id.str());
            m.columns.push_back(*e.column);
        } else if (e.model.has_value()) {
            m.columns.push_back(predict_column(*e.model, val));
        } else {
            throw IntegrityError("materialize: entry has neither model nor column: " +
                                 e.descriptor.id.str());
        }
    }
    m.finalize();
    return m;
}

static std::vector<int> selected_indices(const moo::Mask& mask, size_t bench_size) {
    if (mask.size() != bench_size) throw InputError("mask length does not match bench size");
    std::vector<int> idx;
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

double strength(const moo::Mask& mask, const PredictionMatrix& matrix) {
    auto idx = selected_indices(mask, matrix.bench_size());
    if (idx.empty()) throw InputError("strength: empty mask");
    double sum = 0.0;
    for (int j : idx) sum += matrix.member_accuracy[j];
    return sum / static_cast<double>(idx.size());
}

double pairwise_diversity(const PredictionColumn& a, const PredictionColumn& b) {
    if (a.size() != b.size()) throw InputError("pairwise_diversity: column shape mismatch");
    if (a.empty()) throw InputError("pairwise_diversity: empty columns");
    const size_t n = a.size();
    double mean_a = 0.0, mean_b = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double da = a[i] - mean_a;
        double db = b[i] - mean_b;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa == 0.0 && sbb == 0.0) return std::equal(a.begin(), a.end(), b.begin()) ? 0.0 : 0.5;
    if (saa == 0.0 || sbb == 0.0) return 0.5;
    double rho = sab / std::sqrt(saa * sbb);
    rho = std::clamp(rho, -1.0, 1.0);
    return (1.0 - rho) / 2.0;
}

double diversity(const moo::Mask& mask, const PredictionMatrix& matrix) {
    auto idx = selected_indices(mask, matrix.bench_size());
    if (idx.empty()) throw InputError("diversity: empty mask");
    if (idx.size() == 1) return 0.0;
    double sum = 0.0;
    size_t pairs = 0;
    for (size_t a = 0; a < idx.size(); ++a)
        for (size_t b = a + 1; b < idx.size(); ++b, ++pairs)
            sum += pairwise_diversity(matrix.columns[idx[a]], matrix.columns[idx[b]]);
    return sum / static_cast<double>(pairs);
}

std::vector<int> ensemble_predict(const moo::Mask& mask, const PredictionMatrix& matrix,
                                  VotingRule rule) {
    auto idx = selected_indices(mask, matrix.bench_size());
    if (idx.empty()) throw InputError("ensemble_predict: empty mask");
    std::vector<int> out(matrix.n_val, 0);
    std::vector<double> acc(matrix.n_classes);
    for (int i = 0; i < matrix.n_val; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int j : idx) {
            const float* p = matrix.columns[j].data() + static_cast<size_t>(i) * matrix.n_classes;
            if (rule == VotingRule::soft) {
                for (int c = 0; c < matrix.n_classes; ++c) acc[c] += p[c];
            } else {
                acc[argmax_lowest(p, matrix.n_classes)] += 1.0;
            }
        }
        int best = 0;
        for (int c = 1; c < matrix.n_classes; ++c)
            if (acc[c] > acc[best]) best = c;
        out[i] = best;
    }
    return out;
}

double overall_accuracy(const moo::Mask& mask, const PredictionMatrix& matrix, VotingRule rule) {
    auto pred = ensemble_predict(mask, matrix, rule);
    size_t correct = 0;
    for (int i = 0; i < matrix.n_val; ++i)
        if (pred[i] == matrix.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(matrix.n_val);
}

double local_fraction_of(const moo::Mask& mask, const PredictionMatrix& matrix) {
    auto idx = selected_indices(mask, matrix.bench_size());
    if (idx.empty()) return 0.0;
    size_t local = 0;
    for (int j : idx)
        if (matrix.models[j].is_local) ++local;
    return static_cast<double>(local) / static_cast<double>(idx.size());
}

namespace {

// Lazily filled symmetric pairwise-diversity cache for objective evaluation.
struct PairCache {
    const PredictionMatrix& matrix;
    PairwiseDiversityFn fn;
    std::vector<double> value;
    std::vector<uint8_t> known;

    explicit PairCache(const PredictionMatrix& m, PairwiseDiversityFn f)
        : matrix(m),
          fn(f),
          value(m.bench_size() * m.bench_size(), 0.0),
          known(m.bench_size() * m.bench_size(), 0) {}

    double at(int a, int b) {
        size_t key = static_cast<size_t>(a) * matrix.bench_size() + b;
        if (!known[key]) {
            double d = fn(matrix.columns[a], matrix.columns[b]);
            size_t mirror = static_cast<size_t>(b) * matrix.bench_size() + a;
            value[key] = value[mirror] = d;
            known[key] = known[mirror] = 1;
        }
        return value[key];
    }
};

moo::Mask local_preference_mask(const PredictionMatrix& matrix, int k) {
    // Rank locals and peers separately by (validation accuracy desc, index
    // asc); take up to k locals, pad with the best peers.
    std::vector<int> locals, peers;
    for (size_t j = 0; j < matrix.bench_size(); ++j)
        (matrix.models[j].is_local ? locals : peers).push_back(static_cast<int>(j));
    auto by_acc = [&](int a, int b) {
        if (matrix.member_accuracy[a] != matrix.member_accuracy[b])
            return matrix.member_accuracy[a] > matrix.member_accuracy[b];
        return a < b;
    };
    std::sort(locals.begin(), locals.end(), by_acc);
    std::sort(peers.begin(), peers.end(), by_acc);

    moo::Mask mask(matrix.bench_size(), 0);
    int taken = 0;
    for (int j : locals) {
        if (taken == k) break;
        mask[j] = 1;
        ++taken;
    }
    for (int j : peers) {
        if (taken == k) break;
        mask[j] = 1;
        ++taken;
    }
    return mask;
}

struct Candidate {
    moo::Mask mask;
    double accuracy = 0.0;
    double local_fraction = 0.0;
};

bool candidate_better(const Candidate& a, const Candidate& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    if (a.local_fraction != b.local_fraction) return a.local_fraction > b.local_fraction;
    return moo::mask_to_string(a.mask) < moo::mask_to_string(b.mask);
}

}  // namespace

EnsembleSelection select_from_matrix(const PredictionMatrix& matrix, int k,
                                     const moo::NsgaConfig& nsga, const SelectionOptions& opts) {
    const int bench_size = static_cast<int>(matrix.bench_size());
    if (bench_size < k) throw InputError("select: bench smaller than ensemble size k");
    if (k < 1) throw InputError("select: k must be >= 1");

    PairCache pairs(matrix, opts.pairwise);
    auto evaluate = [&](const moo::Mask& mask) -> moo::ObjectiveVector {
        auto idx = selected_indices(mask, matrix.bench_size());
        double s = 0.0;
        for (int j : idx) s += matrix.member_accuracy[j];
        s /= static_cast<double>(idx.size());
        double d = 0.0;
        if (idx.size() > 1) {
            size_t np = 0;
            for (size_t a = 0; a < idx.size(); ++a)
                for (size_t b = a + 1; b < idx.size(); ++b, ++np) d += pairs.at(idx[a], idx[b]);
            d /= static_cast<double>(np);
        }
        return {s, d};
    };

    moo::Mask seed = local_preference_mask(matrix, k);
    auto front = moo::evolve(nsga, bench_size, k, evaluate, {seed});

    // Final pick over Pareto entries plus the seed.
    std::vector<Candidate> candidates;
    candidates.reserve(front.size() + 1);
    for (const auto& e : front.entries)
        candidates.push_back({e.chromosome.mask,
                              overall_accuracy(e.chromosome.mask, matrix, opts.voting),
                              local_fraction_of(e.chromosome.mask, matrix)});
    Candidate seed_candidate{seed, overall_accuracy(seed, matrix, opts.voting),
                             local_fraction_of(seed, matrix)};
    candidates.push_back(seed_candidate);

    const Candidate* best = &candidates.front();
    for (const auto& c : candidates)
        if (candidate_better(c, *best)) best = &c;

    // Report the non-dominated set over front + seed so the chosen mask is
    // on it whenever its objectives are not dominated.
    moo::ParetoFront reported = front;
    if (!reported.contains(seed)) {
        auto seed_obj = evaluate(seed);
        bool dominated = false;
        for (const auto& e : reported.entries)
            if (moo::dominates(e.objectives, seed_obj)) dominated = true;
        if (!dominated) {
            std::erase_if(reported.entries, [&](const moo::ParetoEntry& e) {
                return moo::dominates(seed_obj, e.objectives);
            });
            reported.entries.push_back({moo::Chromosome{seed, k}, seed_obj});
        }
    }

    EnsembleSelection sel;
    sel.chosen_mask = moo::Chromosome{best->mask, k};
    sel.val_accuracy = best->accuracy;
    sel.local_fraction = best->local_fraction;
    sel.pareto_front = std::move(reported);
    sel.pf_size = static_cast<int>(sel.pareto_front.size());
    sel.local_seed_mask = seed;
    sel.local_seed_accuracy = seed_candidate.accuracy;
    for (size_t j = 0; j < best->mask.size(); ++j)
        if (best->mask[j]) sel.chosen_model_ids.push_back(matrix.models[j].id);

    if (sel.val_accuracy < sel.local_seed_accuracy)
        throw InternalError("select: safeguard violated (chosen worse than local preference)");
    return sel;
}

EnsembleSelection select_ensemble(const ModelBench& bench, const LabeledSet& val, int k,
                                  const moo::NsgaConfig& nsga, const SelectionOptions& opts) {
    auto matrix = materialize_predictions(bench, val);
    return select_from_matrix(matrix, k, nsga, opts);
}

std::pair<moo::Mask, double> exhaustive_oracle(const PredictionMatrix& matrix, int k,
                                               VotingRule rule) {
    const int n = static_cast<int>(matrix.bench_size());
    if (k < 1 || k > n) throw InputError("oracle: cardinality out of range");

    double combos = 1.0;
    for (int i = 0; i < k; ++i) combos = combos * (n - i) / (i + 1);
    if (combos > 1e6) throw InputError("oracle: combinatorial bound exceeded (C(n,k) > 1e6)");

    std::vector<int> comb(k);
    std::iota(comb.begin(), comb.end(), 0);
    Candidate best;
    bool first = true;
    for (;;) {
        moo::Mask mask(n, 0);
        for (int j : comb) mask[j] = 1;
        Candidate c{std::move(mask), 0.0, 0.0};
        c.accuracy = overall_accuracy(c.mask, matrix, rule);
        c.local_fraction = local_fraction_of(c.mask, matrix);
        if (first || candidate_better(c, best)) {
            best = std::move(c);
            first = false;
        }
        // next combination
        int i = k - 1;
        while (i >= 0 && comb[i] == n - k + i) --i;
        if (i < 0) break;
        comb[i] += 1;
        for (int j = i + 1; j < k; ++j) comb[j] = comb[j - 1] + 1;
    }
    return {best.mask, best.accuracy};
}

// ---- persistence ----

static constexpr char kMatrixMagic[4] = {'F', 'P', 'B', 'M'};

void save_matrix(const PredictionMatrix& matrix, const std::string& path) {
    std::vector<uint8_t> bytes;
    bytes.insert(bytes.end(), kMatrixMagic, kMatrixMagic + 4);
    put_u32(bytes, static_cast<uint32_t>(matrix.n_val));
    put_u32(bytes, static_cast<uint32_t>(matrix.bench_size()));
    put_u32(bytes, static_cast<uint32_t>(matrix.n_classes));
    for (int y : matrix.labels) put_u16(bytes, static_cast<uint16_t>(y));
    for (size_t j = 0; j < matrix.bench_size(); ++j) {
        const auto& d = matrix.models[j];
        put_u32(bytes, d.id.origin_client);
        put_u32(bytes, d.id.slot);
        put_u64(bytes, d.id.content_hash);
        put_u8(bytes, static_cast<uint8_t>(d.architecture));
        put_u8(bytes, d.is_local ? 1 : 0);
        for (float v : matrix.columns[j]) put_f32(bytes, v);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("save_matrix: cannot open " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("save_matrix: write failed for " + path);
}

PredictionMatrix load_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("load_matrix: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    ByteReader r({bytes.data(), bytes.size()});
    char magic[4];
    r.raw(reinterpret_cast<uint8_t*>(magic), 4);
    if (std::memcmp(magic, kMatrixMagic, 4) != 0) throw InputError("load_matrix: bad magic");
    PredictionMatrix m;
    m.n_val = static_cast<int>(r.u32());
    uint32_t bench = r.u32();
    m.n_classes = static_cast<int>(r.u32());
    m.labels.resize(m.n_val);
    for (auto& y : m.labels) y = r.u16();
    for (uint32_t j = 0; j < bench; ++j) {
        ModelDescriptor d;
        d.id.origin_client = r.u32();
        d.id.slot = r.u32();
        d.id.content_hash = r.u64();
        d.architecture = static_cast<learners::Architecture>(r.u8());
        d.is_local = r.u8() != 0;
        d.origin_client = d.id.origin_client;
        m.models.push_back(d);
        PredictionColumn col(static_cast<size_t>(m.n_val) * m.n_classes);
        for (auto& v : col) v = r.f32();
        m.columns.push_back(std::move(col));
    }
    m.finalize();
    return m;
}

void save_selection_json(const EnsembleSelection& sel, const std::string& path) {
    nlohmann::ordered_json j;
    j["mask"] = moo::mask_to_string(sel.chosen_mask.mask);
    j["model_ids"] = nlohmann::ordered_json::array();
    for (const auto& id : sel.chosen_model_ids) j["model_ids"].push_back(id.str());
    j["val_accuracy"] = round_sig(sel.val_accuracy);
    j["local_fraction"] = round_sig(sel.local_fraction);
    j["pf_size"] = sel.pf_size;
    std::ofstream out(path);
    if (!out) throw InputError("save_selection_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

void save_pareto_jsonl(const EnsembleSelection& sel, const PredictionMatrix& matrix,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("save_pareto_jsonl: cannot open " + path);
    for (const auto& e : sel.pareto_front.entries) {
        nlohmann::ordered_json j;
        j["mask"] = moo::mask_to_string(e.chromosome.mask);
        j["strength"] = round_sig(e.objectives.strength);
        j["diversity"] = round_sig(e.objectives.diversity);
        j["val_accuracy"] = round_sig(overall_accuracy(e.chromosome.mask, matrix));
        out << j.dump() << "\n";
    }
}

}  // namespace fedpae::selection
