#include "fedpae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace fedpae::data {

void Dataset::validate() const {
    if (features.rows != labels.size())
        throw InputError("dataset: feature rows and labels have different lengths");
    if (n_classes < 2) throw InputError("dataset: n_classes must be >= 2");
    for (int y : labels)
        if (y < 0 || y >= n_classes) throw InputError("dataset: label out of range");
}

static void validate_spec(const SyntheticSpec& s) {
    if (s.n_classes < 2) throw ConfigError("synthetic spec: n_classes must be >= 2");
    if (s.n_features < 1) throw ConfigError("synthetic spec: n_features must be positive");
    if (s.n_samples < s.n_classes)
        throw ConfigError("synthetic spec: n_samples must be >= n_classes");
    if (!(s.class_separation > 0.0))
        throw ConfigError("synthetic spec: class_separation must be > 0");
    if (s.noise_scale < 0.0) throw ConfigError("synthetic spec: noise_scale must be >= 0");
    if (s.n_features < s.n_classes - 1)
        throw ConfigError(
            "synthetic spec: n_features must be >= n_classes - 1 for equidistant class means");
}

// Class means: the k standard-basis points e_c, centered, expressed in the
// Helmert orthonormal basis of the sum-zero hyperplane. That embeds a regular
// simplex with side sqrt(2) into k-1 coordinates; scaling by sep/sqrt(2)
// makes every pairwise distance exactly class_separation.
static std::vector<std::vector<double>> class_means(int n_classes, int n_features, double sep) {
    std::vector<std::vector<double>> means(n_classes, std::vector<double>(n_features, 0.0));
    double scale = sep / std::sqrt(2.0);
    for (int j = 1; j < n_classes; ++j) {
        double denom = std::sqrt(static_cast<double>(j) * (j + 1));
        for (int c = 0; c < n_classes; ++c) {
            double h;  // Helmert vector j, component c
            if (c < j)
                h = 1.0 / denom;
            else if (c == j)
                h = -static_cast<double>(j) / denom;
            else
                h = 0.0;
            means[c][j - 1] = scale * h;
        }
    }
    return means;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    validate_spec(spec);
    Rng rng(spec.seed);

    auto means = class_means(spec.n_classes, spec.n_features, spec.class_separation);

    // Balanced class counts, remainder to the lowest class indices.
    std::vector<int> counts(spec.n_classes, spec.n_samples / spec.n_classes);
    for (int c = 0; c < spec.n_samples % spec.n_classes; ++c) counts[c] += 1;

    Dataset ds;
    ds.n_classes = spec.n_classes;
    ds.features = FloatMatrix(static_cast<size_t>(spec.n_samples), spec.n_features);
    ds.labels.resize(spec.n_samples);

    int row = 0;
    for (int c = 0; c < spec.n_classes; ++c) {
        for (int i = 0; i < counts[c]; ++i, ++row) {
            float* x = ds.features.row(row);
            for (int f = 0; f < spec.n_features; ++f) {
                double v = means[c][f];
                if (spec.noise_scale > 0.0) v += spec.noise_scale * rng.normal();
                x[f] = static_cast<float>(v);
            }
            ds.labels[row] = c;
        }
    }

    // Shuffle rows so class blocks are not contiguous.
    std::vector<int> perm(spec.n_samples);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Dataset shuffled;
    shuffled.n_classes = ds.n_classes;
    shuffled.features = FloatMatrix(ds.features.rows, ds.features.cols);
    shuffled.labels.resize(ds.labels.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        const float* src = ds.features.row(perm[i]);
        std::copy(src, src + ds.features.cols, shuffled.features.row(i));
        shuffled.labels[i] = ds.labels[perm[i]];
    }
    return shuffled;
}

std::vector<std::vector<int>> partition_dirichlet(const Dataset& dataset,
                                                  const PartitionSpec& spec) {
    dataset.validate();
    if (dataset.size() == 0) throw InputError("partition: dataset is empty");
    if (!(spec.alpha > 0.0)) throw ConfigError("partition: alpha must be > 0");
    if (spec.n_clients < 2) throw ConfigError("partition: n_clients must be >= 2");
    if (static_cast<size_t>(spec.n_clients) > dataset.size())
        throw InputError("partition: n_clients exceeds number of samples");
    double fsum = spec.split_fractions[0] + spec.split_fractions[1] + spec.split_fractions[2];
    if (std::abs(fsum - 1.0) > 1e-9)
        throw ConfigError("partition: split fractions must sum to 1");
    for (double f : spec.split_fractions)
        if (!(f > 0.0)) throw ConfigError("partition: split fractions must each be > 0");

    Rng rng(spec.seed);
    const int n = spec.n_clients;

    // Class-major index lists, shuffled before slicing.
    std::vector<std::vector<int>> by_class(dataset.n_classes);
    for (size_t i = 0; i < dataset.size(); ++i)
        by_class[dataset.labels[i]].push_back(static_cast<int>(i));

    std::vector<std::vector<int>> assignment(n);
    for (int c = 0; c < dataset.n_classes; ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        rng.shuffle(idx);

        // p ~ Dirichlet(alpha * 1_n) via normalized gammas.
        std::vector<double> p(n);
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            p[i] = rng.gamma(spec.alpha);
            total += p[i];
        }
        if (total <= 0.0) {
            std::fill(p.begin(), p.end(), 1.0 / n);
        } else {
            for (double& v : p) v /= total;
        }

        // Largest-remainder rounding of quota p_i * |idx|; remainder ties go
        // to the lower client id.
        const int m = static_cast<int>(idx.size());
        std::vector<int> take(n);
        std::vector<double> rem(n);
        int assigned = 0;
        for (int i = 0; i < n; ++i) {
            double quota = p[i] * m;
            take[i] = static_cast<int>(std::floor(quota));
            rem[i] = quota - take[i];
            assigned += take[i];
        }
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return rem[a] > rem[b]; });
        for (int r = 0; r < m - assigned; ++r) take[order[r]] += 1;

        int pos = 0;
        for (int i = 0; i < n; ++i) {
            for (int t = 0; t < take[i]; ++t) assignment[i].push_back(idx[pos++]);
        }
    }

    // Repair clients below the floor by transferring samples, one at a time,
    // from whichever client is currently largest (majority class first).
    int floor_n = std::max(1, spec.min_client_samples);
    for (int i = 0; i < n; ++i) {
        while (static_cast<int>(assignment[i].size()) < floor_n) {
            int donor = -1;
            size_t best = 0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                if (assignment[j].size() > best) {
                    best = assignment[j].size();
                    donor = j;
                }
            }
            if (donor < 0 || assignment[donor].size() <= 1)
                throw InputError("partition: cannot satisfy min_client_samples");
            // Majority class of the donor, ties to the lower class index.
            std::vector<int> hist = class_histogram(assignment[donor], dataset);
            int cls = static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin());
            auto it = std::find_if(assignment[donor].rbegin(), assignment[donor].rend(),
                                   [&](int s) { return dataset.labels[s] == cls; });
            int sample = *it;
            assignment[donor].erase(std::next(it).base());
            assignment[i].push_back(sample);
        }
    }
    return assignment;
}

// Largest-remainder apportionment of `count` against running targets.
// `ideal` may exceed the group in any coordinate; the result is nonnegative,
// sums to count, and deviates from ideal by less than one per split (ties go
// to the earlier split: train, then val, then test).
static std::array<int, 3> round_split(int count, const std::array<double, 3>& ideal) {
    std::array<int, 3> sizes{};
    int assigned = 0;
    for (int s = 0; s < 3; ++s) {
        sizes[s] = std::max(0, static_cast<int>(std::floor(ideal[s])));
        assigned += sizes[s];
    }
    auto deficit = [&](int s) { return ideal[s] - sizes[s]; };
    while (assigned < count) {
        int best = 0;
        for (int s = 1; s < 3; ++s)
            if (deficit(s) > deficit(best)) best = s;
        sizes[best] += 1;
        ++assigned;
    }
    while (assigned > count) {
        int worst = 2;
        for (int s = 1; s >= 0; --s)
            if (sizes[s] > 0 && (sizes[worst] == 0 || deficit(s) < deficit(worst))) worst = s;
        sizes[worst] -= 1;
        --assigned;
    }
    return sizes;
}

ClientShard split_shard(int client_id, const std::vector<int>& client_indices,
                        const std::array<double, 3>& fractions, const Dataset& dataset,
                        uint64_t seed) {
    if (client_indices.size() < 3)
        throw InputError("split_shard: need at least 3 samples to populate three splits");
    double fsum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError("split_shard: fractions must sum to 1");

    for (int i : client_indices)
        if (i < 0 || static_cast<size_t>(i) >= dataset.size())
            throw InputError("split_shard: index out of range");

    Rng rng(seed);

    // Stratify classes with at least 3 samples; pool the rest.
    std::vector<std::vector<int>> groups;
    std::vector<std::vector<int>> by_class(dataset.n_classes);
    for (int i : client_indices) by_class[dataset.labels[i]].push_back(i);
    std::vector<int> pooled;
    for (auto& g : by_class) {
        if (static_cast<int>(g.size()) >= 3)
            groups.push_back(std::move(g));
        else
            pooled.insert(pooled.end(), g.begin(), g.end());
    }
    if (!pooled.empty()) groups.push_back(std::move(pooled));

    ClientShard shard;
    shard.client_id = client_id;
    // Cascade rounding: each group is apportioned against the cumulative
    // fraction targets, so group sizes stay within one of stratified ideals
    // while the running totals stay within one of the overall fractions.
    std::array<double, 3> running{0.0, 0.0, 0.0};
    int seen = 0;
    for (auto& g : groups) {
        rng.shuffle(g);
        int n_g = static_cast<int>(g.size());
        std::array<double, 3> ideal{};
        for (int s = 0; s < 3; ++s) ideal[s] = fractions[s] * (seen + n_g) - running[s];
        auto sizes = round_split(n_g, ideal);
        int pos = 0;
        for (int t = 0; t < sizes[0]; ++t) shard.train_idx.push_back(g[pos++]);
        for (int t = 0; t < sizes[1]; ++t) shard.val_idx.push_back(g[pos++]);
        for (int t = 0; t < sizes[2]; ++t) shard.test_idx.push_back(g[pos++]);
        for (int s = 0; s < 3; ++s) running[s] += sizes[s];
        seen += n_g;
    }

    // Every split must be non-empty: pull from the largest split if rounding
    // starved one (only possible for very small shards).
    auto split_of = [&](int which) -> std::vector<int>& {
        return which == 0 ? shard.train_idx : which == 1 ? shard.val_idx : shard.test_idx;
    };
    for (int s = 0; s < 3; ++s) {
        if (!split_of(s).empty()) continue;
        int donor = 0;
        for (int d = 1; d < 3; ++d)
            if (split_of(d).size() > split_of(donor).size()) donor = d;
        if (split_of(donor).size() <= 1)
            throw InputError("split_shard: too few samples to populate all three splits");
        split_of(s).push_back(split_of(donor).back());
        split_of(donor).pop_back();
    }
    return shard;
}

std::vector<int> class_histogram(const std::vector<int>& indices, const Dataset& dataset) {
    std::vector<int> counts(dataset.n_classes, 0);
    for (int i : indices) {
        if (i < 0 || static_cast<size_t>(i) >= dataset.size())
            throw InputError("class_histogram: index out of range");
        counts[dataset.labels[i]] += 1;
    }
    return counts;
}

double label_entropy(const std::vector<int>& counts) {
    long total = 0;
    for (int c : counts) total += c;
    if (total <= 0) return 0.0;
    double h = 0.0;
    for (int c : counts) {
        if (c <= 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

LabeledSet gather(const Dataset& dataset, const std::vector<int>& indices) {
    LabeledSet set;
    set.n_classes = dataset.n_classes;
    set.x = FloatMatrix(indices.size(), dataset.features.cols);
    set.y.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        int idx = indices[i];
        if (idx < 0 || static_cast<size_t>(idx) >= dataset.size())
            throw InputError("gather: index out of range");
        const float* src = dataset.features.row(idx);
        std::copy(src, src + dataset.features.cols, set.x.row(i));
        set.y[i] = dataset.labels[idx];
    }
    return set;
}

void save_csv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("save_csv: cannot open " + path);
    for (size_t f = 0; f < dataset.features.cols; ++f) out << "f" << f << ",";
    out << "label\n";
    char buf[48];
    for (size_t i = 0; i < dataset.size(); ++i) {
        const float* row = dataset.features.row(i);
        for (size_t f = 0; f < dataset.features.cols; ++f) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row[f]));
            out << buf << ",";
        }
        out << dataset.labels[i] << "\n";
    }
    if (!out) throw InputError("save_csv: write failed for " + path);
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw InputError("load_csv: empty file " + path);

    size_t n_features = 0;
    {
        std::stringstream hs(line);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(hs, col, ',')) cols.push_back(col);
        if (cols.empty() || cols.back() != "label")
            throw InputError("load_csv: header must end with 'label'");
        n_features = cols.size() - 1;
    }

    Dataset ds;
    std::vector<float> values;
    int max_label = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != n_features + 1)
            throw InputError("load_csv: row has wrong number of columns");
        for (size_t f = 0; f < n_features; ++f)
            values.push_back(std::strtof(cells[f].c_str(), nullptr));
        int label = std::atoi(cells.back().c_str());
        if (label < 0) throw InputError("load_csv: negative label");
        max_label = std::max(max_label, label);
        ds.labels.push_back(label);
    }
    ds.features.rows = ds.labels.size();
    ds.features.cols = n_features;
    ds.features.data = std::move(values);
    ds.n_classes = max_label + 1;
    ds.validate();
    return ds;
}

void save_binary(const Dataset& dataset, const std::string& path) {
    std::vector<uint8_t> bytes;
    bytes.reserve(12 + dataset.features.data.size() * 4 + dataset.labels.size() * 2);
    put_u32(bytes, static_cast<uint32_t>(dataset.size()));
    put_u32(bytes, static_cast<uint32_t>(dataset.features.cols));
    put_u32(bytes, static_cast<uint32_t>(dataset.n_classes));
    for (float v : dataset.features.data) put_f32(bytes, v);
    for (int y : dataset.labels) put_u16(bytes, static_cast<uint16_t>(y));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("save_binary: cannot open " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("save_binary: write failed for " + path);
}

Dataset load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("load_binary: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    ByteReader r({bytes.data(), bytes.size()});
    Dataset ds;
    uint32_t n_samples = r.u32();
    uint32_t n_features = r.u32();
    ds.n_classes = static_cast<int>(r.u32());
    ds.features = FloatMatrix(n_samples, n_features);
    for (auto& v : ds.features.data) v = r.f32();
    ds.labels.resize(n_samples);
    for (auto& y : ds.labels) y = r.u16();
    ds.validate();
    return ds;
}

void save_partition_json(const PartitionFile& part, const std::string& path) {
    nlohmann::ordered_json j;
    j["alpha"] = part.alpha;
    j["seed"] = part.seed;
    j["clients"] = nlohmann::ordered_json::array();
    for (const auto& c : part.clients) {
        nlohmann::ordered_json jc;
        jc["id"] = c.client_id;
        jc["train"] = c.train_idx;
        jc["val"] = c.val_idx;
        jc["test"] = c.test_idx;
        j["clients"].push_back(std::move(jc));
    }
    std::ofstream out(path);
    if (!out) throw InputError("save_partition_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

PartitionFile load_partition_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("load_partition_json: cannot open " + path);
    nlohmann::json j;
    in >> j;
    PartitionFile part;
    part.alpha = j.at("alpha").get<double>();
    part.seed = j.at("seed").get<uint64_t>();
    for (const auto& jc : j.at("clients")) {
        ClientShard c;
        c.client_id = jc.at("id").get<int>();
        c.train_idx = jc.at("train").get<std::vector<int>>();
        c.val_idx = jc.at("val").get<std::vector<int>>();
        c.test_idx = jc.at("test").get<std::vector<int>>();
        part.clients.push_back(std::move(c));
    }
    return part;
}

}  // namespace fedpae::data
