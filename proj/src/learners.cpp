#include "fedpae/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

namespace fedpae::learners {

std::string_view arch_name(Architecture a) {
    switch (a) {
        case Architecture::logistic_regression: return "logistic_regression";
        case Architecture::mlp: return "mlp";
        case Architecture::nearest_centroid: return "nearest_centroid";
        case Architecture::decision_stump_forest: return "decision_stump_forest";
    }
    throw InternalError("arch_name: unknown architecture tag");
}

Architecture arch_from_name(std::string_view name) {
    for (auto a : {Architecture::logistic_regression, Architecture::mlp,
                   Architecture::nearest_centroid, Architecture::decision_stump_forest})
        if (arch_name(a) == name) return a;
    throw ConfigError("unknown architecture: " + std::string(name));
}

void LearnerSpec::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learner spec: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("learner spec: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("learner spec: max_epochs must be >= 1");
    if (patience < 1 || patience > max_epochs)
        throw ConfigError("learner spec: patience must be in [1, max_epochs]");
    if (architecture == Architecture::mlp) {
        for (int h : hidden_sizes)
            if (h < 1) throw ConfigError("learner spec: mlp hidden sizes must be positive");
    }
    if (architecture == Architecture::decision_stump_forest && n_stumps < 1)
        throw ConfigError("learner spec: n_stumps must be >= 1");
}

namespace {

void softmax_inplace(std::vector<double>& z) {
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

// Fully connected net over the flat parameter blob. Logistic regression is
// the zero-hidden-layer case; mlp blobs carry a [L, h1..hL] float header.
struct LayerNet {
    std::vector<int> sizes;           // [n_features, hidden..., n_classes]
    std::vector<size_t> w_offset;     // per layer
    std::vector<size_t> b_offset;
    size_t header = 0;                // floats before the first weight
    size_t total = 0;                 // total blob length in floats

    static LayerNet shape(int n_features, int n_classes, const std::vector<int>& hidden,
                          bool with_header) {
        LayerNet net;
        net.sizes.push_back(n_features);
        for (int h : hidden) net.sizes.push_back(h);
        net.sizes.push_back(n_classes);
        net.header = with_header ? 1 + hidden.size() : 0;
        size_t off = net.header;
        for (size_t l = 0; l + 1 < net.sizes.size(); ++l) {
            net.w_offset.push_back(off);
            off += static_cast<size_t>(net.sizes[l]) * net.sizes[l + 1];
            net.b_offset.push_back(off);
            off += net.sizes[l + 1];
        }
        net.total = off;
        return net;
    }

    int n_layers() const { return static_cast<int>(sizes.size()) - 1; }

    void write_header(std::vector<float>& params) const {
        if (header == 0) return;
        params[0] = static_cast<float>(sizes.size() - 2);
        for (size_t l = 1; l + 1 < sizes.size(); ++l) params[l] = static_cast<float>(sizes[l]);
    }
};

std::vector<int> mlp_hidden_from_blob(const std::vector<float>& params) {
    if (params.empty()) throw InputError("mlp blob: missing header");
    int n_hidden = static_cast<int>(params[0]);
    if (n_hidden < 0 || static_cast<size_t>(n_hidden) + 1 > params.size())
        throw InputError("mlp blob: corrupt header");
    std::vector<int> hidden(n_hidden);
    for (int i = 0; i < n_hidden; ++i) hidden[i] = static_cast<int>(params[1 + i]);
    return hidden;
}

LayerNet net_for(const Predictor& p) {
    if (p.architecture == Architecture::logistic_regression)
        return LayerNet::shape(p.n_features, p.n_classes, {}, false);
    return LayerNet::shape(p.n_features, p.n_classes, mlp_hidden_from_blob(p.params), true);
}

// Forward pass; fills per-layer activations when acts != nullptr (training).
std::vector<double> net_forward(const LayerNet& net, const std::vector<float>& params,
                                std::span<const float> x,
                                std::vector<std::vector<double>>* acts) {
    std::vector<double> cur(x.begin(), x.end());
    if (acts) (*acts)[0] = cur;
    for (int l = 0; l < net.n_layers(); ++l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        const float* w = params.data() + net.w_offset[l];
        const float* b = params.data() + net.b_offset[l];
        std::vector<double> next(out);
        for (int o = 0; o < out; ++o) {
            double acc = b[o];
            const float* wr = w + static_cast<size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += static_cast<double>(wr[i]) * cur[i];
            next[o] = acc;
        }
        bool last = (l + 1 == net.n_layers());
        if (!last)
            for (double& v : next) v = v > 0.0 ? v : 0.0;  // relu
        else
            softmax_inplace(next);
        cur = std::move(next);
        if (acts) (*acts)[l + 1] = cur;
    }
    return cur;
}

// Accumulate cross-entropy gradients for one sample into grad (same layout
// as params, header slots unused).
void net_backward(const LayerNet& net, const std::vector<float>& params,
                  const std::vector<std::vector<double>>& acts, int label,
                  std::vector<double>& grad) {
    int L = net.n_layers();
    std::vector<double> delta = acts[L];  // softmax output
    delta[label] -= 1.0;
    for (int l = L - 1; l >= 0; --l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        double* gw = grad.data() + net.w_offset[l];
        double* gb = grad.data() + net.b_offset[l];
        const auto& a_prev = acts[l];
        for (int o = 0; o < out; ++o) {
            double d = delta[o];
            gb[o] += d;
            double* gwr = gw + static_cast<size_t>(o) * in;
            for (int i = 0; i < in; ++i) gwr[i] += d * a_prev[i];
        }
        if (l == 0) break;
        const float* w = params.data() + net.w_offset[l];
        std::vector<double> prev(in, 0.0);
        for (int o = 0; o < out; ++o) {
            double d = delta[o];
            const float* wr = w + static_cast<size_t>(o) * in;
            for (int i = 0; i < in; ++i) prev[i] += d * wr[i];
        }
        // relu derivative on the pre-activation sign, equal to activation > 0
        for (int i = 0; i < in; ++i)
            if (acts[l][i] <= 0.0) prev[i] = 0.0;
        delta = std::move(prev);
    }
}

void sgd_step(const LayerNet& net, std::vector<float>& params, const LabeledSet& set,
              const std::vector<int>& batch, double lr,
              std::vector<std::vector<double>>& acts, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int idx : batch) {
        net_forward(net, params, set.x.row_span(idx), &acts);
        net_backward(net, params, acts, set.y[idx], grad);
    }
    double scale = lr / static_cast<double>(batch.size());
    for (size_t i = net.header; i < params.size(); ++i)
        params[i] = static_cast<float>(params[i] - scale * grad[i]);
}

std::vector<float> init_gradient_params(const LearnerSpec& spec, const LayerNet& net) {
    std::vector<float> params(net.total, 0.0f);
    net.write_header(params);
    if (spec.architecture == Architecture::mlp) {
        // Glorot-uniform weights, zero biases.
        Rng rng(derive_seed(spec.seed, "init"));
        for (int l = 0; l < net.n_layers(); ++l) {
            int in = net.sizes[l], out = net.sizes[l + 1];
            double r = std::sqrt(6.0 / (in + out));
            float* w = params.data() + net.w_offset[l];
            for (size_t i = 0; i < static_cast<size_t>(in) * out; ++i)
                w[i] = static_cast<float>(rng.uniform(-r, r));
        }
    }
    return params;
}

int majority_class(const std::vector<int>& counts) {
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// ---- nearest centroid ----
// blob: [C x d centroids, C presence flags]

std::vector<float> fit_centroids(const LabeledSet& set) {
    int C = set.n_classes, d = static_cast<int>(set.x.cols);
    std::vector<double> sums(static_cast<size_t>(C) * d, 0.0);
    std::vector<int> counts(C, 0);
    for (size_t i = 0; i < set.size(); ++i) {
        const float* row = set.x.row(i);
        double* s = sums.data() + static_cast<size_t>(set.y[i]) * d;
        for (int f = 0; f < d; ++f) s[f] += row[f];
        counts[set.y[i]] += 1;
    }
    std::vector<float> params(static_cast<size_t>(C) * d + C, 0.0f);
    for (int c = 0; c < C; ++c) {
        params[static_cast<size_t>(C) * d + c] = counts[c] > 0 ? 1.0f : 0.0f;
        if (counts[c] == 0) continue;
        for (int f = 0; f < d; ++f)
            params[static_cast<size_t>(c) * d + f] =
                static_cast<float>(sums[static_cast<size_t>(c) * d + f] / counts[c]);
    }
    return params;
}

std::vector<double> centroid_proba(const Predictor& p, std::span<const float> x) {
    int C = p.n_classes, d = p.n_features;
    std::vector<double> neg_dist(C);
    for (int c = 0; c < C; ++c) {
        bool present = p.params[static_cast<size_t>(C) * d + c] > 0.5f;
        if (!present) {
            neg_dist[c] = -1e30;
            continue;
        }
        const float* mu = p.params.data() + static_cast<size_t>(c) * d;
        double ss = 0.0;
        for (int f = 0; f < d; ++f) {
            double diff = static_cast<double>(x[f]) - mu[f];
            ss += diff * diff;
        }
        neg_dist[c] = -std::sqrt(ss);
    }
    softmax_inplace(neg_dist);
    return neg_dist;
}

// ---- decision stump forest ----
// blob: [n_stumps, then per stump: feature, threshold, left_class, right_class]

struct Stump {
    int feature = 0;
    float threshold = std::numeric_limits<float>::infinity();
    int left_class = 0;
    int right_class = 0;
};

Stump fit_stump(const LabeledSet& set, const std::vector<int>& sample_idx,
                const std::vector<int>& feature_subset) {
    const int n = static_cast<int>(sample_idx.size());
    const int C = set.n_classes;

    std::vector<int> total_counts(C, 0);
    for (int i : sample_idx) total_counts[set.y[i]] += 1;
    int overall_majority = majority_class(total_counts);

    Stump best;
    best.left_class = best.right_class = overall_majority;
    int best_correct = *std::max_element(total_counts.begin(), total_counts.end());

    std::vector<std::pair<float, int>> vals(n);
    for (int f : feature_subset) {
        for (int i = 0; i < n; ++i)
            vals[i] = {set.x.row(sample_idx[i])[f], set.y[sample_idx[i]]};
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });

        std::vector<int> left_counts(C, 0);
        std::vector<int> right_counts = total_counts;
        for (int i = 0; i + 1 < n; ++i) {
            left_counts[vals[i].second] += 1;
            right_counts[vals[i].second] -= 1;
            if (vals[i].first == vals[i + 1].first) continue;  // not a boundary
            int lc = majority_class(left_counts);
            int rc = majority_class(right_counts);
            int correct = left_counts[lc] + right_counts[rc];
            if (correct > best_correct) {
                best_correct = correct;
                best.feature = f;
                best.threshold = (vals[i].first + vals[i + 1].first) / 2.0f;
                best.left_class = lc;
                best.right_class = rc;
            }
        }
    }
    return best;
}

std::vector<float> fit_stump_forest(const LearnerSpec& spec, const LabeledSet& set) {
    Rng rng(derive_seed(spec.seed, "stumps"));
    const int n = static_cast<int>(set.size());
    const int d = static_cast<int>(set.x.cols);
    int subset_size = std::max(1, static_cast<int>(std::floor(std::sqrt(d))));

    std::vector<float> params;
    params.reserve(1 + static_cast<size_t>(spec.n_stumps) * 4);
    params.push_back(static_cast<float>(spec.n_stumps));

    std::vector<int> features(d);
    std::iota(features.begin(), features.end(), 0);
    for (int s = 0; s < spec.n_stumps; ++s) {
        std::vector<int> boot(n);
        for (int i = 0; i < n; ++i) boot[i] = rng.uniform_int(n);
        rng.shuffle(features);
        std::vector<int> subset(features.begin(), features.begin() + subset_size);
        Stump st = fit_stump(set, boot, subset);
        params.push_back(static_cast<float>(st.feature));
        params.push_back(st.threshold);
        params.push_back(static_cast<float>(st.left_class));
        params.push_back(static_cast<float>(st.right_class));
    }
    return params;
}

std::vector<double> stump_proba(const Predictor& p, std::span<const float> x) {
    int n_stumps = static_cast<int>(p.params[0]);
    std::vector<double> votes(p.n_classes, 0.0);
    for (int s = 0; s < n_stumps; ++s) {
        const float* st = p.params.data() + 1 + static_cast<size_t>(s) * 4;
        int f = static_cast<int>(st[0]);
        int cls = x[f] <= st[1] ? static_cast<int>(st[2]) : static_cast<int>(st[3]);
        votes[cls] += 1.0;
    }
    for (double& v : votes) v /= n_stumps;
    return votes;
}

Predictor make_predictor(const LearnerSpec& spec, int n_features, int n_classes,
                         std::vector<float> params) {
    Predictor p;
    p.architecture = spec.architecture;
    p.n_features = n_features;
    p.n_classes = n_classes;
    p.origin.training_seed = spec.seed;
    p.params = std::move(params);
    return p;
}

/// Constant-class predictor for degenerate single-class training sets: the
/// natural parameterization of each architecture that always emits `cls`.
std::vector<float> constant_class_params(const LearnerSpec& spec, const LayerNet* net, int d,
                                         int C, int cls, const LabeledSet& train_set) {
    switch (spec.architecture) {
        case Architecture::logistic_regression:
        case Architecture::mlp: {
            std::vector<float> params(net->total, 0.0f);
            net->write_header(params);
            params[net->b_offset.back() + cls] = 30.0f;  // softmax(30 vs 0) ~ 1
            return params;
        }
        case Architecture::nearest_centroid:
            return fit_centroids(train_set);
        case Architecture::decision_stump_forest: {
            std::vector<float> params;
            params.push_back(static_cast<float>(spec.n_stumps));
            for (int s = 0; s < spec.n_stumps; ++s) {
                params.push_back(0.0f);
                params.push_back(std::numeric_limits<float>::infinity());
                params.push_back(static_cast<float>(cls));
                params.push_back(static_cast<float>(cls));
            }
            return params;
        }
    }
    (void)d;
    (void)C;
    throw InternalError("constant_class_params: unknown architecture");
}

}  // namespace

uint64_t forward_flops(Architecture a, int n_features, int n_classes,
                       const std::vector<int>& hidden_sizes, int n_stumps) {
    uint64_t f = 0;
    switch (a) {
        case Architecture::logistic_regression:
            f = 2ull * n_features * n_classes + 3ull * n_classes;
            break;
        case Architecture::mlp: {
            int prev = n_features;
            for (int h : hidden_sizes) {
                f += 2ull * prev * h + static_cast<uint64_t>(h);
                prev = h;
            }
            f += 2ull * prev * n_classes + 3ull * n_classes;
            break;
        }
        case Architecture::nearest_centroid:
            f = static_cast<uint64_t>(n_classes) * (3ull * n_features + 2) + 3ull * n_classes;
            break;
        case Architecture::decision_stump_forest:
            f = 2ull * n_stumps + static_cast<uint64_t>(n_classes);
            break;
    }
    return f;
}

uint64_t forward_flops(const LearnerSpec& spec, int n_features, int n_classes) {
    return forward_flops(spec.architecture, n_features, n_classes, spec.hidden_sizes,
                         spec.n_stumps);
}

std::pair<Predictor, TrainReport> train(const LearnerSpec& spec, const LabeledSet& train_set,
                                        const LabeledSet& val_set) {
    spec.validate();
    if (train_set.size() == 0 || val_set.size() == 0)
        throw InputError("train: train and validation sets must be non-empty");
    if (train_set.x.cols != val_set.x.cols)
        throw InputError("train: train/validation feature dimensions differ");
    if (train_set.n_classes != val_set.n_classes)
        throw InputError("train: train/validation class counts differ");

    const int d = static_cast<int>(train_set.x.cols);
    const int C = train_set.n_classes;
    const bool gradient_arch = spec.architecture == Architecture::logistic_regression ||
                               spec.architecture == Architecture::mlp;

    LayerNet net;
    if (gradient_arch)
        net = LayerNet::shape(d, C, spec.architecture == Architecture::mlp ? spec.hidden_sizes
                                                                           : std::vector<int>{},
                              spec.architecture == Architecture::mlp);

    TrainReport report;

    bool single_class =
        std::all_of(train_set.y.begin(), train_set.y.end(),
                    [&](int y) { return y == train_set.y.front(); });
    if (single_class) {
        auto params = constant_class_params(spec, gradient_arch ? &net : nullptr, d, C,
                                            train_set.y.front(), train_set);
        Predictor p = make_predictor(spec, d, C, std::move(params));
        report.single_class_warning = true;
        report.epochs_run = gradient_arch ? 0 : 1;
        report.best_val_accuracy = accuracy(p, val_set);
        report.last_val_accuracy = report.best_val_accuracy;
        return {std::move(p), report};
    }

    if (!gradient_arch) {
        std::vector<float> params = spec.architecture == Architecture::nearest_centroid
                                        ? fit_centroids(train_set)
                                        : fit_stump_forest(spec, train_set);
        Predictor p = make_predictor(spec, d, C, std::move(params));
        report.epochs_run = 1;
        report.best_epoch = 1;
        report.best_val_accuracy = accuracy(p, val_set);
        report.last_val_accuracy = report.best_val_accuracy;
        uint64_t fwd = forward_flops(spec, d, C);
        report.training_flops = fwd * train_set.size();
        return {std::move(p), report};
    }

    std::vector<float> params = init_gradient_params(spec, net);
    std::vector<float> best_params = params;

    BatchStream batches(derive_seed(spec.seed, "batches/train"), static_cast<int>(train_set.size()),
                        spec.batch_size);
    int batches_per_epoch =
        (static_cast<int>(train_set.size()) + spec.batch_size - 1) / spec.batch_size;

    std::vector<std::vector<double>> acts(net.n_layers() + 1);
    std::vector<double> grad(net.total, 0.0);

    Predictor probe = make_predictor(spec, d, C, params);
    double best_acc = -1.0;
    int since_best = 0;
    for (int epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        for (int b = 0; b < batches_per_epoch; ++b)
            sgd_step(net, params, train_set, batches.next(), spec.learning_rate, acts, grad);
        report.epochs_run = epoch;

        probe.params = params;
        double acc = accuracy(probe, val_set);
        report.last_val_accuracy = acc;
        if (acc > best_acc) {
            best_acc = acc;
            best_params = params;
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if (since_best >= spec.patience) {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.best_val_accuracy = best_acc;
    uint64_t fwd = forward_flops(spec, d, C);
    report.training_flops = 3ull * fwd * train_set.size() * report.epochs_run;
    return {make_predictor(spec, d, C, std::move(best_params)), report};
}

std::vector<double> predict_proba(const Predictor& p, std::span<const float> x) {
    if (static_cast<int>(x.size()) != p.n_features)
        throw InputError("predict_proba: feature length mismatch");
    switch (p.architecture) {
        case Architecture::logistic_regression:
        case Architecture::mlp: {
            LayerNet net = net_for(p);
            return net_forward(net, p.params, x, nullptr);
        }
        case Architecture::nearest_centroid:
            return centroid_proba(p, x);
        case Architecture::decision_stump_forest:
            return stump_proba(p, x);
    }
    throw InternalError("predict_proba: unknown architecture");
}

int predict_class(const Predictor& p, std::span<const float> x) {
    auto proba = predict_proba(p, x);
    return static_cast<int>(std::max_element(proba.begin(), proba.end()) - proba.begin());
}

double accuracy(const Predictor& p, const LabeledSet& set) {
    if (set.size() == 0) throw InputError("accuracy: empty set");
    size_t correct = 0;
    for (size_t i = 0; i < set.size(); ++i)
        if (predict_class(p, set.x.row_span(i)) == set.y[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

static constexpr uint16_t kPredictorVersion = 1;

std::vector<uint8_t> serialize_predictor(const Predictor& p) {
    std::vector<uint8_t> out;
    out.reserve(35 + p.params.size() * 4);
    out.push_back('F');
    out.push_back('P');
    out.push_back('A');
    out.push_back('E');
    put_u16(out, kPredictorVersion);
    put_u8(out, static_cast<uint8_t>(p.architecture));
    put_u32(out, static_cast<uint32_t>(p.n_features));
    put_u32(out, static_cast<uint32_t>(p.n_classes));
    put_u32(out, p.origin.client_id);
    put_u32(out, p.origin.slot);
    put_u64(out, p.origin.training_seed);
    put_u64(out, static_cast<uint64_t>(p.params.size()) * 4);
    for (float v : p.params) put_f32(out, v);
    return out;
}

Predictor deserialize_predictor(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    if (!r.has(4)) throw InputError("predictor: truncated header");
    char magic[4];
    r.raw(reinterpret_cast<uint8_t*>(magic), 4);
    if (std::memcmp(magic, "FPAE", 4) != 0) throw InputError("predictor: bad magic");
    uint16_t version = r.u16();
    if (version != kPredictorVersion) throw InputError("predictor: unsupported version");
    Predictor p;
    uint8_t tag = r.u8();
    if (tag > static_cast<uint8_t>(Architecture::decision_stump_forest))
        throw InputError("predictor: unknown architecture tag");
    p.architecture = static_cast<Architecture>(tag);
    p.n_features = static_cast<int>(r.u32());
    p.n_classes = static_cast<int>(r.u32());
    p.origin.client_id = r.u32();
    p.origin.slot = r.u32();
    p.origin.training_seed = r.u64();
    uint64_t byte_len = r.u64();
    if (byte_len % 4 != 0) throw InputError("predictor: parameter byte length not a multiple of 4");
    if (!r.has(byte_len)) throw InputError("predictor: truncated parameters");
    p.params.resize(byte_len / 4);
    for (auto& v : p.params) v = r.f32();
    return p;
}

BatchStream::BatchStream(uint64_t seed, int n_samples, int batch_size)
    : seed_(seed), n_(n_samples), batch_size_(batch_size) {
    if (n_samples < 1) throw InputError("BatchStream: empty sample set");
    if (batch_size < 1) throw InputError("BatchStream: batch_size must be >= 1");
    order_.resize(n_);
    reshuffle();
}

void BatchStream::reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(splitmix64(seed_ + static_cast<uint64_t>(epoch_)));
    rng.shuffle(order_);
    pos_ = 0;
}

const std::vector<int>& BatchStream::next() {
    if (pos_ >= order_.size()) {
        epoch_ += 1;
        reshuffle();
    }
    size_t take = std::min(static_cast<size_t>(batch_size_), order_.size() - pos_);
    batch_.assign(order_.begin() + pos_, order_.begin() + pos_ + take);
    pos_ += take;
    return batch_;
}

namespace {

LayerNet fedavg_net(const LearnerSpec& spec, int d, int C) {
    if (spec.architecture == Architecture::logistic_regression)
        return LayerNet::shape(d, C, {}, false);
    if (spec.architecture == Architecture::mlp)
        return LayerNet::shape(d, C, spec.hidden_sizes, true);
    throw InputError("fedavg: architecture must be logistic_regression or mlp");
}

constexpr const char* kFedAvgBatchTag = "batches/fedavg";

}  // namespace

Predictor local_sgd(const LearnerSpec& spec, const LabeledSet& train_set, int n_steps) {
    spec.validate();
    const int d = static_cast<int>(train_set.x.cols);
    const int C = train_set.n_classes;
    LayerNet net = fedavg_net(spec, d, C);
    std::vector<float> params = init_gradient_params(spec, net);
    BatchStream batches(derive_seed(spec.seed, kFedAvgBatchTag),
                        static_cast<int>(train_set.size()), spec.batch_size);
    std::vector<std::vector<double>> acts(net.n_layers() + 1);
    std::vector<double> grad(net.total, 0.0);
    for (int s = 0; s < n_steps; ++s)
        sgd_step(net, params, train_set, batches.next(), spec.learning_rate, acts, grad);
    return make_predictor(spec, d, C, std::move(params));
}

Predictor fedavg_train(const std::vector<LabeledSet>& client_train_sets,
                       const std::vector<LearnerSpec>& per_client_specs, int rounds) {
    if (client_train_sets.empty()) throw InputError("fedavg: no clients");
    if (per_client_specs.size() != client_train_sets.size())
        throw InputError("fedavg: one spec per client required");
    if (rounds < 1) throw InputError("fedavg: rounds must be >= 1");
    const auto& first = per_client_specs.front();
    for (const auto& s : per_client_specs) {
        s.validate();
        if (s.architecture != first.architecture || s.hidden_sizes != first.hidden_sizes)
            throw InputError("fedavg: heterogeneous architectures passed; FedAvg requires one "
                             "shared model architecture");
    }

    const int d = static_cast<int>(client_train_sets.front().x.cols);
    const int C = client_train_sets.front().n_classes;
    for (const auto& set : client_train_sets) {
        if (set.size() == 0) throw InputError("fedavg: empty client train set");
        if (static_cast<int>(set.x.cols) != d || set.n_classes != C)
            throw InputError("fedavg: inconsistent client data dimensions");
    }

    LayerNet net = fedavg_net(first, d, C);
    std::vector<float> global = init_gradient_params(first, net);

    const size_t n_clients = client_train_sets.size();
    std::vector<BatchStream> streams;
    streams.reserve(n_clients);
    double weight_total = 0.0;
    std::vector<double> weight(n_clients);
    for (size_t i = 0; i < n_clients; ++i) {
        streams.emplace_back(derive_seed(per_client_specs[i].seed, kFedAvgBatchTag),
                             static_cast<int>(client_train_sets[i].size()),
                             per_client_specs[i].batch_size);
        weight[i] = static_cast<double>(client_train_sets[i].size());
        weight_total += weight[i];
    }

    std::vector<std::vector<double>> acts(net.n_layers() + 1);
    std::vector<double> grad(net.total, 0.0);
    std::vector<float> local = global;
    std::vector<double> sum(net.total, 0.0);

    for (int r = 0; r < rounds; ++r) {
        std::fill(sum.begin(), sum.end(), 0.0);
        for (size_t i = 0; i < n_clients; ++i) {
            local = global;
            sgd_step(net, local, client_train_sets[i], streams[i].next(),
                     per_client_specs[i].learning_rate, acts, grad);
            for (size_t j = 0; j < local.size(); ++j) sum[j] += weight[i] * local[j];
        }
        for (size_t j = net.header; j < global.size(); ++j)
            global[j] = static_cast<float>(sum[j] / weight_total);
    }
    return make_predictor(first, d, C, std::move(global));
}

Predictor fedavg_train(const std::vector<LabeledSet>& client_train_sets,
                       const LearnerSpec& shared_spec, int rounds) {
    std::vector<LearnerSpec> specs(client_train_sets.size(), shared_spec);
    return fedavg_train(client_train_sets, specs, rounds);
}

}  // namespace fedpae::learners
