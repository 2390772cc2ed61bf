#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "fedpae/data.hpp"
#include "fedpae/learners.hpp"

using namespace fedpae;
using namespace fedpae::data;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.n_classes = 2;
    s.n_features = 2;
    s.n_samples = 4;
    s.class_separation = 10.0;
    s.noise_scale = 0.01;
    s.seed = 7;
    return s;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generate_synthetic balances classes") {
    auto ds = generate_synthetic(small_spec());
    REQUIRE(ds.size() == 4);
    auto counts = class_histogram({0, 1, 2, 3}, ds);
    CHECK(counts[0] == 2);
    CHECK(counts[1] == 2);

    // Two tight clusters separated by roughly class_separation.
    std::vector<std::vector<float>> by_class(2);
    for (size_t i = 0; i < ds.size(); ++i) {
        const float* row = ds.features.row(i);
        by_class[ds.labels[i]].insert(by_class[ds.labels[i]].end(), row, row + 2);
    }
    double dx = by_class[0][0] - by_class[1][0];
    double dy = by_class[0][1] - by_class[1][1];
    CHECK(std::sqrt(dx * dx + dy * dy) == doctest::Approx(10.0).epsilon(0.05));
}

TEST_CASE("generate_synthetic is deterministic") {
    auto a = generate_synthetic(small_spec());
    auto b = generate_synthetic(small_spec());
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);
}

TEST_CASE("class means are pairwise equidistant") {
    SyntheticSpec s;
    s.n_classes = 5;
    s.n_features = 6;
    s.n_samples = 500;
    s.class_separation = 8.0;
    s.noise_scale = 0.0;
    s.seed = 3;
    auto ds = generate_synthetic(s);
    // noise 0: every sample sits exactly on its class mean.
    std::map<int, std::vector<float>> mean;
    for (size_t i = 0; i < ds.size(); ++i) {
        auto row = ds.features.row_span(i);
        mean.emplace(ds.labels[i], std::vector<float>(row.begin(), row.end()));
    }
    REQUIRE(mean.size() == 5);
    for (int a = 0; a < 5; ++a) {
        for (int b = a + 1; b < 5; ++b) {
            double ss = 0.0;
            for (int f = 0; f < 6; ++f) {
                double d = mean[a][f] - mean[b][f];
                ss += d * d;
            }
            CHECK(std::sqrt(ss) == doctest::Approx(8.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("noise-free data is perfectly separable by nearest centroid") {
    SyntheticSpec s;
    s.n_classes = 4;
    s.n_features = 4;
    s.n_samples = 200;
    s.class_separation = 5.0;
    s.noise_scale = 0.0;
    s.seed = 11;
    auto ds = generate_synthetic(s);
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    auto set = gather(ds, all);

    learners::LearnerSpec spec;
    spec.architecture = learners::Architecture::nearest_centroid;
    auto [pred, rep] = learners::train(spec, set, set);
    CHECK(learners::accuracy(pred, set) == 1.0);
}

TEST_CASE("generate_synthetic rejects invalid specs naming the field") {
    SyntheticSpec s = small_spec();
    s.n_classes = 1;
    CHECK_THROWS_WITH_AS(generate_synthetic(s), doctest::Contains("n_classes"), ConfigError);
    s = small_spec();
    s.class_separation = 0.0;
    CHECK_THROWS_WITH_AS(generate_synthetic(s), doctest::Contains("class_separation"),
                         ConfigError);
    s = small_spec();
    s.n_samples = 1;
    CHECK_THROWS_WITH_AS(generate_synthetic(s), doctest::Contains("n_samples"), ConfigError);
    s = small_spec();
    s.n_classes = 4;
    s.n_features = 2;  // fewer than n_classes - 1 dimensions
    CHECK_THROWS_WITH_AS(generate_synthetic(s), doctest::Contains("n_features"), ConfigError);
}

namespace {

Dataset partition_fixture(int per_class, int n_classes) {
    SyntheticSpec s;
    s.n_classes = n_classes;
    s.n_features = n_classes;
    s.n_samples = per_class * n_classes;
    s.class_separation = 3.0;
    s.noise_scale = 1.0;
    s.seed = 99;
    return generate_synthetic(s);
}

}  // namespace

TEST_CASE("near-uniform alpha splits every class almost evenly") {
    auto ds = partition_fixture(100, 4);
    PartitionSpec spec;
    spec.alpha = 1e9;
    spec.n_clients = 4;
    spec.seed = 5;
    auto parts = partition_dirichlet(ds, spec);
    for (const auto& client : parts) {
        auto counts = class_histogram(client, ds);
        for (int c = 0; c < 4; ++c) {
            CHECK(counts[c] >= 23);
            CHECK(counts[c] <= 27);
        }
    }
}

TEST_CASE("partition conserves the dataset exactly") {
    auto ds = partition_fixture(50, 5);
    for (double alpha : {0.1, 0.5, 10.0}) {
        PartitionSpec spec;
        spec.alpha = alpha;
        spec.n_clients = 7;
        spec.seed = 21;
        auto parts = partition_dirichlet(ds, spec);
        std::vector<int> all;
        for (const auto& p : parts) all.insert(all.end(), p.begin(), p.end());
        std::sort(all.begin(), all.end());
        std::vector<int> expect(ds.size());
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(all == expect);
    }
}

TEST_CASE("partition is deterministic and respects the sample floor") {
    auto ds = partition_fixture(50, 4);
    PartitionSpec spec;
    spec.alpha = 0.1;
    spec.n_clients = 10;
    spec.seed = 33;
    spec.min_client_samples = 5;
    auto a = partition_dirichlet(ds, spec);
    auto b = partition_dirichlet(ds, spec);
    CHECK(a == b);
    for (const auto& client : a) CHECK(client.size() >= 5);
}

TEST_CASE("lower alpha concentrates labels (Monte-Carlo)") {
    auto ds = partition_fixture(100, 4);
    auto mean_entropy = [&](double alpha, uint64_t seed) {
        PartitionSpec spec;
        spec.alpha = alpha;
        spec.n_clients = 20;
        spec.seed = seed;
        auto parts = partition_dirichlet(ds, spec);
        double h = 0.0;
        for (const auto& p : parts) h += label_entropy(class_histogram(p, ds));
        return h / spec.n_clients;
    };
    double h01 = 0.0, h05 = 0.0;
    const int seeds = 20;
    for (uint64_t s = 0; s < seeds; ++s) {
        h01 += mean_entropy(0.1, s);
        h05 += mean_entropy(0.5, s);
    }
    CHECK(h01 / seeds < h05 / seeds);
}

TEST_CASE("partition input errors") {
    auto ds = partition_fixture(2, 2);
    PartitionSpec spec;
    spec.alpha = 0.5;
    spec.n_clients = 10;
    spec.seed = 1;
    CHECK_THROWS_AS(partition_dirichlet(ds, spec), InputError);  // clients > samples

    Dataset empty;
    empty.n_classes = 2;
    CHECK_THROWS_AS(partition_dirichlet(empty, spec), InputError);
}

TEST_CASE("split_shard matches the 70/15/15 fractions") {
    auto ds = partition_fixture(25, 4);  // 100 samples
    std::vector<int> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto shard = split_shard(0, idx, {0.7, 0.15, 0.15}, ds, 9);
    CHECK(shard.train_idx.size() == 70);
    CHECK(shard.val_idx.size() == 15);
    CHECK(shard.test_idx.size() == 15);
}

TEST_CASE("split_shard largest-remainder on 10 single-class samples gives (7,2,1)") {
    SyntheticSpec s;
    s.n_classes = 2;
    s.n_features = 2;
    s.n_samples = 20;
    s.class_separation = 2.0;
    s.noise_scale = 1.0;
    s.seed = 4;
    auto ds = generate_synthetic(s);
    std::vector<int> idx;
    for (size_t i = 0; i < ds.size() && idx.size() < 10; ++i)
        if (ds.labels[i] == 0) idx.push_back(static_cast<int>(i));
    REQUIRE(idx.size() == 10);
    auto shard = split_shard(0, idx, {0.7, 0.15, 0.15}, ds, 17);
    CHECK(shard.train_idx.size() == 7);
    CHECK(shard.val_idx.size() == 2);
    CHECK(shard.test_idx.size() == 1);
}

TEST_CASE("split_shard is deterministic, disjoint, and conserving") {
    auto ds = partition_fixture(41, 3);
    PartitionSpec pspec;
    pspec.alpha = 0.3;
    pspec.n_clients = 4;
    pspec.seed = 3;
    pspec.min_client_samples = 3;
    auto parts = partition_dirichlet(ds, pspec);
    for (int i = 0; i < 4; ++i) {
        auto a = split_shard(i, parts[i], {0.7, 0.15, 0.15}, ds, 100 + i);
        auto b = split_shard(i, parts[i], {0.7, 0.15, 0.15}, ds, 100 + i);
        CHECK(a.train_idx == b.train_idx);
        CHECK(a.val_idx == b.val_idx);
        CHECK(a.test_idx == b.test_idx);

        CHECK_FALSE(a.train_idx.empty());
        CHECK_FALSE(a.val_idx.empty());
        CHECK_FALSE(a.test_idx.empty());

        std::vector<int> merged = a.train_idx;
        merged.insert(merged.end(), a.val_idx.begin(), a.val_idx.end());
        merged.insert(merged.end(), a.test_idx.begin(), a.test_idx.end());
        std::sort(merged.begin(), merged.end());
        CHECK(std::adjacent_find(merged.begin(), merged.end()) == merged.end());  // disjoint
        auto sorted_part = parts[i];
        std::sort(sorted_part.begin(), sorted_part.end());
        CHECK(merged == sorted_part);  // union equals the assignment
    }
}

TEST_CASE("split_shard rejects too-small shards") {
    auto ds = partition_fixture(10, 2);
    CHECK_THROWS_AS(split_shard(0, {0, 1}, {0.7, 0.15, 0.15}, ds, 1), InputError);
    // Three samples still populate all three splits.
    auto shard = split_shard(0, {0, 1, 2}, {0.7, 0.15, 0.15}, ds, 1);
    CHECK(shard.train_idx.size() == 1);
    CHECK(shard.val_idx.size() == 1);
    CHECK(shard.test_idx.size() == 1);
}

TEST_CASE("class_histogram basics") {
    auto ds = partition_fixture(5, 2);
    auto all = class_histogram({}, ds);
    CHECK(all == std::vector<int>{0, 0});
    CHECK_THROWS_AS(class_histogram({999}, ds), InputError);

    std::vector<int> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto counts = class_histogram(idx, ds);
    CHECK(counts[0] + counts[1] == static_cast<int>(ds.size()));
    CHECK(std::abs(counts[0] - counts[1]) <= 1);
}

TEST_CASE("csv and binary round-trips preserve the dataset") {
    SyntheticSpec s;
    s.n_classes = 3;
    s.n_features = 4;
    s.n_samples = 57;
    s.class_separation = 2.5;
    s.noise_scale = 0.7;
    s.seed = 70;
    auto ds = generate_synthetic(s);

    auto bin = temp_path("fedpae_test_ds.bin");
    save_binary(ds, bin);
    auto ds2 = load_binary(bin);
    CHECK(ds2.features.data == ds.features.data);
    CHECK(ds2.labels == ds.labels);
    CHECK(ds2.n_classes == ds.n_classes);

    auto csv = temp_path("fedpae_test_ds.csv");
    save_csv(ds, csv);
    auto ds3 = load_csv(csv);
    CHECK(ds3.labels == ds.labels);
    REQUIRE(ds3.features.data.size() == ds.features.data.size());
    for (size_t i = 0; i < ds.features.data.size(); ++i)
        CHECK(ds3.features.data[i] == ds.features.data[i]);  // %.9g round-trips f32

    std::remove(bin.c_str());
    std::remove(csv.c_str());
}

TEST_CASE("partition json round-trips") {
    PartitionFile part;
    part.alpha = 0.3;
    part.seed = 77;
    part.clients.push_back({0, {0, 1, 2}, {3}, {4}});
    part.clients.push_back({1, {5, 6}, {7}, {8, 9}});
    auto path = temp_path("fedpae_test_part.json");
    save_partition_json(part, path);
    auto loaded = load_partition_json(path);
    CHECK(loaded.alpha == 0.3);
    CHECK(loaded.seed == 77);
    REQUIRE(loaded.clients.size() == 2);
    CHECK(loaded.clients[1].test_idx == std::vector<int>{8, 9});
    std::remove(path.c_str());
}

TEST_CASE("partition handles datasets with an empty class") {
    // n_classes = 3 but only labels 0 and 1 appear.
    Dataset ds;
    ds.n_classes = 3;
    ds.features = fedpae::FloatMatrix(40, 2);
    ds.labels.resize(40);
    for (int i = 0; i < 40; ++i) ds.labels[i] = i % 2;
    PartitionSpec spec;
    spec.alpha = 0.5;
    spec.n_clients = 4;
    spec.seed = 6;
    auto parts = partition_dirichlet(ds, spec);
    size_t total = 0;
    for (const auto& p : parts) total += p.size();
    CHECK(total == 40);
}

TEST_CASE("csv loader rejects malformed files") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "fedpae_bad.csv").string();
    {
        std::ofstream out(path);
        out << "f0,f1,target\n1,2,0\n";
    }
    CHECK_THROWS_AS(load_csv(path), fedpae::InputError);
    {
        std::ofstream out(path);
        out << "f0,f1,label\n1,2\n";
    }
    CHECK_THROWS_AS(load_csv(path), fedpae::InputError);
    std::remove(path.c_str());
}

TEST_CASE("split_shard pools classes below the stratification threshold") {
    // 8 samples of class 0, 2 of class 1: the pair is pooled, everything
    // still lands in exactly one split.
    SyntheticSpec s;
    s.n_classes = 2;
    s.n_features = 2;
    s.n_samples = 40;
    s.class_separation = 3.0;
    s.noise_scale = 1.0;
    s.seed = 12;
    auto ds = generate_synthetic(s);
    std::vector<int> idx;
    int zeros = 0, ones = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] == 0 && zeros < 8) {
            idx.push_back(static_cast<int>(i));
            ++zeros;
        } else if (ds.labels[i] == 1 && ones < 2) {
            idx.push_back(static_cast<int>(i));
            ++ones;
        }
    }
    auto shard = split_shard(0, idx, {0.7, 0.15, 0.15}, ds, 5);
    CHECK(shard.train_idx.size() + shard.val_idx.size() + shard.test_idx.size() == 10);
    CHECK(shard.train_idx.size() == 7);
}
