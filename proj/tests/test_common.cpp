#include "doctest.h"

#include <cmath>
#include <set>

#include "fedpae/common.hpp"

using namespace fedpae;

TEST_CASE("derive_seed gives distinct stages distinct seeds") {
    std::set<uint64_t> seen;
    const char* stages[] = {"dataset", "partition", "schedule", "sim", "fedavg",
                            "train/0/0", "train/0/1", "train/1/0", "split/0", "split/1"};
    for (const char* s : stages) seen.insert(derive_seed(42, s));
    CHECK(seen.size() == 10);

    // Changing the master seed changes every stage seed.
    for (const char* s : stages) CHECK(derive_seed(42, s) != derive_seed(43, s));
}

TEST_CASE("rng streams are deterministic") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(123), d(124);
    bool all_equal = true;
    for (int i = 0; i < 10; ++i) all_equal &= c.next_u64() == d.next_u64();
    CHECK_FALSE(all_equal);
}

TEST_CASE("uniform_int stays in range and covers values") {
    Rng rng(7);
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) {
        int v = rng.uniform_int(6);
        CHECK(v >= 0);
        CHECK(v < 6);
        seen.insert(v);
    }
    CHECK(seen.size() == 6);
    CHECK_THROWS_AS(rng.uniform_int(0), InputError);
}

TEST_CASE("normal moments are sane") {
    Rng rng(11);
    double sum = 0.0, ss = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        ss += v * v;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(ss / n - 1.0) < 0.05);
}

TEST_CASE("gamma moments match alpha") {
    for (double alpha : {0.1, 0.5, 1.0, 3.0}) {
        Rng rng(static_cast<uint64_t>(alpha * 100) + 1);
        double sum = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            double v = rng.gamma(alpha);
            CHECK(v >= 0.0);
            sum += v;
        }
        // Mean of Gamma(alpha, 1) is alpha.
        CHECK(sum / n == doctest::Approx(alpha).epsilon(0.08));
    }
    Rng rng(1);
    CHECK_THROWS_AS(rng.gamma(0.0), InputError);
}

TEST_CASE("round_sig keeps six significant digits") {
    CHECK(round_sig(0.123456789) == doctest::Approx(0.123457).epsilon(1e-9));
    CHECK(format_sig(0.5) == "0.5");
    CHECK(format_sig(1.0 / 3.0) == "0.333333");
}

TEST_CASE("byte IO round-trips") {
    std::vector<uint8_t> bytes;
    put_u16(bytes, 0xBEEF);
    put_u32(bytes, 0xDEADBEEF);
    put_u64(bytes, 0x0123456789ABCDEFull);
    put_f32(bytes, 3.25f);
    ByteReader r({bytes.data(), bytes.size()});
    CHECK(r.u16() == 0xBEEF);
    CHECK(r.u32() == 0xDEADBEEF);
    CHECK(r.u64() == 0x0123456789ABCDEFull);
    CHECK(r.f32() == 3.25f);
    CHECK(r.remaining() == 0);
    CHECK_THROWS_AS(r.u8(), InputError);
}
