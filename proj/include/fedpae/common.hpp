#pragma once

#include <cstdint>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedpae {

// Error taxonomy. Exit-code mapping for the CLI: ConfigError -> 2,
// InputError/IntegrityError/ProtocolError/CorruptionError -> 3,
// InternalError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct InputError : Error {
    using Error::Error;
};
struct IntegrityError : InputError {
    using InputError::InputError;
};
struct ProtocolError : InputError {
    using InputError::InputError;
};
struct CorruptionError : InputError {
    using InputError::InputError;
};
struct InternalError : Error {
    using Error::Error;
};

uint64_t splitmix64(uint64_t x);
uint64_t fnv1a64(std::string_view s);

/// Stage seed = splitmix64(master ^ fnv1a64(stage)). Every named pipeline
/// stage draws its own stream from the master seed through this function.
uint64_t derive_seed(uint64_t master, std::string_view stage);

/// Deterministic random source: the mt19937_64 engine is pinned by the
/// standard, and all distributions below are implemented here rather than
/// taken from <random>, so identical seeds give identical streams on any
/// conforming platform.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n). n must be positive.
    int uniform_int(int n);

    /// Standard normal via the Marsaglia polar method.
    double normal();

    /// Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha > 0.
    double gamma(double alpha);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Row-major dense float matrix; the storage type for features and
/// probability columns throughout the project.
struct FloatMatrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<float> data;

    FloatMatrix() = default;
    FloatMatrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float* row(size_t i) { return data.data() + i * cols; }
    const float* row(size_t i) const { return data.data() + i * cols; }
    std::span<const float> row_span(size_t i) const { return {row(i), cols}; }
};

// Little-endian byte encoding helpers shared by the dataset cache, the
// predictor format, and the wire codec.
void put_u8(std::vector<uint8_t>& out, uint8_t v);
void put_u16(std::vector<uint8_t>& out, uint16_t v);
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_u64(std::vector<uint8_t>& out, uint64_t v);
void put_f32(std::vector<uint8_t>& out, float v);

class ByteReader {
  public:
    explicit ByteReader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

    size_t remaining() const { return bytes_.size() - pos_; }
    size_t position() const { return pos_; }
    bool has(size_t n) const { return remaining() >= n; }

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    float f32();
    void raw(uint8_t* dst, size_t n);

  private:
    void need(size_t n) const;
    std::span<const uint8_t> bytes_;
    size_t pos_ = 0;
};

/// Format with %.*g; all emitted report numbers go through this so reruns
/// are byte-identical.
std::string format_sig(double v, int digits = 6);
/// Round to `digits` significant decimal digits (format + reparse).
double round_sig(double v, int digits = 6);

/// Sample mean / sample standard deviation (n-1 denominator; 0 for n < 2).
double mean_of(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

}  // namespace fedpae
