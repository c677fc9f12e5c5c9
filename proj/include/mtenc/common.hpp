#pragma once

// Error taxonomy, deterministic RNG, and small shared helpers.
// Everything downstream assumes the RNG is reproducible from its four
// state words alone, so no std:: distributions are used anywhere.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace mtenc {

// ---------------------------------------------------------------- errors

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MTENC_ERROR(NAME)                                         \
    struct NAME : Error {                                         \
        explicit NAME(const std::string& msg) : Error(msg) {}     \
    }

MTENC_ERROR(ShapeError);      // operand shapes incompatible
MTENC_ERROR(NumericError);    // non-finite values where finite required
MTENC_ERROR(LabelError);      // id or class index out of range
MTENC_ERROR(EmptyLossError);  // loss over zero contributing elements
MTENC_ERROR(StateError);      // object used out of its legal lifecycle
MTENC_ERROR(OracleError);     // reference computation self-check failed
MTENC_ERROR(DataError);       // dataset content violates task contract
MTENC_ERROR(ParseError);      // malformed input file content
MTENC_ERROR(ConfigError);     // invalid configuration value
MTENC_ERROR(EvalError);       // metric undefined on the given inputs
MTENC_ERROR(IoError);         // filesystem read/write failure
MTENC_ERROR(FormatError);     // byte-level file format violation
MTENC_ERROR(VersionError);    // persisted format version mismatch
MTENC_ERROR(CorruptError);    // persisted content internally inconsistent

#undef MTENC_ERROR

// ------------------------------------------------------------------ rng

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Folds extra words into a base seed. Used to carve independent streams
// out of one run seed (per task, per epoch, per dropout site) so that
// restoring a run never depends on how many draws some other stream made.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> parts) {
    uint64_t s = base ^ 0x8e81bf82cfae5d1eULL;
    uint64_t out = splitmix64(s);
    for (uint64_t p : parts) {
        s ^= p;
        out = splitmix64(s);
    }
    return out;
}

inline uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256**. Exactly four state words, all serialized by checkpoints.
class Rng {
  public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    uint64_t next() {
        auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // in [0, n); n must be positive
    uint64_t bounded(uint64_t n) {
        if (n == 0) throw StateError("Rng::bounded: n must be positive");
        return static_cast<uint64_t>((static_cast<__uint128_t>(next()) * n) >> 64);
    }

    // Box-Muller, one value per pair of draws. Deliberately not
    // std::normal_distribution: that one is implementation-defined.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // rejection sample until |z| <= 2, then scale
    double truncated_normal(double stddev) {
        double z;
        do {
            z = normal();
        } while (std::fabs(z) > 2.0);
        return z * stddev;
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

  private:
    std::array<uint64_t, 4> state_;
};

// ------------------------------------------------------------- helpers

// shortest round-trip-exact decimal rendering used by logs
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace mtenc
