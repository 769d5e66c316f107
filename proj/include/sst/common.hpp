#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sst {

enum class Err {
    Io,
    Format,
    Shape,
    SampleTooLong,
    EmptyResponse,
    EmptyMask,
    NonFiniteGradient,
    LengthMismatch,
    Domain,
    Index,
    EmptyInput,
    Config,
    Internal,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    Err code() const { return code_; }

private:
    Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) {
    throw Error(code, msg);
}

// Deterministic PRNG. splitmix64 core with an explicit Box-Muller transform,
// so streams are identical across platforms and standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derive an independent substream seed from a base seed and a tag.
uint64_t mix_seed(uint64_t base, uint64_t tag);
uint64_t mix_seed(uint64_t base, const std::string& tag);

}  // namespace sst
