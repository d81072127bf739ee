#include "capsdet/rng.hpp"

#include <cmath>
#include <numbers>

#include "capsdet/errors.hpp"

namespace capsdet {
namespace {

// SplitMix64 finalizer; full-period bijective scrambler on 64 bits.
uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng Rng::from_seed(uint64_t seed) { return Rng(mix64(seed ^ 0x5ca1ab1e00000000ULL)); }

Rng Rng::split(uint64_t tag) const {
    // Distinct domain from next_u64 so splitting never collides with drawing.
    return Rng(mix64(key_ ^ mix64(tag ^ 0xda7a5eed0ddba11ULL)));
}

Rng Rng::split(std::string_view tag) const {
    // FNV-1a over the tag bytes.
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return split(h);
}

uint64_t Rng::next_u64() { return mix64(key_ ^ mix64(ctr_++)); }

double Rng::uniform() {
    // 53 random bits into [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) throw ContractError("uniform_int needs positive n");
    // Rejection-free modulo is fine here: n is tiny next to 2^64 and
    // determinism matters more than the ~n/2^64 bias.
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::normal() {
    // Box-Muller; nudge u1 away from zero so log stays finite.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

bool Rng::bernoulli(double p) { return uniform() < p; }

}  // namespace capsdet
