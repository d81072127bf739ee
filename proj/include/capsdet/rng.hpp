#pragma once

#include <cstdint>
#include <string_view>

namespace capsdet {

// Splittable counter-based generator. Every draw is a pure function of
// (key, counter), so streams can be reconstructed from serialized state and
// split() derives statistically independent child streams from a tag. All
// experiment randomness flows through this type; reruns with the same seed
// are bit-identical.
class Rng {
  public:
    explicit Rng(uint64_t key, uint64_t counter = 0) : key_(key), ctr_(counter) {}

    static Rng from_seed(uint64_t seed);

    // Child stream keyed by (this stream, tag). Does not advance this stream.
    Rng split(uint64_t tag) const;
    Rng split(std::string_view tag) const;
    Rng split(uint64_t tag_a, uint64_t tag_b) const { return split(tag_a).split(tag_b); }

    uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    // Uniform integer in [0, n). n must be positive.
    int64_t uniform_int(int64_t n);
    // Standard normal via Box-Muller (two draws per sample, no cache).
    double normal();
    double normal(double mean, double stddev);
    bool bernoulli(double p);

    uint64_t key() const { return key_; }
    uint64_t counter() const { return ctr_; }

  private:
    uint64_t key_;
    uint64_t ctr_;
};

}  // namespace capsdet
