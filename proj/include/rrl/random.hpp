#pragma once

#include <cstdint>

namespace rrl {

// Counter-based random stream: the key identifies the stream, drawing is a
// pure function of (key, counter). Streams keyed by distinct tuples are
// independent for practical purposes, and parallel consumers get identical
// values regardless of scheduling. The generator is the splitmix64 output
// function applied to a Weyl sequence.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t key) : key_(key) {}

    // Derives a stream key from a seed plus up to three context values
    // (purpose tag, replicate index, period index, ...).
    static std::uint64_t key_of(std::uint64_t seed, std::uint64_t a = 0,
                                std::uint64_t b = 0, std::uint64_t c = 0);

    std::uint64_t next_bits();

    // Uniform on the open interval (0,1): 2^53 equispaced midpoints, so the
    // endpoints are unreachable and inverse-CDF transforms stay finite.
    double uniform();

    // Standard normal via the inverse CDF; implementation-independent, so
    // results are reproducible across standard libraries.
    double normal();

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace rrl
