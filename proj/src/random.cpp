#include "rrl/random.hpp"

#include "rrl/numerics.hpp"

namespace rrl {

namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;  // Weyl increment

std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

std::uint64_t absorb(std::uint64_t h, std::uint64_t v) {
    return mix(h ^ (v + kGamma + (h << 6) + (h >> 2)));
}

}  // namespace

std::uint64_t RandomStream::key_of(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                   std::uint64_t c) {
    std::uint64_t h = mix(seed + kGamma);
    h = absorb(h, a);
    h = absorb(h, b);
    h = absorb(h, c);
    return h;
}

std::uint64_t RandomStream::next_bits() {
    return mix(key_ + (++counter_) * kGamma);
}

double RandomStream::uniform() {
    const std::uint64_t hi53 = next_bits() >> 11;
    return (static_cast<double>(hi53) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() { return norm_inv_cdf(uniform()); }

}  // namespace rrl
