#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace hope {

/// Random stream used everywhere in the library.
///
/// Sub-streams are derived from a master seed by XOR with the stream index,
/// each feeding its own generator, so batch results do not depend on how work
/// is scheduled across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) {
        std::uniform_int_distribution<std::size_t> dist(0, n - 1);
        return dist(engine_);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

inline std::uint64_t derive_stream(std::uint64_t master, std::uint64_t index) noexcept { return master ^ index; }

/// splitmix64 finalizer. Used when a derived stream seeds a second level of streams,
/// so that (r, i) and (r', i') with r ^ i == r' ^ i' do not collide.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

// Stage salts keep the simulation, bootstrap and randomized-neighbor streams apart
// when they share one master seed.
inline constexpr std::uint64_t kBootstrapSalt = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kRandomNeighborSalt = 0xC2B2AE3D27D4EB4FULL;

} // namespace hope
