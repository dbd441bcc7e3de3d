#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace hifgo {

/// Counter-based random stream. Every draw is a pure function of
/// (seed, stream, counter), so a copy replays the exact same sequence and
/// derived streams are statistically independent without shared state.
/// The draw path avoids std::<distribution> types on purpose: their output
/// is implementation-defined, which would break byte-for-byte replay of
/// recorded runs.
class RngStream {
public:
    RngStream() = default;
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream) {}

    /// Independent child stream; the child starts at counter 0.
    [[nodiscard]] RngStream derive(std::uint64_t key) const {
        return RngStream(seed_, mix(stream_ ^ mix(key + 0x9E3779B97F4A7C15ull)));
    }

    std::uint64_t next_u64() {
        std::uint64_t x = counter_++;
        x = mix(x + seed_ * 0x9E3779B97F4A7C15ull);
        x = mix(x ^ (stream_ * 0xC2B2AE3D27D4EB4Full));
        return x;
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes two uniforms per draw.
    double next_gaussian() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    static std::uint64_t mix(std::uint64_t x) {
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by an RngStream.
template <typename T>
void shuffle(std::vector<T>& items, RngStream& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[rng.next_below(i)]);
    }
}

}  // namespace hifgo
