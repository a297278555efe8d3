#pragma once

#include <cstdint>
#include <random>

namespace levytd {

using Rng = std::mt19937_64;

/// What a random stream is used for. Streams for different purposes never overlap.
enum class StreamPurpose : std::uint64_t {
    kNetworkInit = 1,
    kInitialBuffer = 2,
    kTraining = 3,
    kSamplePaths = 4,
    kTest = 5,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives independent generators from (global seed, purpose, iteration, trajectory).
///
/// Each trajectory of each training iteration owns its own stream, so batch
/// simulation gives the same numbers however the work is scheduled.
class StreamFactory {
public:
    explicit StreamFactory(std::uint64_t seed) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t derive(StreamPurpose purpose, std::uint64_t iteration, std::uint64_t trajectory) const noexcept {
        std::uint64_t h = splitmix64(seed_);
        h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
        h = splitmix64(h ^ iteration);
        h = splitmix64(h ^ trajectory);
        return h;
    }

    Rng stream(StreamPurpose purpose, std::uint64_t iteration = 0, std::uint64_t trajectory = 0) const {
        return Rng(derive(purpose, iteration, trajectory));
    }

private:
    std::uint64_t seed_;
};

}  // namespace levytd
