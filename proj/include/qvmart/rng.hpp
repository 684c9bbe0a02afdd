#pragma once

// Counter-based random streams.
//
// Every random draw in the toolkit is a pure function of
// (master seed, path index, purpose tag, counter). Philox4x32-10 supplies the
// bijection; keys are derived from the triple with splitmix64 finalizers so
// distinct paths and purposes never share a stream.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace qvmart {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t z)
{
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline constexpr void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo)
{
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace detail

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
inline constexpr Philox4x32Counter philox4x32(Philox4x32Counter ctr, Philox4x32Key key)
{
    constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
    constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        detail::mulhilo32(m0, ctr[0], hi0, lo0);
        detail::mulhilo32(m1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += w0;
        key[1] += w1;
    }
    return ctr;
}

/// Tags separating the independent sub-streams drawn for one path.
enum class Purpose : std::uint32_t {
    brownian = 1,
    poisson_first = 2,
    poisson_second = 3,
    custom = 99,
};

/// Key of a single sub-stream; cheap to copy.
struct StreamKey {
    std::uint64_t value = 0;

    constexpr Philox4x32Key philox_key() const
    {
        return {static_cast<std::uint32_t>(value), static_cast<std::uint32_t>(value >> 32)};
    }

    /// Four 32-bit words at the two-dimensional counter (a, b).
    constexpr Philox4x32Counter block(std::uint64_t a, std::uint64_t b) const
    {
        return philox4x32({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                           static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)},
                          philox_key());
    }
};

/// Master seed plus the deterministic (path index, purpose) -> StreamKey derivation.
class SeedStream {
public:
    constexpr explicit SeedStream(std::uint64_t master_seed = 0) : master_(master_seed) {}

    constexpr std::uint64_t master_seed() const { return master_; }

    constexpr StreamKey key(std::uint64_t path_index, Purpose purpose) const
    {
        std::uint64_t z = detail::splitmix64(master_);
        z = detail::splitmix64(z ^ path_index);
        z = detail::splitmix64(z ^ (static_cast<std::uint64_t>(purpose) * 0xD1B54A32D192ED03ULL));
        return {z};
    }

private:
    std::uint64_t master_;
};

/// Uniform in (0, 1] with 53 random bits.
inline double uniform_open_closed(std::uint32_t hi, std::uint32_t lo)
{
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

/// Box-Muller on one Philox block: two independent standard normals.
inline std::pair<double, double> normal_pair(const Philox4x32Counter& block)
{
    const double u1 = uniform_open_closed(block[0], block[1]);
    const double u2 = uniform_open_closed(block[2], block[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(theta), r * std::sin(theta)};
}

/// Sequential reader over one sub-stream (counter a = block index, b = 0).
class RandomStream {
public:
    explicit RandomStream(StreamKey key) : key_(key) {}

    double uniform()
    {
        if (word_ == 4) refill();
        const std::uint32_t hi = block_[word_];
        const std::uint32_t lo = block_[word_ + 1];
        word_ += 2;
        return uniform_open_closed(hi, lo);
    }

    double normal()
    {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

private:
    void refill()
    {
        block_ = key_.block(counter_++, 0);
        word_ = 0;
    }

    StreamKey key_;
    std::uint64_t counter_ = 0;
    Philox4x32Counter block_{};
    int word_ = 4;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace qvmart
