#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "qvmart/rng.hpp"
#include "qvmart/stats.hpp"

using namespace qvmart;

// Random123 known-answer vectors for philox4x32-10.
TEST(Philox, KnownAnswerZero)
{
    const auto out = philox4x32({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out, (Philox4x32Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerOnes)
{
    const auto out = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out, (Philox4x32Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi)
{
    const auto out = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out, (Philox4x32Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, IsConstexpr)
{
    constexpr auto out = philox4x32({0, 0, 0, 0}, {0, 0});
    static_assert(out[0] == 0x6627e8d5u);
}

TEST(SeedStream, KeysDistinctAcrossPathsAndPurposes)
{
    const SeedStream s(42);
    std::set<std::uint64_t> keys;
    for (std::uint64_t i = 0; i < 1000; ++i)
        for (auto p : {Purpose::brownian, Purpose::poisson_first, Purpose::poisson_second})
            keys.insert(s.key(i, p).value);
    EXPECT_EQ(keys.size(), 3000u);
    EXPECT_NE(SeedStream(1).key(0, Purpose::brownian).value, SeedStream(2).key(0, Purpose::brownian).value);
}

TEST(SeedStream, Deterministic)
{
    EXPECT_EQ(SeedStream(7).key(3, Purpose::brownian).block(5, 2), SeedStream(7).key(3, Purpose::brownian).block(5, 2));
}

TEST(Uniform, OpenClosedRange)
{
    EXPECT_EQ(uniform_open_closed(0, 0), 0x1.0p-53);
    EXPECT_EQ(uniform_open_closed(0xffffffffu, 0xffffffffu), 1.0);
}

TEST(RandomStream, MomentsMatch)
{
    RandomStream r(SeedStream(11).key(0, Purpose::custom));
    MeanAccumulator u, n, n2, e;
    for (int i = 0; i < 200000; ++i) {
        u.add(r.uniform());
        const double z = r.normal();
        n.add(z);
        n2.add(z * z);
        e.add(r.exponential(2.0));
    }
    EXPECT_LT(std::abs(u.estimate().z(0.5)), 4.0);
    EXPECT_LT(std::abs(n.estimate().z(0.0)), 4.0);
    EXPECT_LT(std::abs(n2.estimate().z(1.0)), 4.0);
    EXPECT_LT(std::abs(e.estimate().z(0.5)), 4.0);
}

TEST(NormalPair, IndependentStandard)
{
    const StreamKey k = SeedStream(3).key(0, Purpose::custom);
    MeanAccumulator prod, a2;
    for (std::uint64_t i = 0; i < 100000; ++i) {
        const auto [a, b] = normal_pair(k.block(i, 0));
        prod.add(a * b);
        a2.add(a * a);
    }
    EXPECT_LT(std::abs(prod.estimate().z(0.0)), 4.0);
    EXPECT_LT(std::abs(a2.estimate().z(1.0)), 4.0);
}
