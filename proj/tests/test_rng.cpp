#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "intertwine/parallel.hpp"
#include "intertwine/rng.hpp"

using namespace intertwine;

TEST(Rng, PhiloxKnownAnswers) {
  // Random123 kat_vectors for philox4x32_10.
  auto a = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(a[0], 0x6627e8d5u);
  EXPECT_EQ(a[1], 0xe169c58du);
  EXPECT_EQ(a[2], 0xbc57ac4cu);
  EXPECT_EQ(a[3], 0x9b00dbd8u);
  auto b = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(b[0], 0x408f276du);
  EXPECT_EQ(b[1], 0x41c83b0eu);
  EXPECT_EQ(b[2], 0xa20bc7c6u);
  EXPECT_EQ(b[3], 0x6d5451fdu);
  auto c = Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(c[0], 0xd16cfe09u);
  EXPECT_EQ(c[1], 0x94fdccebu);
  EXPECT_EQ(c[2], 0x5001e420u);
  EXPECT_EQ(c[3], 0x24126ea1u);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  NormalStream s(42, 7), t(42, 7), u(42, 8), w(43, 7);
  EXPECT_EQ(s.pair(5, 0), t.pair(5, 0));
  EXPECT_NE(s.pair(5, 0), u.pair(5, 0));
  EXPECT_NE(s.pair(5, 0), w.pair(5, 0));
  EXPECT_NE(s.pair(5, 0), s.pair(6, 0));
  EXPECT_NE(s.pair(5, 0), s.pair(5, 1));
}

TEST(Rng, NormalMoments) {
  NormalStream s(1, 0);
  const int n = 200000;
  double m1 = 0, m2 = 0, m4 = 0;
  for (int i = 0; i < n / 2; ++i) {
    for (double z : s.pair(static_cast<std::uint64_t>(i), 0)) {
      m1 += z;
      m2 += z * z;
      m4 += z * z * z * z;
    }
  }
  m1 /= n;
  m2 /= n;
  m4 /= n;
  EXPECT_NEAR(m1, 0.0, 4 / std::sqrt(n));
  EXPECT_NEAR(m2, 1.0, 4 * std::sqrt(2.0 / n));
  EXPECT_NEAR(m4, 3.0, 4 * std::sqrt(96.0 / n));
}

TEST(Parallel, ResultIndependentOfWorkerCount) {
  auto run = [](unsigned workers) {
    std::vector<double> parts(37);
    parallel_for_blocks(
        parts.size(),
        [&](std::size_t b) {
          NormalStream s(9, b);
          double acc = 0;
          for (int i = 0; i < 1000; ++i) acc += s.pair(static_cast<std::uint64_t>(i), 0)[0];
          parts[b] = acc;
        },
        workers);
    return pairwise_sum(parts, 0.0);
  };
  const double a = run(1);
  EXPECT_EQ(a, run(2));
  EXPECT_EQ(a, run(5));
}

TEST(Parallel, PropagatesExceptions) {
  EXPECT_THROW(parallel_for_blocks(
                   8, [](std::size_t b) {
                     if (b == 5) throw std::runtime_error("boom");
                   },
                   3),
               std::runtime_error);
}
