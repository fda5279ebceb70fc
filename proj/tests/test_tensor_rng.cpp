#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "clipforge/rng.hpp"
#include "clipforge/tensor.hpp"

using namespace clipforge;

TEST_CASE("rng reproducibility and streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  Rng c(42), d(43);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += c.next_u64() == d.next_u64() ? 1 : 0;
  REQUIRE(same == 0);
}

TEST_CASE("rng derive gives independent deterministic streams") {
  Rng a = Rng::derive(7, {1, 2, 3});
  Rng b = Rng::derive(7, {1, 2, 3});
  REQUIRE(a.next_u64() == b.next_u64());

  std::set<std::uint64_t> firsts;
  for (std::uint64_t w = 0; w < 50; ++w) firsts.insert(Rng::derive(7, {w}).next_u64());
  REQUIRE(firsts.size() == 50);
}

TEST_CASE("uniform doubles lie in [0,1) and fill the range") {
  Rng rng(9);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  REQUIRE(lo < 0.001);
  REQUIRE(hi > 0.999);
}

TEST_CASE("below is unbiased enough and in range") {
  Rng rng(11);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t v = rng.below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  for (int c : counts) REQUIRE(std::fabs(c / double(n) - 1.0 / 7) < 0.01);
}

TEST_CASE("normal samples match moments") {
  Rng rng(5);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::fabs(mean) < 0.02);
  REQUIRE(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("beta(0.3,0.3) sampler matches analytic moments") {
  // Beta(a,a): mean 1/2, var = a^2/((2a)^2(2a+1)) = 1/(4(2a+1)).
  Rng rng(13);
  const double alpha = 0.3;
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.beta_symmetric(alpha);
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::fabs(mean - 0.5) < 0.01);
  REQUIRE(std::fabs(var - 1.0 / (4.0 * (2.0 * alpha + 1.0))) < 0.01);
}

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3, 4});
  REQUIRE(t.numel() == 24);
  REQUIRE(t.data.size() == 24);
  for (double v : t.data) REQUIRE(v == 0.0);

  t.at3(1, 2, 3) = 5.0;
  REQUIRE(t.data[1 * 12 + 2 * 4 + 3] == 5.0);
  REQUIRE(t.at3(0, 0, 0) == 0.0);

  Tensor f = Tensor::filled({2, 2}, 1.5);
  for (double v : f.data) REQUIRE(v == 1.5);
}

TEST_CASE("tensor row-major strides") {
  Tensor t({3, 5});
  int k = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) t.at2(i, j) = k++;
  for (int i = 0; i < 15; ++i) REQUIRE(t.data[i] == i);
}

TEST_CASE("tensor uniform init respects limit and seed") {
  Rng r1(3), r2(3);
  Tensor a = Tensor::uniform({4, 4}, 0.25, r1);
  Tensor b = Tensor::uniform({4, 4}, 0.25, r2);
  REQUIRE(a.data == b.data);
  for (double v : a.data) {
    REQUIRE(v >= -0.25);
    REQUIRE(v <= 0.25);
  }
}

TEST_CASE("tensor rejects invalid shapes") {
  REQUIRE_THROWS_AS(Tensor({2, 0, 3}), Error);
  REQUIRE_THROWS_AS(Tensor({-1}), Error);
}
