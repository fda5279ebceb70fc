#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "clipforge/gradcheck.hpp"
#include "clipforge/policy.hpp"
#include "clipforge/rng.hpp"

using namespace clipforge;

namespace {

Tensor make_probs(std::vector<double> v) {
  Tensor t({static_cast<int>(v.size())});
  t.data = std::move(v);
  return t;
}

// Total variation distance between empirical action frequencies and the
// target categorical; the Gumbel-Max trick samples the categorical exactly,
// so the only error is Monte Carlo noise.
double gumbel_max_tv(const Tensor& probs, long draws, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<long> counts(static_cast<std::size_t>(probs.numel()), 0);
  for (long i = 0; i < draws; ++i) counts[static_cast<std::size_t>(gumbel_max(probs, rng))]++;
  double tv = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    tv += std::fabs(static_cast<double>(counts[j]) / static_cast<double>(draws) - probs.data[j]);
  }
  return 0.5 * tv;
}

}  // namespace

TEST_CASE("gumbel-max frequencies match the categorical") {
  const long draws = 100000;
  REQUIRE(gumbel_max_tv(make_probs({0.7, 0.1, 0.1, 0.1}), draws, 11) < 0.02);
  REQUIRE(gumbel_max_tv(make_probs({0.25, 0.25, 0.25, 0.25}), draws, 12) < 0.02);
  REQUIRE(gumbel_max_tv(make_probs({0.05, 0.05, 0.3, 0.6}), draws, 13) < 0.02);
}

namespace {

// Fraction of relaxed samples whose max coordinate exceeds 0.999. The
// winning coordinate fails to saturate exactly when the top-2 gap of the
// shifted Gumbels (distributed ~ Exp(1 - p_winner)) falls below tau*ln(999),
// so the miss rate is Theta(tau): about 5% at tau=0.01, about 0.5% at
// tau=0.001.
double saturation_rate(const Tensor& probs, double tau, long draws, std::uint64_t seed) {
  Rng rng(seed);
  long saturated = 0;
  for (long i = 0; i < draws; ++i) {
    Tensor noise = draw_gumbel_noise(static_cast<int>(probs.numel()), rng);
    const Tensor gs = gumbel_softmax(probs, noise, tau);
    double mx = 0.0, sum = 0.0;
    for (double v : gs.data) {
      mx = std::max(mx, v);
      sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-9) return -1.0;  // invalid simplex point
    if (mx > 0.999) ++saturated;
  }
  return static_cast<double>(saturated) / static_cast<double>(draws);
}

}  // namespace

TEST_CASE("gumbel-softmax approaches one-hot as tau shrinks") {
  const Tensor probs = make_probs({0.4, 0.3, 0.2, 0.1});
  const long draws = 20000;
  // tau=0.01: exponential-gap law predicts ~95.2% saturation (verified at
  // 1e6 draws: 0.9523); assert a band around it.
  const double at_001 = saturation_rate(probs, 0.01, draws, 21);
  REQUIRE(at_001 >= 0.94);
  REQUIRE(at_001 <= 0.965);
  // tau=0.001: the one-hot limit proper; miss rate drops tenfold.
  const double at_0001 = saturation_rate(probs, 0.001, draws, 22);
  REQUIRE(at_0001 >= 0.99);
  // Monotone in tau.
  REQUIRE(at_0001 > at_001);
  const double at_01 = saturation_rate(probs, 0.1, draws, 23);
  REQUIRE(at_01 < at_001);
}

TEST_CASE("hard sample and relaxed argmax agree when sharing noise") {
  const Tensor probs = make_probs({0.45, 0.3, 0.15, 0.1});
  Rng rng(31);
  const long draws = 20000;
  long agree = 0;
  for (long i = 0; i < draws; ++i) {
    Tensor noise = draw_gumbel_noise(4, rng);
    const int hard = gumbel_max(probs, noise);
    const Tensor gs = gumbel_softmax(probs, noise, 0.05);
    if (argmax_index(gs) == hard) ++agree;
  }
  // (log p + G)/tau is a monotone transform, so agreement is exact up to
  // floating-point ties.
  REQUIRE(static_cast<double>(agree) / static_cast<double>(draws) >= 0.999);
}

TEST_CASE("gumbel-max ties resolve to the smaller index") {
  const Tensor probs = make_probs({0.3, 0.3, 0.2, 0.2});
  Tensor noise({4});  // zeros: log p ties between indices 0 and 1
  REQUIRE(gumbel_max(probs, noise) == 0);
}

TEST_CASE("temperature schedule interpolates linearly and clamps") {
  TemperatureSchedule sched{5.0, 0.01, 1000};
  REQUIRE(sched.at(0) == Catch::Approx(5.0).margin(1e-12));
  REQUIRE(sched.at(1000) == Catch::Approx(0.01).margin(1e-12));
  REQUIRE(sched.at(500) == Catch::Approx((5.0 + 0.01) / 2.0).margin(1e-9));
  REQUIRE(sched.at(250) == Catch::Approx(5.0 + (0.01 - 5.0) * 0.25).margin(1e-9));
  REQUIRE(sched.at(2000) == Catch::Approx(0.01).margin(1e-12));  // clamped
  TemperatureSchedule degenerate{5.0, 0.01, 0};
  REQUIRE(degenerate.at(0) == Catch::Approx(0.01).margin(1e-12));
  REQUIRE_THROWS_AS(sched.at(-1), Error);
}

TEST_CASE("zero-weight policy head emits the uniform distribution") {
  PolicyNet net(12, 4, 4);  // default params: gamma=1, beta=0, weight=0, bias=0
  Tensor hidden({8});
  Tensor station({4});
  Rng rng(7);
  for (double& v : hidden.data) v = rng.normal();
  for (double& v : station.data) v = rng.normal();
  const ActionDistribution dist = net.forward(hidden, station);
  dist.validate();
  REQUIRE(dist.probs.numel() == 4);
  for (double p : dist.probs.data) REQUIRE(p == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("action space validation enforces the count/resolution ordering") {
  REQUIRE_NOTHROW(ActionSpace({1, 3, 5, 7}, {32, 24, 16, 12}));
  REQUIRE_THROWS_AS(ActionSpace({1, 3, 3}, {32, 24, 16}), Error);   // counts not increasing
  REQUIRE_THROWS_AS(ActionSpace({1, 3, 5}, {32, 24, 24}), Error);   // resolutions not decreasing
  REQUIRE_THROWS_AS(ActionSpace({1, 3}, {32, 24, 16}), Error);      // length mismatch
  REQUIRE_THROWS_AS(ActionSpace({0, 3}, {32, 24}), Error);          // count < 1
  ActionSpace space({1, 2}, {16, 8});
  REQUIRE(space.size() == 2);
  REQUIRE(space.full_resolution() == 16);
}

TEST_CASE("action distribution validation rejects unnormalized vectors") {
  ActionDistribution bad{make_probs({0.5, 0.4})};
  REQUIRE_THROWS_AS(bad.validate(), Error);
  ActionDistribution neg{make_probs({1.5, -0.5})};
  REQUIRE_THROWS_AS(neg.validate(), Error);
  ActionDistribution ok{make_probs({0.5, 0.5})};
  REQUIRE_NOTHROW(ok.validate());
}

namespace {

// Randomizes a policy net's parameters away from the zero/identity defaults
// so gradient checks exercise generic points.
void randomize(PolicyNet& net, Rng& rng) {
  for (ParamRef ref : net.params()) {
    for (double& v : ref.tensor->data) v = rng.uniform(-0.8, 0.8);
  }
  // Keep gamma away from zero so the groupnorm stays well-conditioned.
  for (double& v : net.norm.gamma.data) v += (v >= 0.0 ? 0.5 : -0.5);
}

}  // namespace

TEST_CASE("probability-path gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    PolicyNet net(12, 4, 4);
    randomize(net, rng);
    Tensor hidden({9});
    Tensor station({3});
    for (double& v : hidden.data) v = rng.normal();
    for (double& v : station.data) v = rng.normal();

    // Loss: sum_j w_j p_j + 0.5 p_j^2 evaluated on the softmax output.
    Tensor w({4});
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);

    const PolicyNet::Eval ev = net.eval(hidden, station);
    Tensor dprobs({4});
    for (int j = 0; j < 4; ++j) dprobs.data[j] = w.data[j] + ev.probs.data[j];
    const PolicyNet::Grads g = net.backward_from_probs(ev, dprobs);

    const auto loss = [&]() {
      const Tensor p = net.eval(hidden, station).probs;
      double l = 0.0;
      for (int j = 0; j < 4; ++j) l += w.data[j] * p.data[j] + 0.5 * p.data[j] * p.data[j];
      return l;
    };
    const GradCheckReport report = gradcheck(
        net.params(), {g.gamma, g.beta, g.weight, g.bias}, loss);
    INFO("seed " << seed << " max rel err " << report.max_rel_err);
    REQUIRE(report.pass);
  }
}

TEST_CASE("relaxed-sample gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed + 100);
    PolicyNet net(12, 4, 4);
    randomize(net, rng);
    Tensor hidden({9});
    Tensor station({3});
    for (double& v : hidden.data) v = rng.normal();
    for (double& v : station.data) v = rng.normal();
    const Tensor noise = draw_gumbel_noise(4, rng);
    const double tau = 0.7;

    Tensor w({4});
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);

    const PolicyNet::Eval ev = net.eval(hidden, station);
    const Tensor gs = gumbel_softmax(ev.probs, noise, tau);
    Tensor dgs({4});
    for (int j = 0; j < 4; ++j) dgs.data[j] = w.data[j] + gs.data[j];
    const PolicyNet::Grads g = net.backward_from_relaxed(ev, gs, dgs, tau);

    const auto loss = [&]() {
      const Tensor p = net.eval(hidden, station).probs;
      const Tensor y = gumbel_softmax(p, noise, tau);
      double l = 0.0;
      for (int j = 0; j < 4; ++j) l += w.data[j] * y.data[j] + 0.5 * y.data[j] * y.data[j];
      return l;
    };
    const GradCheckReport report = gradcheck(
        net.params(), {g.gamma, g.beta, g.weight, g.bias}, loss);
    INFO("seed " << seed << " max rel err " << report.max_rel_err);
    REQUIRE(report.pass);
  }
}

TEST_CASE("input gradient flows through both policy backward paths") {
  Rng rng(55);
  PolicyNet net(8, 4, 4);
  randomize(net, rng);
  Tensor hidden({5});
  Tensor station({3});
  for (double& v : hidden.data) v = rng.normal();
  for (double& v : station.data) v = rng.normal();
  Tensor w({4});
  for (double& v : w.data) v = rng.uniform(-1.0, 1.0);

  const PolicyNet::Eval ev = net.eval(hidden, station);
  Tensor dprobs({4});
  for (int j = 0; j < 4; ++j) dprobs.data[j] = w.data[j];
  const PolicyNet::Grads g = net.backward_from_probs(ev, dprobs);

  // Finite differences over the concatenated input vector.
  Tensor input = ev.input;
  std::vector<ParamRef> refs = {{"input", &input}};
  const auto loss = [&]() {
    Tensor h({5}), s({3});
    std::copy(input.data.begin(), input.data.begin() + 5, h.data.begin());
    std::copy(input.data.begin() + 5, input.data.end(), s.data.begin());
    const Tensor p = net.eval(h, s).probs;
    double l = 0.0;
    for (int j = 0; j < 4; ++j) l += w.data[j] * p.data[j];
    return l;
  };
  const GradCheckReport report = gradcheck(refs, {g.input}, loss);
  REQUIRE(report.pass);
}

TEST_CASE("policy flops count the norm, head, and softmax") {
  PolicyNet net(12, 4, 4);
  const std::int64_t expected = net.norm.flops({12}) + net.head.flops({12}) + 4 * 4;
  REQUIRE(net.flops() == expected);
  REQUIRE(net.flops() > 0);
}
