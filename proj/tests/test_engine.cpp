#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "clipforge/engine.hpp"
#include "clipforge/rng.hpp"

using namespace clipforge;

namespace {

// Small random video with 1x8x8 frames.
VideoSample make_video(int length, Rng& rng) {
  VideoSample v;
  v.source_id = "t";
  v.label = 1;
  for (int t = 0; t < length; ++t) {
    Tensor px({1, 8, 8});
    for (double& p : px.data) p = rng.uniform();
    v.frames.emplace_back(std::move(px), t % 3 == 0 ? 1 : 0);
  }
  return v;
}

struct Rig {
  ActionSpace actions{{1, 3, 5, 7}, {8, 6, 5, 4}};
  FeatureCnn cnn;
  GruCell gru;
  PolicyNet policy;

  explicit Rig(std::uint64_t seed) {
    Rng rng(seed);
    FeatureCnnConfig cfg;
    cfg.in_channels = 1;
    cfg.widths = {8};
    cfg.norm_groups = 8;
    cnn = make_feature_cnn(cfg, rng);
    gru = GruCell::init(8, 8, rng);
    policy = PolicyNet::init(16, actions.size(), 4, rng);
    for (double& v : policy.head.weight.data) v = rng.uniform(-0.6, 0.6);
  }
};

}  // namespace

TEST_CASE("clip mixup blends endpoints and ORs labels") {
  Rng rng(3);
  const VideoSample v = make_video(6, rng);

  // lambda=1 keeps the first frame, lambda=0 the last.
  const Frame first = clip_mixup(v.frames, 1, 5, 1.0);
  REQUIRE(first.pixels.data == v.frames[1].pixels.data);
  const Frame last = clip_mixup(v.frames, 1, 5, 0.0);
  REQUIRE(last.pixels.data == v.frames[4].pixels.data);

  // Generic lambda is the convex combination.
  const Frame mid = clip_mixup(v.frames, 0, 4, 0.3);
  for (std::int64_t i = 0; i < mid.pixels.numel(); ++i) {
    REQUIRE(mid.pixels.data[i] ==
            Catch::Approx(0.3 * v.frames[0].pixels.data[i] + 0.7 * v.frames[3].pixels.data[i])
                .margin(1e-12));
  }

  // Length-1 clips pass through untouched (lambda irrelevant).
  const Frame solo = clip_mixup(v.frames, 2, 3, 0.123);
  REQUIRE(solo.pixels.data == v.frames[2].pixels.data);

  // Label is the OR of the clip's frame labels (frames 0 and 3 are positive).
  REQUIRE(clip_mixup(v.frames, 0, 2, 0.5).label == 1);
  REQUIRE(clip_mixup(v.frames, 1, 3, 0.5).label == 0);
  REQUIRE(clip_mixup(v.frames, 1, 4, 0.5).label == 1);
}

TEST_CASE("clip mixup rejects bad ranges and weights") {
  Rng rng(4);
  const VideoSample v = make_video(4, rng);
  REQUIRE_THROWS_AS(clip_mixup(v.frames, 2, 2, 0.5), Error);
  REQUIRE_THROWS_AS(clip_mixup(v.frames, 0, 5, 0.5), Error);
  REQUIRE_THROWS_AS(clip_mixup(v.frames, 0, 2, -0.1), Error);
  REQUIRE_THROWS_AS(clip_mixup(v.frames, 0, 2, 1.1), Error);
}

TEST_CASE("mixup weights follow the symmetric Beta") {
  Rng rng(9);
  const long draws = 100000;
  double sum = 0.0, sq = 0.0;
  for (long i = 0; i < draws; ++i) {
    const double l = sample_lambda(0.3, rng);
    REQUIRE(l >= 0.0);
    REQUIRE(l <= 1.0);
    sum += l;
    sq += l * l;
  }
  const double mean = sum / draws;
  const double var = sq / draws - mean * mean;
  REQUIRE(mean == Catch::Approx(0.5).margin(0.01));
  // Var[Beta(a,a)] = 1/(4(2a+1)).
  REQUIRE(var == Catch::Approx(1.0 / (4.0 * (2.0 * 0.3 + 1.0))).margin(0.01));
  REQUIRE_THROWS_AS(sample_lambda(0.0, rng), Error);
}

TEST_CASE("station indices sit at uniform interior positions") {
  REQUIRE(station_indices(64, 2) == std::vector<int>{21, 43});
  REQUIRE(station_indices(64, 1) == std::vector<int>{32});
  REQUIRE(station_indices(64, 0).empty());
  REQUIRE(station_indices(1, 1) == std::vector<int>{0});
  // Rounding collisions on tiny videos resolve to distinct in-range indices.
  REQUIRE(station_indices(3, 3) == std::vector<int>{0, 1, 2});
  REQUIRE_THROWS_AS(station_indices(3, 4), Error);
  REQUIRE_THROWS_AS(station_indices(0, 0), Error);

  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int L = 1 + static_cast<int>(rng.below(50));
    const int count = static_cast<int>(rng.below(static_cast<std::uint64_t>(L + 1)));
    const std::vector<int> idx = station_indices(L, count);
    REQUIRE(static_cast<int>(idx.size()) == count);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      REQUIRE(idx[j] >= 0);
      REQUIRE(idx[j] < L);
      if (j > 0) REQUIRE(idx[j] > idx[j - 1]);
    }
  }
}

TEST_CASE("future station lookup returns the next index's feature") {
  StationPointSet set;
  set.feature_dim = 2;
  set.indices = {5, 11};
  Tensor f0({2}), f1({2});
  f0.data = {1.0, 2.0};
  f1.data = {3.0, 4.0};
  set.features = {f0, f1};

  REQUIRE(nearest_future_station(0, set).data == f0.data);
  REQUIRE(nearest_future_station(4, set).data == f0.data);
  REQUIRE(nearest_future_station(5, set).data == f1.data);   // strictly greater
  REQUIRE(nearest_future_station(10, set).data == f1.data);
  REQUIRE(nearest_future_station(11, set).data == f1.data);  // past the last: reuse
  REQUIRE(nearest_future_station(40, set).data == f1.data);

  StationPointSet empty;
  empty.feature_dim = 3;
  const Tensor z = nearest_future_station(7, empty);
  REQUIRE(z.shape == Shape{3});
  for (double v : z.data) REQUIRE(v == 0.0);
}

TEST_CASE("episodes consume every frame exactly once") {
  Rig rig(101);
  Rng rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    const int L = 1 + static_cast<int>(rng.below(40));
    const VideoSample v = make_video(L, rng);
    StationPointSet stations =
        extract_station_points(v, std::min(2, L), rig.cnn, rig.actions.full_resolution());

    EpisodeOptions opts;
    const bool forced = rng.below(4) == 0;
    Rng episode_rng = Rng::derive(303, {static_cast<std::uint64_t>(trial)});
    if (forced) {
      opts.forced_action = static_cast<int>(rng.below(4));
    } else {
      opts.mode = EpisodeMode::Sample;
      opts.tau = 0.8;
      opts.rng = &episode_rng;
    }
    const EpisodeResult ep = run_episode(v, rig.actions, rig.cnn, rig.gru,
                                         forced ? nullptr : &rig.policy, stations, opts);

    // Conservation: consumed clips tile the video exactly.
    long consumed = 0;
    int cursor = 0;
    for (const StepRecord& rec : ep.steps) {
      REQUIRE(rec.cursor == cursor);
      REQUIRE(rec.consumed >= 1);
      REQUIRE(rec.consumed <= rig.actions.frame_counts[rec.action]);
      cursor += rec.consumed;
      consumed += rec.consumed;
    }
    REQUIRE(consumed == L);

    // Ledger: one entry per step, total equals the sum of step costs.
    REQUIRE(ep.ledger.per_step.size() == ep.steps.size());
    std::int64_t total = 0;
    for (std::size_t i = 0; i < ep.steps.size(); ++i) {
      REQUIRE(ep.ledger.per_step[i].first == ep.steps[i].step);
      REQUIRE(ep.ledger.per_step[i].second == ep.steps[i].flops);
      total += ep.steps[i].flops;
    }
    REQUIRE(ep.ledger.total_video == total);
    REQUIRE(ep.ledger.per_frame(L) == Catch::Approx(static_cast<double>(total) / L));
  }
}

TEST_CASE("processing trails the chosen action by one step") {
  Rig rig(55);
  Rng rng(56);
  const VideoSample v = make_video(20, rng);
  StationPointSet stations;
  stations.feature_dim = 8;

  EpisodeOptions opts;
  opts.forced_action = 2;  // k=5 at resolution 5
  const EpisodeResult ep = run_episode(v, rig.actions, rig.cnn, rig.gru, nullptr, stations, opts);

  REQUIRE(ep.steps.size() == 4);  // ceil(20/5)
  REQUIRE(ep.steps[0].resolution == rig.actions.full_resolution());
  for (std::size_t i = 1; i < ep.steps.size(); ++i) {
    REQUIRE(ep.steps[i].resolution == rig.actions.resolutions[2]);
  }
  // Step cost reflects the processed resolution, not the chosen action.
  REQUIRE(ep.steps[0].flops == rig.cnn.flops(8) + rig.gru.step_flops());
  REQUIRE(ep.steps[1].flops == rig.cnn.flops(5) + rig.gru.step_flops());
}

TEST_CASE("fixed-action ledgers match the closed form") {
  Rig rig(77);
  Rng rng(78);
  for (const int L : {1, 5, 7, 13, 32, 64}) {
    const VideoSample v = make_video(L, rng);
    StationPointSet stations;
    stations.feature_dim = 8;
    for (int a = 0; a < rig.actions.size(); ++a) {
      EpisodeOptions opts;
      opts.forced_action = a;
      const EpisodeResult ep =
          run_episode(v, rig.actions, rig.cnn, rig.gru, nullptr, stations, opts);
      REQUIRE(ep.ledger.total_video == fixed_action_flops(rig.actions, rig.cnn, rig.gru, L, a));
    }
  }
}

TEST_CASE("larger merges at coarser resolutions cost strictly less") {
  Rig rig(88);
  const int L = 32;
  std::int64_t prev = 0;
  for (int a = 0; a < rig.actions.size(); ++a) {
    const std::int64_t cost = fixed_action_flops(rig.actions, rig.cnn, rig.gru, L, a);
    if (a > 0) REQUIRE(cost < prev);
    prev = cost;
  }
  // The cheapest action beats the always-finest baseline by a wide margin.
  const std::int64_t finest = fixed_action_flops(rig.actions, rig.cnn, rig.gru, L, 0);
  const std::int64_t coarsest = fixed_action_flops(rig.actions, rig.cnn, rig.gru, L, 3);
  REQUIRE(coarsest * 2 < finest);
}

TEST_CASE("argmax episodes are deterministic; sampled ones follow the seed") {
  Rig rig(91);
  Rng rng(92);
  const VideoSample v = make_video(24, rng);
  StationPointSet stations = extract_station_points(v, 2, rig.cnn, rig.actions.full_resolution());

  EpisodeOptions opts;  // argmax defaults
  const EpisodeResult a = run_episode(v, rig.actions, rig.cnn, rig.gru, &rig.policy, stations, opts);
  const EpisodeResult b = run_episode(v, rig.actions, rig.cnn, rig.gru, &rig.policy, stations, opts);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    REQUIRE(a.steps[i].action == b.steps[i].action);
    REQUIRE(a.steps[i].flops == b.steps[i].flops);
    REQUIRE(a.steps[i].lambda == 0.5);  // fixed eval mixup weight
  }
  REQUIRE(a.h_final.data == b.h_final.data);

  EpisodeOptions s1;
  s1.mode = EpisodeMode::Sample;
  s1.tau = 1.0;
  Rng r1(1234), r2(1234), r3(77);
  s1.rng = &r1;
  const EpisodeResult e1 = run_episode(v, rig.actions, rig.cnn, rig.gru, &rig.policy, stations, s1);
  s1.rng = &r2;
  const EpisodeResult e2 = run_episode(v, rig.actions, rig.cnn, rig.gru, &rig.policy, stations, s1);
  REQUIRE(e1.steps.size() == e2.steps.size());
  for (std::size_t i = 0; i < e1.steps.size(); ++i) {
    REQUIRE(e1.steps[i].action == e2.steps[i].action);
    REQUIRE(e1.steps[i].lambda == e2.steps[i].lambda);
    REQUIRE(e1.steps[i].noise.data == e2.steps[i].noise.data);
  }
  s1.rng = &r3;
  const EpisodeResult e3 = run_episode(v, rig.actions, rig.cnn, rig.gru, &rig.policy, stations, s1);
  bool any_noise_differs = false;
  for (std::size_t i = 0; i < std::min(e1.steps.size(), e3.steps.size()); ++i) {
    if (e1.steps[i].noise.data != e3.steps[i].noise.data) any_noise_differs = true;
  }
  REQUIRE(any_noise_differs);
}

TEST_CASE("single-frame videos run one full-resolution step") {
  Rig rig(33);
  Rng rng(34);
  const VideoSample v = make_video(1, rng);
  StationPointSet stations;
  stations.feature_dim = 8;
  EpisodeOptions opts;
  opts.forced_action = 3;
  const EpisodeResult ep = run_episode(v, rig.actions, rig.cnn, rig.gru, nullptr, stations, opts);
  REQUIRE(ep.steps.size() == 1);
  REQUIRE(ep.steps[0].consumed == 1);
  REQUIRE(ep.steps[0].resolution == rig.actions.full_resolution());
  REQUIRE(ep.ledger.total_video == rig.cnn.flops(8) + rig.gru.step_flops());
  for (double h0 : ep.steps[0].h_prev.data) REQUIRE(h0 == 0.0);
}

TEST_CASE("episode preconditions are enforced") {
  Rig rig(44);
  Rng rng(45);
  const VideoSample v = make_video(4, rng);
  StationPointSet stations;
  stations.feature_dim = 8;

  EpisodeOptions needs_rng;
  needs_rng.mode = EpisodeMode::Sample;
  REQUIRE_THROWS_AS(run_episode(v, rig.actions, rig.cnn, rig.gru, &rig.policy, stations, needs_rng),
                    Error);

  EpisodeOptions bad_action;
  bad_action.forced_action = 4;
  REQUIRE_THROWS_AS(run_episode(v, rig.actions, rig.cnn, rig.gru, nullptr, stations, bad_action),
                    Error);

  EpisodeOptions no_policy;
  REQUIRE_THROWS_AS(run_episode(v, rig.actions, rig.cnn, rig.gru, nullptr, stations, no_policy),
                    Error);

  VideoSample empty;
  EpisodeOptions forced;
  forced.forced_action = 0;
  REQUIRE_THROWS_AS(run_episode(empty, rig.actions, rig.cnn, rig.gru, nullptr, stations, forced),
                    Error);
}

TEST_CASE("station features are full-resolution CNN outputs at the indices") {
  Rig rig(66);
  Rng rng(67);
  const VideoSample v = make_video(10, rng);
  const StationPointSet set = extract_station_points(v, 2, rig.cnn, 8);
  REQUIRE(set.count() == 2);
  for (int i = 0; i < 2; ++i) {
    const Tensor expect = rig.cnn.forward(resize_bilinear(v.frames[set.indices[i]].pixels, 8));
    REQUIRE(set.features[i].data == expect.data);
  }
}
