#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "clipforge/layers.hpp"
#include "clipforge/rng.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

// The discrete action menu: action j merges frame_counts[j] upcoming frames
// and processes the merged frame at resolutions[j]. Larger merges pair with
// coarser resolutions, so counts increase while resolutions decrease.
struct ActionSpace {
  std::vector<int> frame_counts;  // strictly increasing, >= 1
  std::vector<int> resolutions;   // strictly decreasing, >= 1

  ActionSpace() : frame_counts{1, 3, 5, 7}, resolutions{32, 24, 16, 12} {}
  ActionSpace(std::vector<int> counts, std::vector<int> res)
      : frame_counts(std::move(counts)), resolutions(std::move(res)) {
    validate();
  }

  int size() const { return static_cast<int>(frame_counts.size()); }

  void validate() const {
    require(!frame_counts.empty(), "action space must not be empty");
    require(frame_counts.size() == resolutions.size(),
            strformat("action space: %zu frame counts vs %zu resolutions", frame_counts.size(),
                      resolutions.size()));
    for (std::size_t i = 0; i < frame_counts.size(); ++i) {
      require(frame_counts[i] >= 1, "frame counts must be >= 1");
      require(resolutions[i] >= 1, "resolutions must be >= 1");
      if (i > 0) {
        require(frame_counts[i] > frame_counts[i - 1], "frame counts must be strictly increasing");
        require(resolutions[i] < resolutions[i - 1], "resolutions must be strictly decreasing");
      }
    }
  }

  int full_resolution() const { return resolutions.front(); }
};

// A categorical distribution over actions (softmax output: strictly positive,
// sums to one).
struct ActionDistribution {
  Tensor probs;

  void validate() const {
    require(probs.rank() == 1 && probs.numel() >= 1, "action distribution must be a vector");
    double sum = 0.0;
    for (double p : probs.data) {
      require(p > 0.0 && p < 1.0 + 1e-12, "action probabilities must lie in (0,1)");
      sum += p;
    }
    require(std::fabs(sum - 1.0) < 1e-9, strformat("action probabilities sum to %.12f", sum));
  }
};

// Linear temperature decay from `initial` to `floor` over `total_steps`;
// clamped at the floor afterwards.
struct TemperatureSchedule {
  double initial = 5.0;
  double floor = 0.01;
  long total_steps = 1;

  double at(long step) const {
    require(initial > 0.0 && floor > 0.0 && floor <= initial, "invalid temperature schedule");
    require(step >= 0, "schedule step must be non-negative");
    if (total_steps <= 0) return floor;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return initial + (floor - initial) * frac;
  }
};

// Hard sample: argmax_j(log p_j + G_j). Ties resolve to the smaller index.
inline int gumbel_max(const Tensor& probs, const Tensor& noise) {
  require(probs.shape == noise.shape && probs.rank() == 1, "gumbel_max: probs/noise mismatch");
  int best = 0;
  double best_v = std::log(probs[0]) + noise[0];
  for (std::int64_t j = 1; j < probs.numel(); ++j) {
    require(probs.data[j] > 0.0, "gumbel_max requires strictly positive probabilities");
    const double v = std::log(probs.data[j]) + noise.data[j];
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(j);
    }
  }
  require(probs[0] > 0.0, "gumbel_max requires strictly positive probabilities");
  return best;
}

inline Tensor draw_gumbel_noise(int n, Rng& rng) {
  Tensor noise({n});
  for (double& v : noise.data) v = rng.gumbel();
  return noise;
}

inline int gumbel_max(const Tensor& probs, Rng& rng, Tensor* noise_out = nullptr) {
  Tensor noise = draw_gumbel_noise(static_cast<int>(probs.numel()), rng);
  const int a = gumbel_max(probs, noise);
  if (noise_out != nullptr) *noise_out = std::move(noise);
  return a;
}

// Relaxed sample: softmax((log p + G) / tau). Shares the noise vector with
// gumbel_max so the two paths agree on the winning action as tau -> 0.
inline Tensor gumbel_softmax(const Tensor& probs, const Tensor& noise, double tau) {
  require(tau > 0.0, strformat("gumbel_softmax: tau must be positive, got %g", tau));
  require(probs.shape == noise.shape && probs.rank() == 1, "gumbel_softmax: probs/noise mismatch");
  Tensor y(probs.shape);
  for (std::int64_t j = 0; j < probs.numel(); ++j) {
    require(probs.data[j] > 0.0, "gumbel_softmax requires strictly positive probabilities");
    y.data[j] = (std::log(probs.data[j]) + noise.data[j]) / tau;
  }
  Softmax softmax;
  return softmax.forward(y);
}

// ---------------------------------------------------------------------------
// Policy head: GroupNorm over the concatenated [hidden : station] vector,
// one dense layer, softmax over the action menu.
// ---------------------------------------------------------------------------
struct PolicyNet {
  GroupNorm norm;
  Dense head;

  PolicyNet() = default;
  PolicyNet(int input_dim, int num_actions, int groups)
      : norm(input_dim, groups), head(input_dim, num_actions) {}

  static PolicyNet init(int input_dim, int num_actions, int groups, Rng& rng) {
    PolicyNet p(input_dim, num_actions, groups);
    p.head = Dense::init(input_dim, num_actions, rng);
    return p;
  }

  int input_dim() const { return norm.channels; }
  int num_actions() const { return head.out_dim; }

  // Cached intermediates for the backward pass.
  struct Eval {
    Tensor input;   // [hidden + station]
    Tensor normed;
    Tensor logits;
    Tensor probs;
  };

  Eval eval(const Tensor& hidden, const Tensor& station) const {
    Eval ev;
    ev.input = Tensor({static_cast<int>(hidden.numel() + station.numel())});
    std::copy(hidden.data.begin(), hidden.data.end(), ev.input.data.begin());
    std::copy(station.data.begin(), station.data.end(), ev.input.data.begin() + hidden.numel());
    require(ev.input.numel() == norm.channels,
            strformat("policy input dim %lld does not match %d",
                      static_cast<long long>(ev.input.numel()), norm.channels));
    ev.normed = norm.forward(ev.input);
    ev.logits = head.forward(ev.normed);
    Softmax softmax;
    ev.probs = softmax.forward(ev.logits);
    return ev;
  }

  ActionDistribution forward(const Tensor& hidden, const Tensor& station) const {
    return ActionDistribution{eval(hidden, station).probs};
  }

  struct Grads {
    Tensor gamma, beta;    // groupnorm
    Tensor weight, bias;   // dense
    Tensor input;

    void init(const PolicyNet& net) {
      gamma = Tensor(net.norm.gamma.shape);
      beta = Tensor(net.norm.beta.shape);
      weight = Tensor(net.head.weight.shape);
      bias = Tensor(net.head.bias.shape);
      input = Tensor({net.norm.channels});
    }

    void accumulate(const Grads& other) {
      gamma += other.gamma;
      beta += other.beta;
      weight += other.weight;
      bias += other.bias;
      input += other.input;
    }

    void scale(double s) {
      gamma *= s;
      beta *= s;
      weight *= s;
      bias *= s;
      input *= s;
    }
  };

  // Backward from a gradient w.r.t. the pre-softmax logits.
  Grads backward_from_logits(const Eval& ev, const Tensor& dlogits) const {
    LayerGrads dense_grads = head.backward(ev.normed, dlogits);
    LayerGrads norm_grads = norm.backward(ev.input, dense_grads.input);
    Grads g;
    g.weight = std::move(dense_grads.params[0]);
    g.bias = std::move(dense_grads.params[1]);
    g.gamma = std::move(norm_grads.params[0]);
    g.beta = std::move(norm_grads.params[1]);
    g.input = std::move(norm_grads.input);
    return g;
  }

  // Backward from a gradient w.r.t. the probabilities (softmax jacobian, then
  // the layers).
  Grads backward_from_probs(const Eval& ev, const Tensor& dprobs) const {
    double dot = 0.0;
    for (std::int64_t j = 0; j < dprobs.numel(); ++j) dot += dprobs.data[j] * ev.probs.data[j];
    Tensor dlogits(ev.logits.shape);
    for (std::int64_t j = 0; j < dprobs.numel(); ++j) {
      dlogits.data[j] = ev.probs.data[j] * (dprobs.data[j] - dot);
    }
    return backward_from_logits(ev, dlogits);
  }

  // Backward from a gradient w.r.t. the relaxed sample gs =
  // softmax((log p + G)/tau): softmax jacobian at gs, scale by 1/tau, then
  // the log-softmax jacobian back to the logits.
  Grads backward_from_relaxed(const Eval& ev, const Tensor& gs, const Tensor& dgs,
                              double tau) const {
    require(tau > 0.0, "backward_from_relaxed: tau must be positive");
    double dot = 0.0;
    for (std::int64_t j = 0; j < dgs.numel(); ++j) dot += dgs.data[j] * gs.data[j];
    // dL/d log p_j, via dy_j = (1/tau) dlog p_j.
    Tensor dlogp(ev.probs.shape);
    double sum_dlogp = 0.0;
    for (std::int64_t j = 0; j < dgs.numel(); ++j) {
      dlogp.data[j] = gs.data[j] * (dgs.data[j] - dot) / tau;
      sum_dlogp += dlogp.data[j];
    }
    // log p = log softmax(z): dz_i = dlogp_i - p_i * sum_j dlogp_j.
    Tensor dlogits(ev.logits.shape);
    for (std::int64_t j = 0; j < dgs.numel(); ++j) {
      dlogits.data[j] = dlogp.data[j] - ev.probs.data[j] * sum_dlogp;
    }
    return backward_from_logits(ev, dlogits);
  }

  std::int64_t flops() const {
    return norm.flops({norm.channels}) + head.flops({norm.channels}) + 4ll * head.out_dim;
  }

  std::vector<ParamRef> params() {
    return {{"norm.gamma", &norm.gamma},
            {"norm.beta", &norm.beta},
            {"head.weight", &head.weight},
            {"head.bias", &head.bias}};
  }
};

// Deterministic argmax with ties resolving to the smaller index.
inline int argmax_index(const Tensor& v) {
  int best = 0;
  for (std::int64_t j = 1; j < v.numel(); ++j) {
    if (v.data[j] > v.data[best]) best = static_cast<int>(j);
  }
  return best;
}

}  // namespace clipforge
