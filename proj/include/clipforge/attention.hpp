#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clipforge/layers.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

// Channel shuffle: reshape [G, C/G] -> transpose -> flatten, applied to the
// channel axis of a [C] or [C,H,W] tensor. A bijection for every C divisible
// by G; e.g. C=4, G=2 maps [c0,c1,c2,c3] -> [c0,c2,c1,c3].
inline std::vector<int> channel_shuffle_map(int channels, int groups) {
  require(groups >= 1 && channels % groups == 0,
          strformat("channel shuffle: %d channels not divisible by %d groups", channels, groups));
  const int per = channels / groups;
  std::vector<int> map(static_cast<std::size_t>(channels));
  for (int j = 0; j < per; ++j) {
    for (int g = 0; g < groups; ++g) {
      map[static_cast<std::size_t>(j) * groups + g] = g * per + j;  // out[j*G+g] = in[g*per+j]
    }
  }
  return map;
}

inline Tensor channel_shuffle(const Tensor& x, int groups) {
  require(x.rank() == 1 || x.rank() == 3,
          strformat("channel shuffle: expected [C] or [C,H,W], got %s", shape_str(x.shape).c_str()));
  const int channels = x.shape[0];
  const int spatial = static_cast<int>(x.numel() / channels);
  const std::vector<int> map = channel_shuffle_map(channels, groups);
  Tensor y(x.shape);
  for (int c = 0; c < channels; ++c) {
    const std::size_t dst = static_cast<std::size_t>(c) * spatial;
    const std::size_t src = static_cast<std::size_t>(map[c]) * spatial;
    std::copy(x.data.begin() + src, x.data.begin() + src + spatial, y.data.begin() + dst);
  }
  return y;
}

// ---------------------------------------------------------------------------
// channel-attention (CBAM channel gate): average- and max-pooled channel
// descriptors pass through a shared bottleneck MLP; the summed outputs gate
// the channels through a sigmoid. Zero weights and biases give a uniform
// 0.5 gate.
// FLOPs: 3*C*H*W (two pools + scale) + 8*C*Cr (MLP both paths) + 2*Cr + 5*C.
// ---------------------------------------------------------------------------
struct ChannelAttention {
  int channels = 0;
  int reduction = 16;
  Tensor w1, b1;  // [Cr, C], [Cr]
  Tensor w2, b2;  // [C, Cr], [C]

  ChannelAttention() = default;
  ChannelAttention(int c, int reduction_)
      : channels(c), reduction(reduction_), w1({reduced(), c}), b1({reduced()}),
        w2({c, reduced()}), b2({c}) {}

  static ChannelAttention init(int c, int reduction, Rng& rng) {
    ChannelAttention a(c, reduction);
    const int cr = a.reduced();
    const double l1 = std::sqrt(6.0 / (c + cr));
    a.w1 = Tensor::uniform({cr, c}, l1, rng);
    a.w2 = Tensor::uniform({c, cr}, l1, rng);
    return a;
  }

  int reduced() const { return std::max(1, channels / reduction); }

  LayerKind kind() const { return LayerKind::kChannelAttention; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 3 && in[0] == channels,
            strformat("channel-attention: expected [%d,H,W], got %s", channels,
                      shape_str(in).c_str()));
    return in;
  }

  Tensor forward(const Tensor& x) const {
    out_shape(x.shape);
    const int spatial = x.shape[1] * x.shape[2];
    Tensor gate = gate_values(x, spatial);
    Tensor y(x.shape);
    for (int c = 0; c < channels; ++c) {
      for (int s = 0; s < spatial; ++s) {
        const std::size_t i = static_cast<std::size_t>(c) * spatial + s;
        y.data[i] = x.data[i] * gate[c];
      }
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    out_shape(x.shape);
    require(g.shape == x.shape, "channel-attention upstream shape mismatch");
    const int spatial = x.shape[1] * x.shape[2];
    const int cr = reduced();

    // Recompute the forward intermediates.
    Tensor avg({channels}), mx({channels});
    std::vector<int> argmax(static_cast<std::size_t>(channels));
    pool(x, spatial, avg, mx, argmax);
    Tensor a1_avg({cr}), h1_avg({cr}), z_avg({channels});
    Tensor a1_max({cr}), h1_max({cr}), z_max({channels});
    mlp(avg, a1_avg, h1_avg, z_avg);
    mlp(mx, a1_max, h1_max, z_max);
    Tensor gate({channels});
    for (int c = 0; c < channels; ++c) gate[c] = sigmoid_scalar(z_avg[c] + z_max[c]);

    LayerGrads out;
    out.input = Tensor(x.shape);
    Tensor dgate({channels});
    for (int c = 0; c < channels; ++c) {
      for (int s = 0; s < spatial; ++s) {
        const std::size_t i = static_cast<std::size_t>(c) * spatial + s;
        dgate[c] += g.data[i] * x.data[i];
        out.input.data[i] = g.data[i] * gate[c];
      }
    }
    Tensor dz({channels});
    for (int c = 0; c < channels; ++c) dz[c] = dgate[c] * gate[c] * (1.0 - gate[c]);

    Tensor dw1(w1.shape), db1(b1.shape), dw2(w2.shape), db2(b2.shape);
    Tensor davg({channels}), dmx({channels});
    mlp_backward(avg, a1_avg, h1_avg, dz, dw1, db1, dw2, db2, davg);
    mlp_backward(mx, a1_max, h1_max, dz, dw1, db1, dw2, db2, dmx);

    for (int c = 0; c < channels; ++c) {
      const double per = davg[c] / spatial;
      for (int s = 0; s < spatial; ++s) {
        out.input.data[static_cast<std::size_t>(c) * spatial + s] += per;
      }
      out.input.data[static_cast<std::size_t>(c) * spatial + argmax[c]] += dmx[c];
    }
    out.params = {std::move(dw1), std::move(db1), std::move(dw2), std::move(db2)};
    return out;
  }

  std::int64_t flops(const Shape& in) const {
    out_shape(in);
    const std::int64_t chw = shape_numel(in);
    const std::int64_t cr = reduced();
    return 3 * chw + 8ll * channels * cr + 2 * cr + 5ll * channels;
  }

  std::vector<ParamRef> params() {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
  }

 private:
  Tensor gate_values(const Tensor& x, int spatial) const {
    const int cr = reduced();
    Tensor avg({channels}), mx({channels});
    std::vector<int> argmax(static_cast<std::size_t>(channels));
    pool(x, spatial, avg, mx, argmax);
    Tensor a1({cr}), h1({cr}), z_avg({channels}), z_max({channels});
    mlp(avg, a1, h1, z_avg);
    mlp(mx, a1, h1, z_max);
    Tensor gate({channels});
    for (int c = 0; c < channels; ++c) gate[c] = sigmoid_scalar(z_avg[c] + z_max[c]);
    return gate;
  }

  void pool(const Tensor& x, int spatial, Tensor& avg, Tensor& mx, std::vector<int>& argmax) const {
    for (int c = 0; c < channels; ++c) {
      const std::size_t base = static_cast<std::size_t>(c) * spatial;
      double acc = 0.0;
      double best = x.data[base];
      int best_i = 0;
      for (int s = 0; s < spatial; ++s) {
        const double v = x.data[base + s];
        acc += v;
        if (v > best) {
          best = v;
          best_i = s;
        }
      }
      avg[c] = acc / spatial;
      mx[c] = best;
      argmax[c] = best_i;
    }
  }

  void mlp(const Tensor& v, Tensor& a1, Tensor& h1, Tensor& z) const {
    const int cr = reduced();
    for (int r = 0; r < cr; ++r) {
      double acc = b1[r];
      for (int c = 0; c < channels; ++c) acc += w1.at2(r, c) * v[c];
      a1[r] = acc;
      h1[r] = acc > 0.0 ? acc : 0.0;
    }
    for (int c = 0; c < channels; ++c) {
      double acc = b2[c];
      for (int r = 0; r < cr; ++r) acc += w2.at2(c, r) * h1[r];
      z[c] = acc;
    }
  }

  void mlp_backward(const Tensor& v, const Tensor& a1, const Tensor& h1, const Tensor& dz,
                    Tensor& dw1, Tensor& db1, Tensor& dw2, Tensor& db2, Tensor& dv) const {
    const int cr = reduced();
    Tensor dh1({cr});
    for (int c = 0; c < channels; ++c) {
      db2[c] += dz[c];
      for (int r = 0; r < cr; ++r) {
        dw2.at2(c, r) += dz[c] * h1[r];
        dh1[r] += w2.at2(c, r) * dz[c];
      }
    }
    for (int r = 0; r < cr; ++r) {
      const double da1 = a1[r] > 0.0 ? dh1[r] : 0.0;
      db1[r] += da1;
      for (int c = 0; c < channels; ++c) {
        dw1.at2(r, c) += da1 * v[c];
        dv[c] += w1.at2(r, c) * da1;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// spatial-attention (CBAM spatial gate): channel-wise mean and max maps are
// stacked into [2,H,W], convolved down to one channel (odd kernel, same
// padding), and the sigmoid output gates every channel.
// FLOPs: 2*C*H*W (stats) + conv + 4*H*W (sigmoid) + C*H*W (scale).
// ---------------------------------------------------------------------------
struct SpatialAttention {
  Conv2d conv;  // 2 -> 1 channels

  explicit SpatialAttention(int kernel = 7) : conv(2, 1, kernel, 1, (kernel - 1) / 2) {
    require(kernel % 2 == 1, strformat("spatial-attention: kernel must be odd, got %d", kernel));
  }

  static SpatialAttention init(int kernel, Rng& rng) {
    SpatialAttention a(kernel);
    const double limit = std::sqrt(6.0 / (2.0 * kernel * kernel + 1.0 * kernel * kernel));
    a.conv.weight = Tensor::uniform(a.conv.weight.shape, limit, rng);
    return a;
  }

  LayerKind kind() const { return LayerKind::kSpatialAttention; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 3, strformat("spatial-attention: expected [C,H,W], got %s",
                                      shape_str(in).c_str()));
    return in;
  }

  Tensor forward(const Tensor& x) const {
    out_shape(x.shape);
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor stacked = stats(x);
    Tensor pre = conv.forward(stacked);
    Tensor y(x.shape);
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h * w; ++i) {
        y.data[static_cast<std::size_t>(ch) * h * w + i] =
            x.data[static_cast<std::size_t>(ch) * h * w + i] * sigmoid_scalar(pre.data[i]);
      }
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    out_shape(x.shape);
    require(g.shape == x.shape, "spatial-attention upstream shape mismatch");
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    const int hw = h * w;
    Tensor stacked = stats(x);
    Tensor pre = conv.forward(stacked);

    LayerGrads out;
    out.input = Tensor(x.shape);
    Tensor dpre(pre.shape);
    for (int i = 0; i < hw; ++i) {
      const double m = sigmoid_scalar(pre.data[i]);
      double dm = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t idx = static_cast<std::size_t>(ch) * hw + i;
        dm += g.data[idx] * x.data[idx];
        out.input.data[idx] = g.data[idx] * m;
      }
      dpre.data[i] = dm * m * (1.0 - m);
    }
    LayerGrads conv_grads = conv.backward(stacked, dpre);
    // Route the stacked-map gradient back through mean and max.
    for (int i = 0; i < hw; ++i) {
      const double dmean = conv_grads.input.data[i] / c;
      double best = x.data[i];
      int best_c = 0;
      for (int ch = 1; ch < c; ++ch) {
        const double v = x.data[static_cast<std::size_t>(ch) * hw + i];
        if (v > best) {
          best = v;
          best_c = ch;
        }
      }
      for (int ch = 0; ch < c; ++ch) out.input.data[static_cast<std::size_t>(ch) * hw + i] += dmean;
      out.input.data[static_cast<std::size_t>(best_c) * hw + i] +=
          conv_grads.input.data[static_cast<std::size_t>(hw) + i];
    }
    out.params = std::move(conv_grads.params);
    return out;
  }

  std::int64_t flops(const Shape& in) const {
    out_shape(in);
    const std::int64_t chw = shape_numel(in);
    const std::int64_t hw = static_cast<std::int64_t>(in[1]) * in[2];
    return 2 * chw + conv.flops({2, in[1], in[2]}) + 4 * hw + chw;
  }

  std::vector<ParamRef> params() {
    return {{"weight", &conv.weight}, {"bias", &conv.bias}};
  }

 private:
  Tensor stats(const Tensor& x) const {
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    const int hw = h * w;
    Tensor stacked({2, h, w});
    for (int i = 0; i < hw; ++i) {
      double acc = 0.0;
      double best = x.data[i];
      for (int ch = 0; ch < c; ++ch) {
        const double v = x.data[static_cast<std::size_t>(ch) * hw + i];
        acc += v;
        best = std::max(best, v);
      }
      stacked.data[i] = acc / c;
      stacked.data[static_cast<std::size_t>(hw) + i] = best;
    }
    return stacked;
  }
};

// ---------------------------------------------------------------------------
// eca: a 1-D convolution (odd kernel, zero padding) over the channel axis of
// the pooled descriptor, plus a shared bias, gates the channels. An identity
// kernel with a large positive bias drives every gate to 1.
// FLOPs: C*H*W (pool) + 2*k*C (conv) + C (bias) + 4*C (sigmoid) + C*H*W.
// ---------------------------------------------------------------------------
struct Eca {
  int channels = 0;
  int kernel = 3;
  Tensor weight;  // [k]
  Tensor bias;    // [1]

  Eca() = default;
  Eca(int c, int k) : channels(c), kernel(k), weight({k}), bias({1}) {
    require(k % 2 == 1, strformat("eca: kernel must be odd, got %d", k));
  }

  static Eca init(int c, int k, Rng& rng) {
    Eca e(c, k);
    e.weight = Tensor::uniform({k}, std::sqrt(6.0 / (2.0 * k)), rng);
    return e;
  }

  LayerKind kind() const { return LayerKind::kEca; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 3 && in[0] == channels,
            strformat("eca: expected [%d,H,W], got %s", channels, shape_str(in).c_str()));
    return in;
  }

  Tensor forward(const Tensor& x) const {
    out_shape(x.shape);
    const int spatial = x.shape[1] * x.shape[2];
    Tensor gate = gate_values(x, spatial);
    Tensor y(x.shape);
    for (int c = 0; c < channels; ++c) {
      for (int s = 0; s < spatial; ++s) {
        const std::size_t i = static_cast<std::size_t>(c) * spatial + s;
        y.data[i] = x.data[i] * gate[c];
      }
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    out_shape(x.shape);
    require(g.shape == x.shape, "eca upstream shape mismatch");
    const int spatial = x.shape[1] * x.shape[2];
    const int half = kernel / 2;
    Tensor pooled({channels});
    for (int c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (int s = 0; s < spatial; ++s) acc += x.data[static_cast<std::size_t>(c) * spatial + s];
      pooled[c] = acc / spatial;
    }
    Tensor gate({channels});
    for (int c = 0; c < channels; ++c) {
      double acc = bias[0];
      for (int j = -half; j <= half; ++j) {
        const int cc = c + j;
        if (cc < 0 || cc >= channels) continue;
        acc += weight[j + half] * pooled[cc];
      }
      gate[c] = sigmoid_scalar(acc);
    }

    LayerGrads out;
    out.input = Tensor(x.shape);
    Tensor da({channels});
    for (int c = 0; c < channels; ++c) {
      double dgate = 0.0;
      for (int s = 0; s < spatial; ++s) {
        const std::size_t i = static_cast<std::size_t>(c) * spatial + s;
        dgate += g.data[i] * x.data[i];
        out.input.data[i] = g.data[i] * gate[c];
      }
      da[c] = dgate * gate[c] * (1.0 - gate[c]);
    }
    Tensor dw(weight.shape), db(bias.shape), dpooled({channels});
    for (int c = 0; c < channels; ++c) {
      db[0] += da[c];
      for (int j = -half; j <= half; ++j) {
        const int cc = c + j;
        if (cc < 0 || cc >= channels) continue;
        dw[j + half] += da[c] * pooled[cc];
        dpooled[cc] += da[c] * weight[j + half];
      }
    }
    for (int c = 0; c < channels; ++c) {
      const double per = dpooled[c] / spatial;
      for (int s = 0; s < spatial; ++s) {
        out.input.data[static_cast<std::size_t>(c) * spatial + s] += per;
      }
    }
    out.params = {std::move(dw), std::move(db)};
    return out;
  }

  std::int64_t flops(const Shape& in) const {
    out_shape(in);
    const std::int64_t chw = shape_numel(in);
    return chw + 2ll * kernel * channels + channels + 4ll * channels + chw;
  }

  std::vector<ParamRef> params() {
    return {{"weight", &weight}, {"bias", &bias}};
  }

 private:
  Tensor gate_values(const Tensor& x, int spatial) const {
    const int half = kernel / 2;
    Tensor pooled({channels});
    for (int c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (int s = 0; s < spatial; ++s) acc += x.data[static_cast<std::size_t>(c) * spatial + s];
      pooled[c] = acc / spatial;
    }
    Tensor gate({channels});
    for (int c = 0; c < channels; ++c) {
      double acc = bias[0];
      for (int j = -half; j <= half; ++j) {
        const int cc = c + j;
        if (cc < 0 || cc >= channels) continue;
        acc += weight[j + half] * pooled[cc];
      }
      gate[c] = sigmoid_scalar(acc);
    }
    return gate;
  }
};

// ---------------------------------------------------------------------------
// shuffle-attention: channels split into G groups; within each group, the
// first half is gated by pooled channel statistics and the second half by a
// per-channel normalized spatial map; the halves are concatenated and a
// 2-group channel shuffle interleaves the results. The per-branch affine
// parameters are shared across groups.
// ---------------------------------------------------------------------------
struct ShuffleAttention {
  int channels = 0;
  int groups = 1;
  double eps = 1e-5;
  Tensor cweight, cbias;      // [ch] channel-branch affine
  Tensor sweight, sbias;      // [ch] spatial-branch affine
  Tensor gn_gamma, gn_beta;   // [ch] per-channel normalization affine

  ShuffleAttention() = default;
  ShuffleAttention(int c, int g) : channels(c), groups(g) {
    require(g >= 1 && c % (2 * g) == 0,
            strformat("shuffle-attention: %d channels not divisible by 2*%d", c, g));
    const int ch = branch_channels();
    cweight = Tensor::zeros({ch});
    cbias = Tensor::filled({ch}, 1.0);
    sweight = Tensor::zeros({ch});
    sbias = Tensor::filled({ch}, 1.0);
    gn_gamma = Tensor::filled({ch}, 1.0);
    gn_beta = Tensor::zeros({ch});
  }

  int branch_channels() const { return channels / (2 * groups); }

  LayerKind kind() const { return LayerKind::kShuffleAttention; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 3 && in[0] == channels,
            strformat("shuffle-attention: expected [%d,H,W], got %s", channels,
                      shape_str(in).c_str()));
    return in;
  }

  Tensor forward(const Tensor& x) const {
    out_shape(x.shape);
    const int h = x.shape[1], w = x.shape[2], hw = h * w;
    const int ch = branch_channels();
    Tensor pre_shuffle(x.shape);
    for (int g = 0; g < groups; ++g) {
      const int base0 = g * 2 * ch;       // channel branch channels
      const int base1 = g * 2 * ch + ch;  // spatial branch channels
      for (int c = 0; c < ch; ++c) {
        // Channel branch: gate from the pooled descriptor.
        const std::size_t src0 = static_cast<std::size_t>(base0 + c) * hw;
        double pooled = 0.0;
        for (int s = 0; s < hw; ++s) pooled += x.data[src0 + s];
        pooled /= hw;
        const double gate = sigmoid_scalar(cweight[c] * pooled + cbias[c]);
        for (int s = 0; s < hw; ++s) pre_shuffle.data[src0 + s] = x.data[src0 + s] * gate;

        // Spatial branch: per-channel normalization, affine, sigmoid map.
        const std::size_t src1 = static_cast<std::size_t>(base1 + c) * hw;
        double mean = 0.0;
        for (int s = 0; s < hw; ++s) mean += x.data[src1 + s];
        mean /= hw;
        double var = 0.0;
        for (int s = 0; s < hw; ++s) {
          const double d = x.data[src1 + s] - mean;
          var += d * d;
        }
        var /= hw;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int s = 0; s < hw; ++s) {
          const double m = (x.data[src1 + s] - mean) * inv;
          const double u = sweight[c] * (gn_gamma[c] * m + gn_beta[c]) + sbias[c];
          pre_shuffle.data[src1 + s] = x.data[src1 + s] * sigmoid_scalar(u);
        }
      }
    }
    return channel_shuffle(pre_shuffle, 2);
  }

  LayerGrads backward(const Tensor& x, const Tensor& g_up) const {
    out_shape(x.shape);
    require(g_up.shape == x.shape, "shuffle-attention upstream shape mismatch");
    const int h = x.shape[1], w = x.shape[2], hw = h * w;
    const int ch = branch_channels();

    // Invert the final 2-group shuffle on the upstream gradient.
    const std::vector<int> map = channel_shuffle_map(channels, 2);
    Tensor g(x.shape);
    for (int c = 0; c < channels; ++c) {
      const std::size_t dst = static_cast<std::size_t>(map[c]) * hw;
      const std::size_t src = static_cast<std::size_t>(c) * hw;
      std::copy(g_up.data.begin() + src, g_up.data.begin() + src + hw, g.data.begin() + dst);
    }

    LayerGrads out;
    out.input = Tensor(x.shape);
    Tensor dcw({ch}), dcb({ch}), dsw({ch}), dsb({ch}), dgamma({ch}), dbeta({ch});

    for (int grp = 0; grp < groups; ++grp) {
      const int base0 = grp * 2 * ch;
      const int base1 = grp * 2 * ch + ch;
      for (int c = 0; c < ch; ++c) {
        // Channel branch backward.
        const std::size_t src0 = static_cast<std::size_t>(base0 + c) * hw;
        double pooled = 0.0;
        for (int s = 0; s < hw; ++s) pooled += x.data[src0 + s];
        pooled /= hw;
        const double t = cweight[c] * pooled + cbias[c];
        const double gate = sigmoid_scalar(t);
        double dgate = 0.0;
        for (int s = 0; s < hw; ++s) {
          dgate += g.data[src0 + s] * x.data[src0 + s];
          out.input.data[src0 + s] = g.data[src0 + s] * gate;
        }
        const double dt = dgate * gate * (1.0 - gate);
        dcw[c] += dt * pooled;
        dcb[c] += dt;
        const double dpooled = dt * cweight[c] / hw;
        for (int s = 0; s < hw; ++s) out.input.data[src0 + s] += dpooled;

        // Spatial branch backward.
        const std::size_t src1 = static_cast<std::size_t>(base1 + c) * hw;
        double mean = 0.0;
        for (int s = 0; s < hw; ++s) mean += x.data[src1 + s];
        mean /= hw;
        double var = 0.0;
        for (int s = 0; s < hw; ++s) {
          const double d = x.data[src1 + s] - mean;
          var += d * d;
        }
        var /= hw;
        const double inv = 1.0 / std::sqrt(var + eps);

        std::vector<double> m(static_cast<std::size_t>(hw));
        std::vector<double> dm(static_cast<std::size_t>(hw));
        double mean_dm = 0.0, mean_dm_m = 0.0;
        for (int s = 0; s < hw; ++s) {
          m[s] = (x.data[src1 + s] - mean) * inv;
          const double u = sweight[c] * (gn_gamma[c] * m[s] + gn_beta[c]) + sbias[c];
          const double sg = sigmoid_scalar(u);
          const double xv = x.data[src1 + s];
          const double gv = g.data[src1 + s];
          out.input.data[src1 + s] = gv * sg;  // direct product path
          const double du = gv * xv * sg * (1.0 - sg);
          const double xg = gn_gamma[c] * m[s] + gn_beta[c];
          dsw[c] += du * xg;
          dsb[c] += du;
          const double dxg = du * sweight[c];
          dgamma[c] += dxg * m[s];
          dbeta[c] += dxg;
          dm[s] = dxg * gn_gamma[c];
          mean_dm += dm[s];
          mean_dm_m += dm[s] * m[s];
        }
        mean_dm /= hw;
        mean_dm_m /= hw;
        for (int s = 0; s < hw; ++s) {
          out.input.data[src1 + s] += inv * (dm[s] - mean_dm - m[s] * mean_dm_m);
        }
      }
    }
    out.params = {std::move(dcw), std::move(dcb), std::move(dsw),
                  std::move(dsb), std::move(dgamma), std::move(dbeta)};
    return out;
  }

  // FLOPs per branch channel: pool hw + affine 2 + sigmoid 4 + scale hw for
  // the channel half; normalization 8*hw + affine 4*hw + sigmoid 4*hw +
  // scale hw for the spatial half. The shuffle is a free permutation.
  std::int64_t flops(const Shape& in) const {
    out_shape(in);
    const std::int64_t hw = static_cast<std::int64_t>(in[1]) * in[2];
    const std::int64_t ch = branch_channels();
    const std::int64_t per_group = ch * (2 * hw + 6) + ch * 17 * hw;
    return groups * per_group;
  }

  std::vector<ParamRef> params() {
    return {{"cweight", &cweight}, {"cbias", &cbias},   {"sweight", &sweight},
            {"sbias", &sbias},     {"gn_gamma", &gn_gamma}, {"gn_beta", &gn_beta}};
  }
};

// ---------------------------------------------------------------------------
// cbam: channel gate followed by spatial gate.
// ---------------------------------------------------------------------------
struct Cbam {
  ChannelAttention channel;
  SpatialAttention spatial;

  Cbam() = default;
  Cbam(int channels, int reduction, int kernel)
      : channel(channels, reduction), spatial(kernel) {}

  Tensor forward(const Tensor& x) const { return spatial.forward(channel.forward(x)); }

  std::int64_t flops(const Shape& in) const {
    return channel.flops(in) + spatial.flops(channel.out_shape(in));
  }
};

}  // namespace clipforge
