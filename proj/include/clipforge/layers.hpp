#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "clipforge/tensor.hpp"

namespace clipforge {

enum class LayerKind {
  kConv2d,
  kDense,
  kGroupNorm,
  kGruCell,
  kGlobalAvgPool,
  kMaxPool,
  kSoftmax,
  kSigmoid,
  kRelu,
  kChannelAttention,
  kSpatialAttention,
  kEca,
  kShuffleAttention,
};

inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kGroupNorm: return "groupnorm";
    case LayerKind::kGruCell: return "gru-cell";
    case LayerKind::kGlobalAvgPool: return "global-avg-pool";
    case LayerKind::kMaxPool: return "max-pool";
    case LayerKind::kSoftmax: return "softmax";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kChannelAttention: return "channel-attention";
    case LayerKind::kSpatialAttention: return "spatial-attention";
    case LayerKind::kEca: return "eca";
    case LayerKind::kShuffleAttention: return "shuffle-attention";
  }
  return "?";
}

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

// Gradients produced by one backward call: `params` is aligned with the
// layer's params() order, `input` is the gradient w.r.t. the layer input.
struct LayerGrads {
  std::vector<Tensor> params;
  Tensor input;
};

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// dense: y = W x + b, input [in], output [out].
// FLOPs: 2*in*out (multiply-accumulate counted as 2; bias add excluded).
// ---------------------------------------------------------------------------
struct Dense {
  int in_dim = 0;
  int out_dim = 0;
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  Dense() = default;
  Dense(int in, int out) : in_dim(in), out_dim(out), weight({out, in}), bias({out}) {}

  static Dense init(int in, int out, Rng& rng) {
    Dense d(in, out);
    const double limit = std::sqrt(6.0 / (in + out));
    d.weight = Tensor::uniform({out, in}, limit, rng);
    return d;
  }

  LayerKind kind() const { return LayerKind::kDense; }

  Shape out_shape(const Shape& in) const {
    require(in == Shape{in_dim}, strformat("dense: expected input [%d], got %s", in_dim,
                                           shape_str(in).c_str()));
    return {out_dim};
  }

  Tensor forward(const Tensor& x) const {
    require_shape(x, {in_dim}, "dense input");
    Tensor y({out_dim});
    for (int o = 0; o < out_dim; ++o) {
      double acc = bias[o];
      const double* row = &weight.data[static_cast<std::size_t>(o) * in_dim];
      for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    require_shape(x, {in_dim}, "dense input");
    require_shape(g, {out_dim}, "dense upstream");
    LayerGrads out;
    Tensor dw({out_dim, in_dim});
    Tensor db({out_dim});
    Tensor dx({in_dim});
    for (int o = 0; o < out_dim; ++o) {
      db[o] = g[o];
      const double* row = &weight.data[static_cast<std::size_t>(o) * in_dim];
      double* drow = &dw.data[static_cast<std::size_t>(o) * in_dim];
      for (int i = 0; i < in_dim; ++i) {
        drow[i] = g[o] * x[i];
        dx[i] += row[i] * g[o];
      }
    }
    out.params = {std::move(dw), std::move(db)};
    out.input = std::move(dx);
    return out;
  }

  std::int64_t flops(const Shape& in) const {
    (void)in;
    return 2ll * in_dim * out_dim;
  }

  std::vector<ParamRef> params() {
    return {{"weight", &weight}, {"bias", &bias}};
  }
};

// ---------------------------------------------------------------------------
// conv2d: zero-padded strided cross-correlation, input [Cin,H,W].
// FLOPs: 2*Kh*Kw*Cin*Cout*Hout*Wout (bias add excluded).
// ---------------------------------------------------------------------------
struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int kh = 0;
  int kw = 0;
  int stride = 1;
  int pad = 0;
  Tensor weight;  // [Cout, Cin, Kh, Kw]
  Tensor bias;    // [Cout]

  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride_, int pad_)
      : in_ch(cin), out_ch(cout), kh(k), kw(k), stride(stride_), pad(pad_),
        weight({cout, cin, k, k}), bias({cout}) {}

  static Conv2d init(int cin, int cout, int k, int stride, int pad, Rng& rng) {
    Conv2d c(cin, cout, k, stride, pad);
    const double fan_in = static_cast<double>(cin) * k * k;
    const double fan_out = static_cast<double>(cout) * k * k;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    c.weight = Tensor::uniform({cout, cin, k, k}, limit, rng);
    return c;
  }

  LayerKind kind() const { return LayerKind::kConv2d; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 3 && in[0] == in_ch,
            strformat("conv2d: expected input [%d,H,W], got %s", in_ch, shape_str(in).c_str()));
    const int ho = (in[1] + 2 * pad - kh) / stride + 1;
    const int wo = (in[2] + 2 * pad - kw) / stride + 1;
    require(ho >= 1 && wo >= 1, strformat("conv2d: input %s too small for %dx%d kernel",
                                          shape_str(in).c_str(), kh, kw));
    return {out_ch, ho, wo};
  }

  Tensor forward(const Tensor& x) const {
    const Shape os = out_shape(x.shape);
    const int h = x.shape[1], w = x.shape[2], ho = os[1], wo = os[2];
    Tensor y(os);
    for (int co = 0; co < out_ch; ++co) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias[co];
          for (int ci = 0; ci < in_ch; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= w) continue;
                acc += weight.data[((static_cast<std::size_t>(co) * in_ch + ci) * kh + ky) * kw + kx] *
                       x.at3(ci, iy, ix);
              }
            }
          }
          y.at3(co, oy, ox) = acc;
        }
      }
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    const Shape os = out_shape(x.shape);
    require(g.shape == os, strformat("conv2d upstream: expected %s, got %s",
                                     shape_str(os).c_str(), shape_str(g.shape).c_str()));
    const int h = x.shape[1], w = x.shape[2], ho = os[1], wo = os[2];
    Tensor dw(weight.shape);
    Tensor db(bias.shape);
    Tensor dx(x.shape);
    for (int co = 0; co < out_ch; ++co) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const double go = g.at3(co, oy, ox);
          db[co] += go;
          for (int ci = 0; ci < in_ch; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= w) continue;
                const std::size_t wi =
                    ((static_cast<std::size_t>(co) * in_ch + ci) * kh + ky) * kw + kx;
                dw.data[wi] += go * x.at3(ci, iy, ix);
                dx.at3(ci, iy, ix) += go * weight.data[wi];
              }
            }
          }
        }
      }
    }
    LayerGrads out;
    out.params = {std::move(dw), std::move(db)};
    out.input = std::move(dx);
    return out;
  }

  std::int64_t flops(const Shape& in) const {
    const Shape os = out_shape(in);
    return 2ll * kh * kw * in_ch * out_ch * os[1] * os[2];
  }

  std::vector<ParamRef> params() {
    return {{"weight", &weight}, {"bias", &bias}};
  }
};

// ---------------------------------------------------------------------------
// groupnorm: normalizes groups of channels to zero mean / unit variance, then
// applies a per-channel affine. Accepts [C] vectors or [C,H,W] maps.
// FLOPs convention: 8 per element (reduction, normalize, affine).
// ---------------------------------------------------------------------------
struct GroupNorm {
  int channels = 0;
  int groups = 1;
  double eps = 1e-5;
  Tensor gamma;  // [C]
  Tensor beta;   // [C]

  GroupNorm() = default;
  GroupNorm(int c, int g) : channels(c), groups(g), gamma({c}), beta({c}) {
    require(g >= 1 && c % g == 0,
            strformat("groupnorm: %d channels not divisible by %d groups", c, g));
    gamma.fill(1.0);
  }

  LayerKind kind() const { return LayerKind::kGroupNorm; }

  Shape out_shape(const Shape& in) const {
    require((in.size() == 1 || in.size() == 3) && in[0] == channels,
            strformat("groupnorm: expected [%d] or [%d,H,W], got %s", channels, channels,
                      shape_str(in).c_str()));
    return in;
  }

  Tensor forward(const Tensor& x) const {
    out_shape(x.shape);
    const int spatial = static_cast<int>(x.numel() / channels);
    const int per_group = channels / groups;
    const int n = per_group * spatial;
    Tensor y(x.shape);
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = static_cast<std::size_t>(g) * per_group * spatial;
      double mean = 0.0;
      for (int i = 0; i < n; ++i) mean += x.data[base + i];
      mean /= n;
      double var = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = x.data[base + i] - mean;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int c = 0; c < per_group; ++c) {
        const int ch = g * per_group + c;
        for (int s = 0; s < spatial; ++s) {
          const std::size_t idx = base + static_cast<std::size_t>(c) * spatial + s;
          y.data[idx] = gamma[ch] * (x.data[idx] - mean) * inv + beta[ch];
        }
      }
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    out_shape(x.shape);
    require(g.shape == x.shape, "groupnorm upstream shape mismatch");
    const int spatial = static_cast<int>(x.numel() / channels);
    const int per_group = channels / groups;
    const int n = per_group * spatial;
    Tensor dgamma({channels});
    Tensor dbeta({channels});
    Tensor dx(x.shape);
    for (int grp = 0; grp < groups; ++grp) {
      const std::size_t base = static_cast<std::size_t>(grp) * per_group * spatial;
      double mean = 0.0;
      for (int i = 0; i < n; ++i) mean += x.data[base + i];
      mean /= n;
      double var = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = x.data[base + i] - mean;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);

      // xhat and the two group means needed by the normalization backward.
      double mean_dxhat = 0.0;
      double mean_dxhat_xhat = 0.0;
      std::vector<double> xhat(static_cast<std::size_t>(n));
      std::vector<double> dxhat(static_cast<std::size_t>(n));
      for (int c = 0; c < per_group; ++c) {
        const int ch = grp * per_group + c;
        for (int s = 0; s < spatial; ++s) {
          const std::size_t li = static_cast<std::size_t>(c) * spatial + s;
          const std::size_t idx = base + li;
          xhat[li] = (x.data[idx] - mean) * inv;
          dgamma[ch] += g.data[idx] * xhat[li];
          dbeta[ch] += g.data[idx];
          dxhat[li] = g.data[idx] * gamma[ch];
          mean_dxhat += dxhat[li];
          mean_dxhat_xhat += dxhat[li] * xhat[li];
        }
      }
      mean_dxhat /= n;
      mean_dxhat_xhat /= n;
      for (int i = 0; i < n; ++i) {
        dx.data[base + i] = inv * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
      }
    }
    LayerGrads out;
    out.params = {std::move(dgamma), std::move(dbeta)};
    out.input = std::move(dx);
    return out;
  }

  std::int64_t flops(const Shape& in) const { return 8ll * shape_numel(in); }

  std::vector<ParamRef> params() {
    return {{"gamma", &gamma}, {"beta", &beta}};
  }
};

// ---------------------------------------------------------------------------
// gru-cell: standard three-gate cell (update z, reset r, candidate n):
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wh x + Uh (r*h) + bh)
//   h' = z*h + (1-z)*n
// The packed input is [x : h_prev] so the cell fits the single-input layer
// interface; the input gradient concatenates [dx : dh_prev].
// FLOPs: 6*H*(X+H) for the six matvecs plus 20*H elementwise work.
// ---------------------------------------------------------------------------
struct GruCell {
  int x_dim = 0;
  int h_dim = 0;
  Tensor wz, uz, bz;
  Tensor wr, ur, br;
  Tensor wh, uh, bh;

  GruCell() = default;
  GruCell(int x, int h)
      : x_dim(x), h_dim(h), wz({h, x}), uz({h, h}), bz({h}), wr({h, x}), ur({h, h}), br({h}),
        wh({h, x}), uh({h, h}), bh({h}) {}

  static GruCell init(int x, int h, Rng& rng) {
    GruCell cell(x, h);
    const double wl = std::sqrt(6.0 / (x + h));
    const double ul = std::sqrt(6.0 / (h + h));
    for (Tensor* t : {&cell.wz, &cell.wr, &cell.wh}) *t = Tensor::uniform({h, x}, wl, rng);
    for (Tensor* t : {&cell.uz, &cell.ur, &cell.uh}) *t = Tensor::uniform({h, h}, ul, rng);
    return cell;
  }

  LayerKind kind() const { return LayerKind::kGruCell; }

  Shape out_shape(const Shape& in) const {
    require(in == Shape{x_dim + h_dim},
            strformat("gru-cell: expected packed input [%d], got %s", x_dim + h_dim,
                      shape_str(in).c_str()));
    return {h_dim};
  }

  // h' from separate x and h_prev; the packed-layer interface wraps this.
  Tensor step(const Tensor& x, const Tensor& h_prev) const {
    require_shape(x, {x_dim}, "gru-cell x");
    require_shape(h_prev, {h_dim}, "gru-cell h_prev");
    Tensor h_next({h_dim});
    // r must be complete before the candidate matvec, so gates come first.
    std::vector<double> z(h_dim), r(h_dim), n(h_dim);
    for (int i = 0; i < h_dim; ++i) {
      z[i] = sigmoid_scalar(matvec_row(wz, x, i) + matvec_row(uz, h_prev, i) + bz[i]);
      r[i] = sigmoid_scalar(matvec_row(wr, x, i) + matvec_row(ur, h_prev, i) + br[i]);
    }
    Tensor rh({h_dim});
    for (int i = 0; i < h_dim; ++i) rh[i] = r[i] * h_prev[i];
    for (int i = 0; i < h_dim; ++i) {
      n[i] = std::tanh(matvec_row(wh, x, i) + matvec_row(uh, rh, i) + bh[i]);
      h_next[i] = z[i] * h_prev[i] + (1.0 - z[i]) * n[i];
    }
    return h_next;
  }

  Tensor forward(const Tensor& packed) const {
    out_shape(packed.shape);
    Tensor x({x_dim});
    Tensor h({h_dim});
    std::copy(packed.data.begin(), packed.data.begin() + x_dim, x.data.begin());
    std::copy(packed.data.begin() + x_dim, packed.data.end(), h.data.begin());
    return step(x, h);
  }

  // Gradients w.r.t. x, h_prev and all nine parameter tensors.
  struct StepGrads {
    Tensor dx;
    Tensor dh_prev;
    std::vector<Tensor> params;  // wz,uz,bz, wr,ur,br, wh,uh,bh
  };

  StepGrads step_backward(const Tensor& x, const Tensor& h_prev, const Tensor& g) const {
    require_shape(g, {h_dim}, "gru-cell upstream");
    std::vector<double> z(h_dim), r(h_dim), n(h_dim), rh(h_dim);
    for (int i = 0; i < h_dim; ++i) {
      z[i] = sigmoid_scalar(matvec_row(wz, x, i) + matvec_row(uz, h_prev, i) + bz[i]);
      r[i] = sigmoid_scalar(matvec_row(wr, x, i) + matvec_row(ur, h_prev, i) + br[i]);
      rh[i] = r[i] * h_prev[i];
    }
    Tensor rh_t({h_dim}, std::vector<double>(rh));
    for (int i = 0; i < h_dim; ++i) {
      n[i] = std::tanh(matvec_row(wh, x, i) + matvec_row(uh, rh_t, i) + bh[i]);
    }

    std::vector<double> da_z(h_dim), da_r(h_dim), da_n(h_dim);
    Tensor dx({x_dim});
    Tensor dh({h_dim});
    // Pre-activation gradients.
    std::vector<double> drh(h_dim, 0.0);
    for (int i = 0; i < h_dim; ++i) {
      const double dz = g[i] * (h_prev[i] - n[i]);
      const double dn = g[i] * (1.0 - z[i]);
      dh[i] += g[i] * z[i];
      da_n[i] = dn * (1.0 - n[i] * n[i]);
      da_z[i] = dz * z[i] * (1.0 - z[i]);
    }
    for (int i = 0; i < h_dim; ++i) {
      for (int j = 0; j < h_dim; ++j) drh[j] += uh.at2(i, j) * da_n[i];
    }
    for (int i = 0; i < h_dim; ++i) {
      const double dr = drh[i] * h_prev[i];
      dh[i] += drh[i] * r[i];
      da_r[i] = dr * r[i] * (1.0 - r[i]);
    }
    for (int i = 0; i < h_dim; ++i) {
      for (int j = 0; j < h_dim; ++j) {
        dh[j] += uz.at2(i, j) * da_z[i] + ur.at2(i, j) * da_r[i];
      }
      for (int j = 0; j < x_dim; ++j) {
        dx[j] += wz.at2(i, j) * da_z[i] + wr.at2(i, j) * da_r[i] + wh.at2(i, j) * da_n[i];
      }
    }

    StepGrads out;
    out.params.assign(9, Tensor());
    out.params[0] = outer(da_z, x);
    out.params[1] = outer(da_z, h_prev);
    out.params[2] = Tensor({h_dim}, std::vector<double>(da_z));
    out.params[3] = outer(da_r, x);
    out.params[4] = outer(da_r, h_prev);
    out.params[5] = Tensor({h_dim}, std::vector<double>(da_r));
    out.params[6] = outer(da_n, x);
    out.params[7] = outer(da_n, rh_t);
    out.params[8] = Tensor({h_dim}, std::vector<double>(da_n));
    out.dx = std::move(dx);
    out.dh_prev = std::move(dh);
    return out;
  }

  LayerGrads backward(const Tensor& packed, const Tensor& g) const {
    out_shape(packed.shape);
    Tensor x({x_dim});
    Tensor h({h_dim});
    std::copy(packed.data.begin(), packed.data.begin() + x_dim, x.data.begin());
    std::copy(packed.data.begin() + x_dim, packed.data.end(), h.data.begin());
    StepGrads sg = step_backward(x, h, g);
    LayerGrads out;
    out.params = std::move(sg.params);
    out.input = Tensor({x_dim + h_dim});
    std::copy(sg.dx.data.begin(), sg.dx.data.end(), out.input.data.begin());
    std::copy(sg.dh_prev.data.begin(), sg.dh_prev.data.end(), out.input.data.begin() + x_dim);
    return out;
  }

  std::int64_t flops(const Shape& in) const {
    (void)in;
    return 6ll * h_dim * (x_dim + h_dim) + 20ll * h_dim;
  }

  std::int64_t step_flops() const { return flops({x_dim + h_dim}); }

  std::vector<ParamRef> params() {
    return {{"wz", &wz}, {"uz", &uz}, {"bz", &bz}, {"wr", &wr}, {"ur", &ur},
            {"br", &br}, {"wh", &wh}, {"uh", &uh}, {"bh", &bh}};
  }

 private:
  static double matvec_row(const Tensor& m, const Tensor& v, int row) {
    const double* r = &m.data[static_cast<std::size_t>(row) * m.shape[1]];
    double acc = 0.0;
    for (int j = 0; j < m.shape[1]; ++j) acc += r[j] * v[j];
    return acc;
  }

  static Tensor outer(const std::vector<double>& a, const Tensor& b) {
    Tensor t({static_cast<int>(a.size()), static_cast<int>(b.numel())});
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::int64_t j = 0; j < b.numel(); ++j) {
        t.data[i * b.numel() + j] = a[i] * b.data[j];
      }
    }
    return t;
  }
};

// ---------------------------------------------------------------------------
// global-avg-pool: [C,H,W] -> [C]. FLOPs: C*H*W (one add per element).
// ---------------------------------------------------------------------------
struct GlobalAvgPool {
  LayerKind kind() const { return LayerKind::kGlobalAvgPool; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 3, strformat("global-avg-pool: expected [C,H,W], got %s",
                                      shape_str(in).c_str()));
    return {in[0]};
  }

  Tensor forward(const Tensor& x) const {
    out_shape(x.shape);
    const int c = x.shape[0];
    const int spatial = x.shape[1] * x.shape[2];
    Tensor y({c});
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int s = 0; s < spatial; ++s) acc += x.data[static_cast<std::size_t>(ch) * spatial + s];
      y[ch] = acc / spatial;
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    out_shape(x.shape);
    require_shape(g, {x.shape[0]}, "global-avg-pool upstream");
    const int spatial = x.shape[1] * x.shape[2];
    LayerGrads out;
    out.input = Tensor(x.shape);
    for (int ch = 0; ch < x.shape[0]; ++ch) {
      const double v = g[ch] / spatial;
      for (int s = 0; s < spatial; ++s) {
        out.input.data[static_cast<std::size_t>(ch) * spatial + s] = v;
      }
    }
    return out;
  }

  std::int64_t flops(const Shape& in) const { return shape_numel(in); }

  std::vector<ParamRef> params() { return {}; }
};

// ---------------------------------------------------------------------------
// max-pool: square window, no padding, [C,H,W] -> [C,Hout,Wout]. Ties route
// the gradient to the first maximal element in scan order.
// FLOPs: (window^2 - 1) comparisons per output element.
// ---------------------------------------------------------------------------
struct MaxPool {
  int window = 2;
  int stride = 2;

  LayerKind kind() const { return LayerKind::kMaxPool; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 3, strformat("max-pool: expected [C,H,W], got %s", shape_str(in).c_str()));
    require(in[1] >= window && in[2] >= window,
            strformat("max-pool: input %s smaller than %dx%d window", shape_str(in).c_str(),
                      window, window));
    return {in[0], (in[1] - window) / stride + 1, (in[2] - window) / stride + 1};
  }

  Tensor forward(const Tensor& x) const {
    const Shape os = out_shape(x.shape);
    Tensor y(os);
    for (int c = 0; c < os[0]; ++c) {
      for (int oy = 0; oy < os[1]; ++oy) {
        for (int ox = 0; ox < os[2]; ++ox) {
          double best = x.at3(c, oy * stride, ox * stride);
          for (int ky = 0; ky < window; ++ky) {
            for (int kx = 0; kx < window; ++kx) {
              best = std::max(best, x.at3(c, oy * stride + ky, ox * stride + kx));
            }
          }
          y.at3(c, oy, ox) = best;
        }
      }
    }
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    const Shape os = out_shape(x.shape);
    require(g.shape == os, "max-pool upstream shape mismatch");
    LayerGrads out;
    out.input = Tensor(x.shape);
    for (int c = 0; c < os[0]; ++c) {
      for (int oy = 0; oy < os[1]; ++oy) {
        for (int ox = 0; ox < os[2]; ++ox) {
          int by = oy * stride, bx = ox * stride;
          double best = x.at3(c, by, bx);
          for (int ky = 0; ky < window; ++ky) {
            for (int kx = 0; kx < window; ++kx) {
              const double v = x.at3(c, oy * stride + ky, ox * stride + kx);
              if (v > best) {
                best = v;
                by = oy * stride + ky;
                bx = ox * stride + kx;
              }
            }
          }
          out.input.at3(c, by, bx) += g.at3(c, oy, ox);
        }
      }
    }
    return out;
  }

  std::int64_t flops(const Shape& in) const {
    const Shape os = out_shape(in);
    return static_cast<std::int64_t>(window * window - 1) * shape_numel(os);
  }

  std::vector<ParamRef> params() { return {}; }
};

// ---------------------------------------------------------------------------
// softmax over a vector (max-shifted for stability). FLOPs: 4 per element.
// ---------------------------------------------------------------------------
struct Softmax {
  LayerKind kind() const { return LayerKind::kSoftmax; }

  Shape out_shape(const Shape& in) const {
    require(in.size() == 1, strformat("softmax: expected a vector, got %s", shape_str(in).c_str()));
    return in;
  }

  Tensor forward(const Tensor& x) const {
    out_shape(x.shape);
    Tensor y(x.shape);
    double mx = x[0];
    for (std::int64_t i = 1; i < x.numel(); ++i) mx = std::max(mx, x.data[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      y.data[i] = std::exp(x.data[i] - mx);
      sum += y.data[i];
    }
    for (std::int64_t i = 0; i < x.numel(); ++i) y.data[i] /= sum;
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    Tensor y = forward(x);
    require(g.shape == x.shape, "softmax upstream shape mismatch");
    double dot = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) dot += g.data[i] * y.data[i];
    LayerGrads out;
    out.input = Tensor(x.shape);
    for (std::int64_t i = 0; i < y.numel(); ++i) out.input.data[i] = y.data[i] * (g.data[i] - dot);
    return out;
  }

  std::int64_t flops(const Shape& in) const { return 4ll * shape_numel(in); }

  std::vector<ParamRef> params() { return {}; }
};

// ---------------------------------------------------------------------------
// sigmoid, elementwise. FLOPs: 4 per element.
// ---------------------------------------------------------------------------
struct Sigmoid {
  LayerKind kind() const { return LayerKind::kSigmoid; }
  Shape out_shape(const Shape& in) const { return in; }

  Tensor forward(const Tensor& x) const {
    Tensor y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y.data[i] = sigmoid_scalar(x.data[i]);
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    require(g.shape == x.shape, "sigmoid upstream shape mismatch");
    LayerGrads out;
    out.input = Tensor(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const double y = sigmoid_scalar(x.data[i]);
      out.input.data[i] = g.data[i] * y * (1.0 - y);
    }
    return out;
  }

  std::int64_t flops(const Shape& in) const { return 4ll * shape_numel(in); }
  std::vector<ParamRef> params() { return {}; }
};

// ---------------------------------------------------------------------------
// relu, elementwise. FLOPs: 1 per element.
// ---------------------------------------------------------------------------
struct Relu {
  LayerKind kind() const { return LayerKind::kRelu; }
  Shape out_shape(const Shape& in) const { return in; }

  Tensor forward(const Tensor& x) const {
    Tensor y(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    return y;
  }

  LayerGrads backward(const Tensor& x, const Tensor& g) const {
    require(g.shape == x.shape, "relu upstream shape mismatch");
    LayerGrads out;
    out.input = Tensor(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      out.input.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
    }
    return out;
  }

  std::int64_t flops(const Shape& in) const { return shape_numel(in); }
  std::vector<ParamRef> params() { return {}; }
};

}  // namespace clipforge
