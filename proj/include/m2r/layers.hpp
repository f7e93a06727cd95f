#ifndef M2R_LAYERS_HPP
#define M2R_LAYERS_HPP

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "m2r/tensor.hpp"

namespace m2r {

// Glorot-uniform bound used by every layer init.
inline double init_bound(size_t fan_in, size_t fan_out) {
  return std::sqrt(6.0 / double(fan_in + fan_out));
}

// Layer with explicit forward/backward. forward() caches what backward()
// needs; backward() takes d(loss)/d(output), accumulates parameter
// gradients, and returns d(loss)/d(input).
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Tensor*> params() { return {}; }
  virtual std::string kind() const = 0;

  void zero_grad() {
    for (Tensor* p : params()) {
      p->require_grad();
      p->zero_grad();
    }
  }
};

// ---------------------------------------------------------------------------

// 3x3 cross-correlation, padding 1, [C,H,W] -> [C',H,W].
class Conv3x3 : public Layer {
 public:
  Conv3x3(size_t in_ch, size_t out_ch, Rng rng)
      : in_ch_(in_ch), out_ch_(out_ch),
        weight_({out_ch, in_ch, 3, 3}), bias_({out_ch}) {
    const double b = init_bound(in_ch * 9, out_ch * 9);
    weight_.fill_uniform(rng, -b, b);
    weight_.require_grad();
    bias_.require_grad();
  }

  Tensor forward(const Tensor& x) override {
    if (x.shape.size() != 3 || x.shape[0] != in_ch_)
      throw shape_error("conv3x3: expected [" + std::to_string(in_ch_) +
                        ",H,W], got " + x.shape_str());
    x_ = x;
    const size_t h = x.shape[1], w = x.shape[2];
    Tensor y({out_ch_, h, w});
    for (size_t o = 0; o < out_ch_; ++o) {
      double* yp = &y.v[o * h * w];
      std::fill(yp, yp + h * w, bias_.v[o]);
      for (size_t i = 0; i < in_ch_; ++i) {
        const double* wp = &weight_.v[(o * in_ch_ + i) * 9];
        const double* xp = &x.v[i * h * w];
        correlate_planes(yp, xp, wp, h, w);
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const size_t h = x_.shape[1], w = x_.shape[2];
    check_shape(dy, {out_ch_, h, w}, "conv3x3 backward");
    Tensor dx(x_.shape);
    for (size_t o = 0; o < out_ch_; ++o) {
      const double* dyp = &dy.v[o * h * w];
      double bacc = 0.0;
      for (size_t k = 0; k < h * w; ++k) bacc += dyp[k];
      bias_.g[o] += bacc;
      for (size_t i = 0; i < in_ch_; ++i) {
        double* wg = &weight_.g[(o * in_ch_ + i) * 9];
        const double* wp = &weight_.v[(o * in_ch_ + i) * 9];
        const double* xp = &x_.v[i * h * w];
        // dL/dw[ky][kx] is the dot product of dy with the (ky,kx)-shifted
        // input over their valid overlap
        for (int ky = -1; ky <= 1; ++ky) {
          const size_t y_lo = size_t(std::max(0, -ky));
          const size_t y_hi = h - size_t(std::max(0, ky));
          for (int kx = -1; kx <= 1; ++kx) {
            const size_t x_lo = size_t(std::max(0, -kx));
            const size_t x_hi = w - size_t(std::max(0, kx));
            double acc = 0.0;
            for (size_t yy = y_lo; yy < y_hi; ++yy) {
              const double* dr = dyp + yy * w;
              const double* xr = xp + (long(yy) + ky) * long(w) + kx;
              for (size_t xx = x_lo; xx < x_hi; ++xx) acc += dr[xx] * xr[xx];
            }
            wg[(ky + 1) * 3 + (kx + 1)] += acc;
          }
        }
        // dL/dx is the correlation of dy with the 180-degree-flipped kernel
        double wf[9];
        for (int k = 0; k < 9; ++k) wf[k] = wp[8 - k];
        correlate_planes(&dx.v[i * h * w], dyp, wf, h, w);
      }
    }
    return dx;
  }

  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "conv3x3"; }

  Tensor weight_, bias_;

 private:
  // out += correlation of one input plane with a 3x3 kernel, zero-padded.
  // Row-at-a-time with contiguous 3-tap passes so the inner loops vectorize.
  static void correlate_planes(double* out, const double* in, const double* k9,
                               size_t h, size_t w) {
    for (size_t yy = 0; yy < h; ++yy) {
      const double* rm = yy > 0 ? in + (yy - 1) * w : nullptr;
      const double* r0 = in + yy * w;
      const double* rp = yy + 1 < h ? in + (yy + 1) * w : nullptr;
      double* yr = out + yy * w;
      const double* rows[3] = {rm, r0, rp};
      for (int t = 0; t < 3; ++t) {
        const double* r = rows[t];
        if (!r) continue;
        const double k0 = k9[t * 3], k1 = k9[t * 3 + 1], k2 = k9[t * 3 + 2];
        yr[0] += k1 * r[0];
        if (w > 1) {
          yr[0] += k2 * r[1];
          for (size_t xx = 1; xx + 1 < w; ++xx)
            yr[xx] += k0 * r[xx - 1] + k1 * r[xx] + k2 * r[xx + 1];
          yr[w - 1] += k0 * r[w - 2] + k1 * r[w - 1];
        }
      }
    }
  }

  size_t in_ch_, out_ch_;
  Tensor x_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    x_ = x;
    Tensor y = x;
    for (auto& v : y.v) v = v > 0.0 ? v : 0.0;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = dy;
    for (size_t i = 0; i < dx.size(); ++i)
      if (x_.v[i] <= 0.0) dx.v[i] = 0.0;
    return dx;
  }
  std::string kind() const override { return "relu"; }

 private:
  Tensor x_;
};

// 2x2 max pooling, stride 2; gradient routes to the argmax (first
// occurrence on ties).
class MaxPool2 : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    if (x.shape.size() != 3 || x.shape[1] % 2 || x.shape[2] % 2)
      throw shape_error("maxpool2: need even [C,H,W], got " + x.shape_str());
    in_shape_ = x.shape;
    const size_t c = x.shape[0], h = x.shape[1] / 2, w = x.shape[2] / 2;
    Tensor y({c, h, w});
    argmax_.assign(y.size(), 0);
    for (size_t ch = 0; ch < c; ++ch)
      for (size_t yy = 0; yy < h; ++yy)
        for (size_t xx = 0; xx < w; ++xx) {
          double best = -std::numeric_limits<double>::infinity();
          size_t best_idx = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const size_t idx =
                  (ch * in_shape_[1] + 2 * yy + dy) * in_shape_[2] + 2 * xx + dx;
              if (x.v[idx] > best) {
                best = x.v[idx];
                best_idx = idx;
              }
            }
          y.at3(ch, yy, xx) = best;
          argmax_[(ch * h + yy) * w + xx] = best_idx;
        }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx(in_shape_);
    for (size_t i = 0; i < dy.size(); ++i) dx.v[argmax_[i]] += dy.v[i];
    return dx;
  }
  std::string kind() const override { return "maxpool2"; }

 private:
  std::vector<size_t> in_shape_;
  std::vector<size_t> argmax_;
};

// out = x + conv(relu(conv(x))), channel-preserving.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(size_t channels, Rng rng)
      : conv1_(channels, channels, rng.fork(1)), conv2_(channels, channels, rng.fork(2)) {}

  Tensor forward(const Tensor& x) override {
    Tensor y = conv2_.forward(relu_.forward(conv1_.forward(x)));
    if (!y.same_shape(x))
      throw shape_error("residual_block: branch shape " + y.shape_str() +
                        " != input " + x.shape_str());
    for (size_t i = 0; i < y.size(); ++i) y.v[i] += x.v[i];
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = conv1_.backward(relu_.backward(conv2_.backward(dy)));
    for (size_t i = 0; i < dx.size(); ++i) dx.v[i] += dy.v[i];
    return dx;
  }
  std::vector<Tensor*> params() override {
    auto p = conv1_.params();
    auto q = conv2_.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }
  std::string kind() const override { return "residual_block"; }

 private:
  Conv3x3 conv1_, conv2_;
  ReLU relu_;
};

// Affine map on flattened input.
class FullyConnected : public Layer {
 public:
  FullyConnected(size_t in, size_t out, Rng rng)
      : in_(in), out_(out), weight_({out, in}), bias_({out}) {
    const double b = init_bound(in, out);
    weight_.fill_uniform(rng, -b, b);
    weight_.require_grad();
    bias_.require_grad();
  }

  Tensor forward(const Tensor& x) override {
    if (x.size() != in_)
      throw shape_error("fully_connected: expected " + std::to_string(in_) +
                        " inputs, got " + x.shape_str());
    x_ = x;
    Tensor y({out_});
    for (size_t o = 0; o < out_; ++o) {
      double acc = bias_.v[o];
      const double* w = &weight_.v[o * in_];
      for (size_t i = 0; i < in_; ++i) acc += w[i] * x.v[i];
      y.v[o] = acc;
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.shape);
    for (size_t o = 0; o < out_; ++o) {
      const double d = dy.v[o];
      bias_.g[o] += d;
      double* wg = &weight_.g[o * in_];
      const double* w = &weight_.v[o * in_];
      for (size_t i = 0; i < in_; ++i) {
        wg[i] += d * x_.v[i];
        dx.v[i] += d * w[i];
      }
    }
    return dx;
  }
  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "fully_connected"; }

  Tensor weight_, bias_;

 private:
  size_t in_, out_;
  Tensor x_;
};

// Softmax over the last axis.
class Softmax : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    y_ = x;
    const size_t d = x.shape.back();
    const size_t rows = x.size() / d;
    for (size_t r = 0; r < rows; ++r) {
      double* row = &y_.v[r * d];
      double mx = row[0];
      for (size_t i = 1; i < d; ++i) mx = std::max(mx, row[i]);
      double sum = 0.0;
      for (size_t i = 0; i < d; ++i) sum += (row[i] = std::exp(row[i] - mx));
      for (size_t i = 0; i < d; ++i) row[i] /= sum;
    }
    return y_;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = dy;
    const size_t d = y_.shape.back();
    const size_t rows = y_.size() / d;
    for (size_t r = 0; r < rows; ++r) {
      const double* p = &y_.v[r * d];
      const double* g = &dy.v[r * d];
      double dot = 0.0;
      for (size_t i = 0; i < d; ++i) dot += p[i] * g[i];
      for (size_t i = 0; i < d; ++i) dx.v[r * d + i] = p[i] * (g[i] - dot);
    }
    return dx;
  }
  std::string kind() const override { return "softmax"; }

 private:
  Tensor y_;
};

// Per-channel softmax over H*W cells followed by the expected (x, y)
// coordinate, normalized to [-1, 1]. [C,H,W] -> [C,2].
class SpatialSoftmax : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    if (x.shape.size() != 3)
      throw shape_error("spatial_softmax: expected [C,H,W], got " + x.shape_str());
    in_shape_ = x.shape;
    const size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    probs_ = Tensor({c, h, w});
    Tensor y({c, 2});
    for (size_t ch = 0; ch < c; ++ch) {
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < h * w; ++i)
        mx = std::max(mx, x.v[ch * h * w + i]);
      double sum = 0.0;
      for (size_t i = 0; i < h * w; ++i)
        sum += (probs_.v[ch * h * w + i] = std::exp(x.v[ch * h * w + i] - mx));
      double ex = 0.0, ey = 0.0;
      for (size_t yy = 0; yy < h; ++yy)
        for (size_t xx = 0; xx < w; ++xx) {
          const double p = (probs_.at3(ch, yy, xx) /= sum);
          ex += p * coord(xx, w);
          ey += p * coord(yy, h);
        }
      y.at2(ch, 0) = ex;
      y.at2(ch, 1) = ey;
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    const size_t c = in_shape_[0], h = in_shape_[1], w = in_shape_[2];
    check_shape(dy, {c, 2}, "spatial_softmax backward");
    Tensor dx(in_shape_);
    for (size_t ch = 0; ch < c; ++ch) {
      // E[x], E[y] under the cached distribution
      double ex = 0.0, ey = 0.0;
      for (size_t yy = 0; yy < h; ++yy)
        for (size_t xx = 0; xx < w; ++xx) {
          const double p = probs_.at3(ch, yy, xx);
          ex += p * coord(xx, w);
          ey += p * coord(yy, h);
        }
      const double gx = dy.at2(ch, 0), gy = dy.at2(ch, 1);
      for (size_t yy = 0; yy < h; ++yy)
        for (size_t xx = 0; xx < w; ++xx) {
          const double p = probs_.at3(ch, yy, xx);
          dx.at3(ch, yy, xx) =
              p * (gx * (coord(xx, w) - ex) + gy * (coord(yy, h) - ey));
        }
    }
    return dx;
  }
  std::string kind() const override { return "spatial_softmax"; }

  // Pixel index -> [-1, 1]; endpoints map exactly to -1 and 1.
  static double coord(size_t i, size_t n) {
    return n > 1 ? 2.0 * double(i) / double(n - 1) - 1.0 : 0.0;
  }

 private:
  std::vector<size_t> in_shape_;
  Tensor probs_;
};

// Single-head scaled dot-product self-attention over [T,D] tokens.
// No positional encoding: outputs are permutation-equivariant.
class SelfAttention : public Layer {
 public:
  SelfAttention(size_t dim, Rng rng)
      : dim_(dim), wq_({dim, dim}), wk_({dim, dim}), wv_({dim, dim}) {
    const double b = init_bound(dim, dim);
    wq_.fill_uniform(rng, -b, b);
    wk_.fill_uniform(rng, -b, b);
    wv_.fill_uniform(rng, -b, b);
    for (Tensor* p : params()) p->require_grad();
  }

  Tensor forward(const Tensor& x) override {
    if (x.shape.size() != 2 || x.shape[1] != dim_)
      throw shape_error("self_attention: expected [T," + std::to_string(dim_) +
                        "], got " + x.shape_str());
    x_ = x;
    const size_t t = x.shape[0];
    q_ = project(x, wq_);
    k_ = project(x, wk_);
    v_ = project(x, wv_);
    attn_ = Tensor({t, t});
    const double scale = 1.0 / std::sqrt(double(dim_));
    for (size_t i = 0; i < t; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < t; ++j) {
        double dot = 0.0;
        for (size_t d = 0; d < dim_; ++d) dot += q_.at2(i, d) * k_.at2(j, d);
        attn_.at2(i, j) = dot * scale;
        mx = std::max(mx, attn_.at2(i, j));
      }
      double sum = 0.0;
      for (size_t j = 0; j < t; ++j)
        sum += (attn_.at2(i, j) = std::exp(attn_.at2(i, j) - mx));
      for (size_t j = 0; j < t; ++j) attn_.at2(i, j) /= sum;
    }
    Tensor y({t, dim_});
    for (size_t i = 0; i < t; ++i)
      for (size_t j = 0; j < t; ++j)
        for (size_t d = 0; d < dim_; ++d)
          y.at2(i, d) += attn_.at2(i, j) * v_.at2(j, d);
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const size_t t = x_.shape[0];
    check_shape(dy, {t, dim_}, "self_attention backward");
    const double scale = 1.0 / std::sqrt(double(dim_));
    // dV and dA
    Tensor dv({t, dim_}), da({t, t});
    for (size_t i = 0; i < t; ++i)
      for (size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (size_t d = 0; d < dim_; ++d) {
          dv.at2(j, d) += attn_.at2(i, j) * dy.at2(i, d);
          acc += dy.at2(i, d) * v_.at2(j, d);
        }
        da.at2(i, j) = acc;
      }
    // softmax backward per row -> d(scores)
    Tensor ds({t, t});
    for (size_t i = 0; i < t; ++i) {
      double dot = 0.0;
      for (size_t j = 0; j < t; ++j) dot += attn_.at2(i, j) * da.at2(i, j);
      for (size_t j = 0; j < t; ++j)
        ds.at2(i, j) = attn_.at2(i, j) * (da.at2(i, j) - dot) * scale;
    }
    // dQ = ds K, dK = ds^T Q
    Tensor dq({t, dim_}), dk({t, dim_});
    for (size_t i = 0; i < t; ++i)
      for (size_t j = 0; j < t; ++j)
        for (size_t d = 0; d < dim_; ++d) {
          dq.at2(i, d) += ds.at2(i, j) * k_.at2(j, d);
          dk.at2(j, d) += ds.at2(i, j) * q_.at2(i, d);
        }
    Tensor dx(x_.shape);
    project_backward(dq, wq_, dx);
    project_backward(dk, wk_, dx);
    project_backward(dv, wv_, dx);
    return dx;
  }

  std::vector<Tensor*> params() override { return {&wq_, &wk_, &wv_}; }
  std::string kind() const override { return "self_attention"; }

  const Tensor& attention_weights() const { return attn_; }

  Tensor wq_, wk_, wv_;

 private:
  Tensor project(const Tensor& x, const Tensor& w) const {
    const size_t t = x.shape[0];
    Tensor y({t, dim_});
    for (size_t i = 0; i < t; ++i)
      for (size_t o = 0; o < dim_; ++o) {
        double acc = 0.0;
        for (size_t d = 0; d < dim_; ++d) acc += w.v[o * dim_ + d] * x.at2(i, d);
        y.at2(i, o) = acc;
      }
    return y;
  }
  void project_backward(const Tensor& dyp, Tensor& w, Tensor& dx) {
    const size_t t = x_.shape[0];
    for (size_t i = 0; i < t; ++i)
      for (size_t o = 0; o < dim_; ++o) {
        const double d = dyp.at2(i, o);
        for (size_t k = 0; k < dim_; ++k) {
          w.g[o * dim_ + k] += d * x_.at2(i, k);
          dx.at2(i, k) += d * w.v[o * dim_ + k];
        }
      }
  }

  size_t dim_;
  Tensor x_, q_, k_, v_, attn_;
};

// Ordered layer chain.
class Sequential : public Layer {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  Tensor forward(const Tensor& x) override {
    Tensor y = x;
    for (auto& l : layers_) y = l->forward(y);
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor d = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      d = (*it)->backward(d);
    return d;
  }
  std::vector<Tensor*> params() override {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      auto p = l->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  std::string kind() const override { return "sequential"; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// affine -> ReLU -> ... -> affine; hidden width 200 by default.
class Mlp : public Layer {
 public:
  Mlp(size_t in, size_t out, Rng rng, size_t hidden = 200, size_t hidden_layers = 2) {
    size_t cur = in;
    for (size_t i = 0; i < hidden_layers; ++i) {
      seq_.add<FullyConnected>(cur, hidden, rng.fork(i));
      seq_.add<ReLU>();
      cur = hidden;
    }
    seq_.add<FullyConnected>(cur, out, rng.fork(hidden_layers));
  }
  Tensor forward(const Tensor& x) override { return seq_.forward(x); }
  Tensor backward(const Tensor& dy) override { return seq_.backward(dy); }
  std::vector<Tensor*> params() override { return seq_.params(); }
  std::string kind() const override { return "mlp"; }

 private:
  Sequential seq_;
};

}  // namespace m2r

#endif  // M2R_LAYERS_HPP
