#ifndef M2R_GAZE_HPP
#define M2R_GAZE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "m2r/checkpoint.hpp"
#include "m2r/errors.hpp"
#include "m2r/layers.hpp"
#include "m2r/radam.hpp"
#include "m2r/rng.hpp"
#include "m2r/tensor.hpp"

namespace m2r {

using Vec2 = Eigen::Vector2d;

// K-component 2-D Gaussian mixture over normalized image coordinates.
// Covariances are parameterized by Cholesky factors with log diagonals:
//   L_i = [[exp(a_i), 0], [b_i, exp(c_i)]],  Sigma_i = L_i L_i^T,
// so every Sigma_i is symmetric positive definite by construction.
struct GaussianMixture2D {
  Eigen::VectorXd logits;           // K
  Eigen::Matrix<double, Eigen::Dynamic, 2> means;  // K x 2, in [-1,1]
  Eigen::Matrix<double, Eigen::Dynamic, 3> chol;   // K x (a, b, c)

  int components() const { return int(logits.size()); }

  static GaussianMixture2D zeros(int k) {
    GaussianMixture2D m;
    m.logits = Eigen::VectorXd::Zero(k);
    m.means = Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(k, 2);
    m.chol = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(k, 3);
    return m;
  }

  bool finite() const {
    return logits.allFinite() && means.allFinite() && chol.allFinite();
  }

  Eigen::VectorXd weights() const {
    const double mx = logits.maxCoeff();
    Eigen::VectorXd w = (logits.array() - mx).exp();
    return w / w.sum();
  }

  Eigen::Matrix2d covariance(int i) const {
    Eigen::Matrix2d l;
    l << std::exp(chol(i, 0)), 0.0, chol(i, 1), std::exp(chol(i, 2));
    return l * l.transpose();
  }
};

// 2-D gaze sample in normalized [-1,1] image coordinates.
enum class Eye { left, right };
struct GazeSample {
  Vec2 g = Vec2::Zero();
  Eye eye = Eye::left;
};

struct MdnGradient {
  Eigen::VectorXd d_logits;
  Eigen::Matrix<double, Eigen::Dynamic, 2> d_means;
  Eigen::Matrix<double, Eigen::Dynamic, 3> d_chol;
};

// Negative log mixture density at g, via log-sum-exp over per-component
// log densities. Finite for any finite g. When grad is non-null, the
// analytic gradient w.r.t. every mixture parameter is written there.
inline double mdn_nll(const GaussianMixture2D& mix, const Vec2& g,
                      MdnGradient* grad = nullptr) {
  if (!mix.finite() || !g.allFinite())
    throw invalid_input_error("mdn_nll: non-finite input");
  const int k = mix.components();
  const double log2pi = std::log(2.0 * std::numbers::pi);

  // log weights
  const double lmx = mix.logits.maxCoeff();
  Eigen::VectorXd lw = mix.logits.array() - lmx;
  const double lse_w = std::log(lw.array().exp().sum());
  lw.array() -= lse_w;

  Eigen::VectorXd comp_log(k);
  Eigen::VectorXd z1(k), z2(k);
  for (int i = 0; i < k; ++i) {
    const double a = mix.chol(i, 0), b = mix.chol(i, 1), c = mix.chol(i, 2);
    const double d1 = g.x() - mix.means(i, 0);
    const double d2 = g.y() - mix.means(i, 1);
    z1(i) = d1 * std::exp(-a);
    z2(i) = (d2 - b * z1(i)) * std::exp(-c);
    comp_log(i) = lw(i) - log2pi - a - c - 0.5 * (z1(i) * z1(i) + z2(i) * z2(i));
  }
  const double cmx = comp_log.maxCoeff();
  const double logmix = cmx + std::log((comp_log.array() - cmx).exp().sum());
  const double nll = -logmix;

  if (grad) {
    grad->d_logits.resize(k);
    grad->d_means.resize(k, 2);
    grad->d_chol.resize(k, 3);
    const Eigen::VectorXd w = lw.array().exp();
    for (int i = 0; i < k; ++i) {
      const double r = std::exp(comp_log(i) - logmix);  // posterior responsibility
      grad->d_logits(i) = -(r - w(i));
      const double a = mix.chol(i, 0), b = mix.chol(i, 1), c = mix.chol(i, 2);
      const double ea = std::exp(-a), ec = std::exp(-c);
      // d logN / d mu = Sigma^{-1} (g - mu) = L^{-T} z
      const double s2 = z2(i) * ec;
      const double s1 = z1(i) * ea - b * ea * s2;
      grad->d_means(i, 0) = -r * s1;
      grad->d_means(i, 1) = -r * s2;
      grad->d_chol(i, 0) = -r * (-1.0 + z1(i) * z1(i) - z1(i) * z2(i) * b * ec);
      grad->d_chol(i, 1) = -r * (z1(i) * z2(i) * ec);
      grad->d_chol(i, 2) = -r * (-1.0 + z2(i) * z2(i));
    }
  }
  return nll;
}

// Mean of the highest-weight component; ties break to the lowest index.
inline Vec2 mdn_predict(const GaussianMixture2D& mix) {
  const Eigen::VectorXd w = mix.weights();
  int best = 0;
  for (int i = 1; i < mix.components(); ++i)
    if (w(i) > w(best)) best = i;
  return mix.means.row(best).transpose();
}

// ---------------------------------------------------------------------------
// Foveation

struct FoveaWindow {
  int cx = 0, cy = 0;        // actual (clamped) center, pixels
  int half_extent = 0;       // crop size / 2

  int x0() const { return cx - half_extent; }
  int y0() const { return cy - half_extent; }
  int x1() const { return cx + half_extent; }  // exclusive
  int y1() const { return cy + half_extent; }
};

// Crop a crop_size x crop_size window centered at gaze_px, clamped so it
// lies fully inside the image. Border handling is clamping, not padding.
inline std::pair<Tensor, FoveaWindow> foveate(const Tensor& image, int gx, int gy,
                                              int crop_size) {
  if (image.shape.size() != 3)
    throw shape_error("foveate: expected [C,H,W], got " + image.shape_str());
  const int c = int(image.shape[0]);
  const int h = int(image.shape[1]);
  const int w = int(image.shape[2]);
  if (crop_size > h || crop_size > w)
    throw shape_error("foveate: crop " + std::to_string(crop_size) +
                      " larger than image " + image.shape_str());
  const int half = crop_size / 2;
  FoveaWindow win;
  win.half_extent = half;
  win.cx = std::clamp(gx, half, w - crop_size + half);
  win.cy = std::clamp(gy, half, h - crop_size + half);
  Tensor crop({size_t(c), size_t(crop_size), size_t(crop_size)});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < crop_size; ++y)
      for (int x = 0; x < crop_size; ++x)
        crop.at3(ch, y, x) = image.at3(ch, win.y0() + y, win.x0() + x);
  return {crop, win};
}

// Box-average downsampling by an integer factor. The global-vision
// (no-foveation) policy path uses this so a full-field view costs the
// same compute as a foveated crop: wide field of view at low resolution
// versus narrow field at full resolution.
inline Tensor downsample_avg(const Tensor& image, int factor) {
  if (image.shape.size() != 3)
    throw shape_error("downsample_avg: expected [C,H,W], got " + image.shape_str());
  if (factor < 1) throw invalid_input_error("downsample_avg: factor < 1");
  if (factor == 1) return image;
  const size_t c = image.shape[0];
  const size_t h = image.shape[1];
  const size_t w = image.shape[2];
  if (h % size_t(factor) != 0 || w % size_t(factor) != 0)
    throw shape_error("downsample_avg: factor " + std::to_string(factor) +
                      " does not divide " + image.shape_str());
  Tensor out({c, h / size_t(factor), w / size_t(factor)});
  const double inv = 1.0 / double(factor * factor);
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t y = 0; y < out.shape[1]; ++y)
      for (size_t x = 0; x < out.shape[2]; ++x) {
        double sum = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            sum += image.at3(ch, y * size_t(factor) + size_t(dy),
                             x * size_t(factor) + size_t(dx));
        out.at3(ch, y, x) = sum * inv;
      }
  return out;
}

// Normalized [-1,1] gaze coordinate -> pixel index.
inline int gaze_to_px(double gnorm, int extent) {
  const double t = (gnorm + 1.0) * 0.5 * double(extent - 1);
  return std::clamp(int(std::lround(t)), 0, extent - 1);
}
inline double px_to_gaze(int px, int extent) {
  return extent > 1 ? 2.0 * double(px) / double(extent - 1) - 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// MDN gaze predictor: 5 conv-ReLU stages -> SpatialSoftmax -> MLP -> mixture.

struct GazeNetConfig {
  int image_size = 64;
  int image_channels = 3;
  int conv_channels = 8;
  int mixture_components = 8;
  int mlp_hidden = 200;
  std::uint64_t init_seed = 1;
};

class GazeNet {
 public:
  explicit GazeNet(const GazeNetConfig& cfg = {}) : cfg_(cfg) {
    Rng rng(cfg.init_seed);
    // four pooled stages plus a final conv-ReLU: 64 -> 4 at default scale
    cnn_.add<Conv3x3>(cfg.image_channels, cfg.conv_channels, rng.fork(0));
    cnn_.add<ReLU>();
    cnn_.add<MaxPool2>();
    for (int s = 1; s <= 3; ++s) {
      cnn_.add<Conv3x3>(cfg.conv_channels, cfg.conv_channels, rng.fork(s));
      cnn_.add<ReLU>();
      cnn_.add<MaxPool2>();
    }
    cnn_.add<Conv3x3>(cfg.conv_channels, cfg.conv_channels, rng.fork(4));
    cnn_.add<ReLU>();
    ssm_ = std::make_unique<SpatialSoftmax>();
    const int k = cfg.mixture_components;
    mlp_ = std::make_unique<Mlp>(size_t(2 * cfg.conv_channels), size_t(6 * k),
                                 rng.fork(5), size_t(cfg.mlp_hidden));
  }

  // Raw head output -> mixture. Means squashed by tanh into [-1,1];
  // log-diagonals offset so initial covariances start at a moderate scale.
  GaussianMixture2D head_to_mixture(const Tensor& head) const {
    const int k = cfg_.mixture_components;
    GaussianMixture2D mix = GaussianMixture2D::zeros(k);
    for (int i = 0; i < k; ++i) {
      mix.logits(i) = head.v[i];
      mix.means(i, 0) = std::tanh(head.v[k + 2 * i]);
      mix.means(i, 1) = std::tanh(head.v[k + 2 * i + 1]);
      mix.chol(i, 0) = head.v[3 * k + 3 * i] - 1.0;
      mix.chol(i, 1) = head.v[3 * k + 3 * i + 1];
      mix.chol(i, 2) = head.v[3 * k + 3 * i + 2] - 1.0;
    }
    return mix;
  }

  GaussianMixture2D forward(const Tensor& image) {
    head_ = mlp_->forward(flatten(ssm_->forward(cnn_.forward(image))));
    return head_to_mixture(head_);
  }

  // Backprop an MdnGradient through the head and the whole network.
  void backward(const MdnGradient& grad) {
    const int k = cfg_.mixture_components;
    Tensor dhead({size_t(6 * k)});
    for (int i = 0; i < k; ++i) {
      dhead.v[i] = grad.d_logits(i);
      const double tx = std::tanh(head_.v[k + 2 * i]);
      const double ty = std::tanh(head_.v[k + 2 * i + 1]);
      dhead.v[k + 2 * i] = grad.d_means(i, 0) * (1.0 - tx * tx);
      dhead.v[k + 2 * i + 1] = grad.d_means(i, 1) * (1.0 - ty * ty);
      dhead.v[3 * k + 3 * i] = grad.d_chol(i, 0);
      dhead.v[3 * k + 3 * i + 1] = grad.d_chol(i, 1);
      dhead.v[3 * k + 3 * i + 2] = grad.d_chol(i, 2);
    }
    Tensor d = mlp_->backward(dhead);
    d.shape = {size_t(cfg_.conv_channels), 2};
    cnn_.backward(ssm_->backward(d));
  }

  std::vector<Tensor*> params() {
    auto p = cnn_.params();
    auto q = mlp_->params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }

  const GazeNetConfig& config() const { return cfg_; }

  void save(const std::string& path) {
    save_checkpoint(path, snapshot_params("gaze", params()));
  }
  void load(const std::string& path) {
    restore_params(load_checkpoint(path), params());
  }

 private:
  static Tensor flatten(Tensor t) {
    t.shape = {t.size()};
    return t;
  }

  GazeNetConfig cfg_;
  Sequential cnn_;
  std::unique_ptr<SpatialSoftmax> ssm_;
  std::unique_ptr<Mlp> mlp_;
  Tensor head_;
};

struct GazeTrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 7;
  // cap on optimizer steps per epoch; 0 = full pass
  int max_steps_per_epoch = 0;
};

struct GazeTrainRecord {
  std::vector<double> epoch_loss;
};

// Minibatch RAdam on the mixture NLL. Deterministic under a fixed seed.
inline GazeTrainRecord train_gaze_predictor(
    GazeNet& net, const std::vector<std::pair<const Tensor*, Vec2>>& data,
    const GazeTrainConfig& cfg) {
  if (data.empty()) throw invalid_input_error("train_gaze_predictor: empty dataset");
  RAdam::Config oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  RAdam opt(net.params(), oc);
  Rng rng(cfg.seed);
  GazeTrainRecord rec;
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the run RNG keeps shuffles reproducible.
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double epoch_loss = 0.0;
    size_t seen = 0;
    int steps = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      if (cfg.max_steps_per_epoch > 0 && steps >= cfg.max_steps_per_epoch) break;
      const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
      for (Tensor* p : net.params()) p->zero_grad();
      for (size_t j = start; j < end; ++j) {
        const auto& [img, g] = data[order[j]];
        MdnGradient grad;
        const double loss = mdn_nll(net.forward(*img), g, &grad);
        if (!std::isfinite(loss))
          throw training_diverged_error("gaze training diverged at epoch " +
                                        std::to_string(epoch));
        const double scale = 1.0 / double(end - start);
        grad.d_logits *= scale;
        grad.d_means *= scale;
        grad.d_chol *= scale;
        net.backward(grad);
        epoch_loss += loss;
        ++seen;
      }
      opt.step();
      ++steps;
    }
    rec.epoch_loss.push_back(seen ? epoch_loss / double(seen) : 0.0);
  }
  return rec;
}

}  // namespace m2r

#endif  // M2R_GAZE_HPP
