#ifndef M2R_RADAM_HPP
#define M2R_RADAM_HPP

#include <cmath>
#include <vector>

#include "m2r/errors.hpp"
#include "m2r/tensor.hpp"

namespace m2r {

// Rectified Adam with decoupled weight decay. While the variance
// rectification term is undefined (early steps), the update falls back to
// the SGD-with-momentum form using the bias-corrected first moment only.
class RAdam {
 public:
  struct Config {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  explicit RAdam(std::vector<Tensor*> params) : RAdam(std::move(params), Config()) {}

  RAdam(std::vector<Tensor*> params, Config cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (Tensor* p : params_) {
      p->require_grad();
      m_.emplace_back(p->v.size(), 0.0);
      v_.emplace_back(p->v.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double b1t = std::pow(b1, double(t_));
    const double b2t = std::pow(b2, double(t_));
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho_t = rho_inf - 2.0 * double(t_) * b2t / (1.0 - b2t);
    double rect = 0.0;
    const bool rectified = rho_t > 4.0;
    if (rectified)
      rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                       ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    for (size_t k = 0; k < params_.size(); ++k) {
      Tensor* p = params_[k];
      for (size_t i = 0; i < p->v.size(); ++i) {
        const double g = p->g[i];
        if (!std::isfinite(g))
          throw training_diverged_error("radam_step: non-finite gradient");
        m_[k][i] = b1 * m_[k][i] + (1.0 - b1) * g;
        v_[k][i] = b2 * v_[k][i] + (1.0 - b2) * g * g;
        const double m_hat = m_[k][i] / (1.0 - b1t);
        double update;
        if (rectified) {
          const double v_hat = std::sqrt(v_[k][i] / (1.0 - b2t));
          update = cfg_.lr * rect * m_hat / (v_hat + cfg_.eps);
        } else {
          update = cfg_.lr * m_hat;
        }
        p->v[i] -= update + cfg_.lr * cfg_.weight_decay * p->v[i];
      }
    }
  }

  long step_count() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  Config cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace m2r

#endif  // M2R_RADAM_HPP
