#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "taxlink/errors.hpp"
#include "taxlink/linalg.hpp"
#include "taxlink/rng.hpp"

namespace taxlink {

template <class A, class B>
Matrix matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw DimError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                   std::to_string(b.rows()) + " do not match");
  }
  return a.derived() * b.derived();
}

// log(sum(exp(v))) over all coefficients, max-shifted so magnitudes up to
// ~700 cannot overflow.
template <class Derived>
double log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  if (v.size() == 0) throw std::domain_error("log_sum_exp: empty input");
  const double shift = v.derived().maxCoeff();
  const double acc = (v.derived().array() - shift).exp().sum();
  return shift + std::log(acc);
}

template <class Derived>
Vector softmax(const Eigen::MatrixBase<Derived>& v) {
  if (v.size() == 0) throw std::domain_error("softmax: empty input");
  Vector out = v.derived().reshaped();
  out = (out.array() - out.maxCoeff()).exp();
  out /= out.sum();
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void check_finite(std::string_view name, const Matrix& m) {
  if (!m.allFinite()) {
    throw TrainingError(std::string(name) + ": non-finite values");
  }
}

struct AdamState {
  Matrix first_moment;
  Matrix second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update, in place. Zero gradients leave the parameters
// bit-identical. Throws TrainingError naming the parameter when gradients
// are non-finite.
inline void adam_step(Eigen::Ref<Matrix> params, const Matrix& grads, AdamState& state,
                      double lr, std::string_view name = "param") {
  if (lr <= 0.0) throw ConfigError("adam_step: lr must be > 0");
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw DimError("adam_step: parameter/gradient shape mismatch for " + std::string(name));
  }
  if (!grads.allFinite()) {
    throw TrainingError("adam_step: non-finite gradient for " + std::string(name));
  }
  if (state.first_moment.size() == 0) {
    state.first_moment = Matrix::Zero(params.rows(), params.cols());
    state.second_moment = Matrix::Zero(params.rows(), params.cols());
  }
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      (state.beta2 * state.second_moment.array() + (1.0 - state.beta2) * grads.array().square())
          .matrix();
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  params.array() -= lr * (state.first_moment.array() / bc1) /
                    ((state.second_moment.array() / bc2).sqrt() + state.epsilon);
}

// Named Adam slots, one moment pair per parameter tensor.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(const std::string& name, Eigen::Ref<Matrix> params, const Matrix& grads) {
    auto [it, inserted] = slots_.try_emplace(name);
    if (inserted) {
      it->second.beta1 = beta1_;
      it->second.beta2 = beta2_;
      it->second.epsilon = epsilon_;
    }
    adam_step(params, grads, it->second, lr_, name);
  }

  double lr() const { return lr_; }
  const AdamState* slot(const std::string& name) const {
    auto it = slots_.find(name);
    return it == slots_.end() ? nullptr : &it->second;
  }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::map<std::string, AdamState> slots_;
};

// Inverted dropout: training keeps a unit with probability 1-rate and scales
// it by 1/(1-rate); eval mode and rate 0 return the input untouched without
// consuming the rng. Mask entries are drawn row-major.
inline Matrix apply_dropout(const Matrix& x, double rate, Rng& rng, bool training,
                            Matrix* mask_out = nullptr) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) {
    if (mask_out) *mask_out = Matrix::Ones(x.rows(), x.cols());
    return x;
  }
  const double scale = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      mask(r, c) = rng.uniform01() < rate ? 0.0 : scale;
    }
  }
  if (mask_out) *mask_out = mask;
  return x.cwiseProduct(mask);
}

// Central-difference oracle for the gradient tests. Perturbs one coefficient
// at a time; f must be evaluable at every x +- eps.
template <class F>
Matrix finite_difference_gradient(F&& f, Matrix x, double eps = 1e-5) {
  if (eps < 1e-6 || eps > 1e-4) {
    throw std::domain_error("finite_difference_gradient: eps outside [1e-6, 1e-4]");
  }
  Matrix grad(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      const double keep = x(r, c);
      x(r, c) = keep + eps;
      const double fp = f(static_cast<const Matrix&>(x));
      x(r, c) = keep - eps;
      const double fm = f(static_cast<const Matrix&>(x));
      x(r, c) = keep;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw OracleError("finite_difference_gradient: non-finite objective value");
      }
      grad(r, c) = (fp - fm) / (2.0 * eps);
    }
  }
  return grad;
}

}  // namespace taxlink
