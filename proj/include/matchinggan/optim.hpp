#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "matchinggan/nn.hpp"

namespace mgan {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0;  // global gradient-norm clip; 0 disables
};

template <class T>
class Adam {
 public:
  Adam(nn::StateList<T> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
    for (const auto& p : params_) {
      m_.push_back(ag::Var<T>::constant(Tensor<T>(p.var.shape())));
      v_.push_back(ag::Var<T>::constant(Tensor<T>(p.var.shape())));
    }
  }

  const AdamOptions& options() const { return opt_; }
  void set_learning_rate(double lr) { opt_.learning_rate = lr; }
  long long steps() const { return t_; }

  void zero_grad() { nn::zero_grad(params_); }

  // Parameters whose gradient buffer was never touched are skipped.
  void step() {
    ++t_;
    double clip_scale = 1;
    if (opt_.clip_norm > 0) {
      double sq = 0;
      for (const auto& p : params_)
        for (T g : p.var.node()->grad.values()) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > opt_.clip_norm) clip_scale = opt_.clip_norm / norm;
    }
    const double bc1 = 1 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& node = *params_[i].var.node();
      if (node.grad.shape() != node.value.shape()) continue;
      auto& m = m_[i].mutable_value();
      auto& v = v_[i].mutable_value();
      for (std::size_t j = 0; j < node.value.size(); ++j) {
        const double g = static_cast<double>(node.grad[j]) * clip_scale;
        m[j] = static_cast<T>(opt_.beta1 * m[j] + (1 - opt_.beta1) * g);
        v[j] = static_cast<T>(opt_.beta2 * v[j] + (1 - opt_.beta2) * g * g);
        const double update =
            opt_.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt_.eps);
        node.value[j] = static_cast<T>(node.value[j] - update);
      }
    }
  }

  // Moment buffers as named state sharing storage with the optimizer, so a
  // checkpoint loader can write into them directly.
  nn::StateList<T> state(const std::string& prefix) const {
    nn::StateList<T> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.push_back({prefix + ".m." + params_[i].name, m_[i], false});
      out.push_back({prefix + ".v." + params_[i].name, v_[i], false});
    }
    return out;
  }
  void set_steps(long long t) { t_ = t; }

 private:
  nn::StateList<T> params_;
  AdamOptions opt_;
  std::vector<ag::Var<T>> m_;
  std::vector<ag::Var<T>> v_;
  long long t_ = 0;
};

}  // namespace mgan
