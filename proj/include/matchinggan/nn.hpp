#pragma once

#include <string>
#include <vector>

#include "matchinggan/autograd.hpp"
#include "matchinggan/ops.hpp"
#include "matchinggan/random.hpp"

// Parameterised layers. Modules own Vars; `collect` appends them, with
// hierarchical names, to a flat state list used by optimizers and the
// checkpoint writer.

namespace mgan::nn {

using ag::Var;
using ops::NormMode;

template <class T>
struct NamedVar {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

template <class T>
using StateList = std::vector<NamedVar<T>>;

template <class T>
StateList<T> trainable_only(const StateList<T>& state) {
  StateList<T> out;
  for (const auto& nv : state)
    if (nv.trainable) out.push_back(nv);
  return out;
}

// Forward-pass settings shared by every layer of one network call.
struct ForwardContext {
  NormMode norm = NormMode::Inference;
  Rng* rng = nullptr;  // dropout and random coefficients; may be null at inference
  bool training() const { return norm != NormMode::Inference; }
};

template <class T>
Tensor<T> gaussian_init(Shape shape, Rng& rng, double stddev) {
  // Drawn in double so float and double instantiations share initial values.
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(stddev * standard_normal(rng));
  return t;
}

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int pad, bool bias, Rng& rng, double init_std)
      : stride_(stride), pad_(pad) {
    weight = Var<T>::parameter(gaussian_init<T>({out, in, kernel, kernel}, rng, init_std));
    if (bias) this->bias = Var<T>::parameter(Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride_, pad_); }

  void collect(const std::string& prefix, StateList<T>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
  }

  Var<T> weight;
  Var<T> bias;

 private:
  int stride_ = 1;
  int pad_ = 0;
};

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, double init_std) {
    weight = Var<T>::parameter(gaussian_init<T>({out, in}, rng, init_std));
    bias = Var<T>::parameter(Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }

  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }

  void collect(const std::string& prefix, StateList<T>& out) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
  }

  Var<T> weight;
  Var<T> bias;
};

template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels) {
    gamma = Var<T>::parameter(Tensor<T>({channels}, T(1)));
    beta = Var<T>::parameter(Tensor<T>({channels}));
    running_mean = Var<T>::constant(Tensor<T>({channels}));
    running_var = Var<T>::constant(Tensor<T>({channels}, T(1)));
  }

  Var<T> operator()(const Var<T>& x, NormMode mode) const {
    return ops::batch_norm(x, gamma, beta, running_mean.node()->value, running_var.node()->value, mode);
  }

  void collect(const std::string& prefix, StateList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
  }

  Var<T> gamma;
  Var<T> beta;
  Var<T> running_mean;
  Var<T> running_var;
};

// Copies values between two state lists with identical layout, converting the
// scalar type. Used to mirror a float model into double for gradient checks.
template <class Dst, class Src>
void copy_state(const StateList<Src>& src, StateList<Dst>& dst) {
  if (src.size() != dst.size()) throw ShapeError("copy_state: state lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].var.shape() != dst[i].var.shape())
      throw ShapeError("copy_state: mismatch at " + src[i].name);
    dst[i].var.mutable_value() = src[i].var.value().template cast<Dst>();
  }
}

template <class T>
void zero_grad(const StateList<T>& state) {
  for (const auto& nv : state) {
    auto& g = nv.var.node()->grad;
    if (!g.empty()) g.fill(T(0));
  }
}

// Stops gradient tracking for a set of parameters while in scope, so a
// backward pass through a frozen network costs no parameter gradients.
template <class T>
class FreezeGuard {
 public:
  explicit FreezeGuard(StateList<T> params) : params_(std::move(params)) {
    for (auto& nv : params_) nv.var.node()->requires_grad = false;
  }
  ~FreezeGuard() {
    for (auto& nv : params_) nv.var.node()->requires_grad = nv.trainable;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  StateList<T> params_;
};

}  // namespace mgan::nn
