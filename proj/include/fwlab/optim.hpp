#pragma once

// Named parameter storage with gradient/moment slots, and Adam with bias
// correction plus optional global-norm clipping.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "fwlab/tensor.hpp"

namespace fwlab {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;  // first moment
  Tensor<T> v;  // second moment
};

template <typename T>
struct ParamStore {
  std::vector<Param<T>> params;
  std::unordered_map<std::string, int> index;

  Param<T>& add(const std::string& name, Tensor<T> init) {
    if (index.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index[name] = static_cast<int>(params.size());
    Param<T> p;
    p.name = name;
    p.grad = Tensor<T>(init.shape);
    p.m = Tensor<T>(init.shape);
    p.v = Tensor<T>(init.shape);
    p.value = std::move(init);
    params.push_back(std::move(p));
    return params.back();
  }

  Param<T>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown parameter: " + name);
    return params[it->second];
  }
  const Param<T>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  void zero_grads() {
    for (auto& p : params) p.grad.fill(T(0));
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 8.0;  // <= 0 disables clipping
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  AdamConfig& config() { return cfg_; }
  long long steps() const { return step_; }

  // One update over every parameter's accumulated gradient.
  void step(ParamStore<T>& store) {
    if (cfg_.clip_norm > 0) {
      double sq = 0;
      for (const auto& p : store.params)
        for (T g : p.grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) {
        const T scale = static_cast<T>(cfg_.clip_norm / norm);
        for (auto& p : store.params)
          for (T& g : p.grad.data) g *= scale;
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const T lr = static_cast<T>(cfg_.lr);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.eps);
    const T ibc1 = static_cast<T>(1.0 / bc1), ibc2 = static_cast<T>(1.0 / bc2);
    for (auto& p : store.params) {
      for (size_t i = 0; i < p.value.data.size(); ++i) {
        const T g = p.grad.data[i];
        p.m.data[i] = b1 * p.m.data[i] + (T(1) - b1) * g;
        p.v.data[i] = b2 * p.v.data[i] + (T(1) - b2) * g * g;
        const T mhat = p.m.data[i] * ibc1;
        const T vhat = p.v.data[i] * ibc2;
        p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  long long step_ = 0;
};

}  // namespace fwlab
