#pragma once

// Reverse-mode differentiation on an append-only tape. Node values live on
// the tape; parameter leaves reference external storage and write their
// gradients straight into external sinks so a worker can accumulate over a
// whole batch without per-example parameter-sized allocations.

#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fwlab/tensor.hpp"

namespace fwlab {

template <typename T>
class Tape {
 public:
  bool check_finite = false;

  // Leaf holding a copy of t (inputs, masks, small constants).
  int leaf(Tensor<T> t) {
    nodes_.push_back(Node{std::move(t), {}, nullptr, nullptr, {}});
    return last();
  }

  // Parameter leaf: the value stays external; gradients accumulate into *grad.
  int param(const Tensor<T>* value, Tensor<T>* grad) {
    nodes_.push_back(Node{{}, {}, value, grad, {}});
    return last();
  }

  const Tensor<T>& val(int id) const {
    const Node& n = nodes_.at(id);
    return n.external_value ? *n.external_value : n.value;
  }

  // Gradient of a non-parameter node (valid after backward).
  const Tensor<T>& grad(int id) const {
    const Node& n = nodes_.at(id);
    if (n.external_grad) return *n.external_grad;
    return n.grad;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  void reset() { nodes_.clear(); }

  // ---- ops ----

  int matmul(int a, int b) {
    Tensor<T> c({val(a).shape[0], val(b).shape[1]});
    matmul_into(c, val(a), val(b));
    return push(std::move(c), [this, a, b](int id) {
      if (has_grad(a)) matmul_acc_bt(grad_rw(a), grad(id), val(b));
      if (has_grad(b)) matmul_acc_at(grad_rw(b), val(a), grad(id));
    });
  }

  int add(int a, int b) {
    Tensor<T> out(val(a).shape);
    broadcast_binary_into(out, val(a), val(b), [](T x, T y) { return x + y; });
    return push(std::move(out), [this, a, b](int id) {
      const Tensor<T>& g = grad(id);
      if (has_grad(a))
        for (size_t i = 0; i < g.data.size(); ++i) grad_rw(a).data[i] += g.data[i];
      if (has_grad(b)) accumulate_broadcast(b, g, nullptr);
    });
  }

  int mul(int a, int b) {
    Tensor<T> out(val(a).shape);
    broadcast_binary_into(out, val(a), val(b), [](T x, T y) { return x * y; });
    return push(std::move(out), [this, a, b](int id) {
      const Tensor<T>& g = grad(id);
      const Tensor<T>& va = val(a);
      const Tensor<T>& vb = val(b);
      if (has_grad(a)) {
        Tensor<T> ga(va.shape);
        broadcast_binary_into(ga, g, vb, [](T x, T y) { return x * y; });
        for (size_t i = 0; i < ga.data.size(); ++i) grad_rw(a).data[i] += ga.data[i];
      }
      if (has_grad(b)) accumulate_broadcast(b, g, &va);
    });
  }

  int transpose(int a) {
    const Tensor<T>& v = val(a);
    Tensor<T> out({v.shape[1], v.shape[0]});
    for (int i = 0; i < v.shape[0]; ++i)
      for (int j = 0; j < v.shape[1]; ++j) out(j, i) = v(i, j);
    return push(std::move(out), [this, a](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& g = grad(id);
      Tensor<T>& ga = grad_rw(a);
      for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j) ga(j, i) += g(i, j);
    });
  }

  // Concatenate 2D nodes along axis 0 or 1.
  int concat(const std::vector<int>& ids, int axis) {
    if (ids.empty()) throw std::invalid_argument("concat: no inputs");
    int rows = 0, cols = 0;
    for (int a : ids) {
      const auto& v = val(a);
      if (axis == 0) {
        rows += v.shape[0];
        cols = v.shape[1];
      } else {
        rows = v.shape[0];
        cols += v.shape[1];
      }
    }
    Tensor<T> out({rows, cols});
    int off = 0;
    for (int a : ids) {
      const auto& v = val(a);
      if (axis == 0) {
        std::copy(v.data.begin(), v.data.end(),
                  out.data.begin() + static_cast<size_t>(off) * cols);
        off += v.shape[0];
      } else {
        for (int i = 0; i < rows; ++i)
          std::copy(v.data.begin() + static_cast<size_t>(i) * v.shape[1],
                    v.data.begin() + static_cast<size_t>(i + 1) * v.shape[1],
                    out.data.begin() + static_cast<size_t>(i) * cols + off);
        off += v.shape[1];
      }
    }
    std::vector<int> inputs = ids;
    return push(std::move(out), [this, inputs, axis](int id) {
      const Tensor<T>& g = grad(id);
      const int cols_all = g.shape[1];
      int off2 = 0;
      for (int a : inputs) {
        const auto& v = val(a);
        if (has_grad(a)) {
          Tensor<T>& ga = grad_rw(a);
          if (axis == 0) {
            for (size_t i = 0; i < v.data.size(); ++i)
              ga.data[i] += g.data[static_cast<size_t>(off2) * cols_all + i];
          } else {
            for (int i = 0; i < v.shape[0]; ++i)
              for (int j = 0; j < v.shape[1]; ++j) ga(i, j) += g(i, off2 + j);
          }
        }
        off2 += axis == 0 ? v.shape[0] : v.shape[1];
      }
    });
  }

  int slice(int a, int axis, int start, int len) {
    const Tensor<T>& v = val(a);
    Tensor<T> out(axis == 0 ? std::vector<int>{len, v.shape[1]}
                            : std::vector<int>{v.shape[0], len});
    for (int i = 0; i < out.shape[0]; ++i)
      for (int j = 0; j < out.shape[1]; ++j)
        out(i, j) = axis == 0 ? v(start + i, j) : v(i, start + j);
    return push(std::move(out), [this, a, axis, start](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& g = grad(id);
      Tensor<T>& ga = grad_rw(a);
      for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
          (axis == 0 ? ga(start + i, j) : ga(i, start + j)) += g(i, j);
    });
  }

  int softmax(int a, int axis = 1) {
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    Tensor<T> out(val(a).shape);
    softmax_rows_into(out, val(a));
    return push(std::move(out), [this, a](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& y = val(id);
      const Tensor<T>& g = grad(id);
      Tensor<T>& ga = grad_rw(a);
      const int m = y.shape[0], n = y.shape[1];
      for (int i = 0; i < m; ++i) {
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
        for (int j = 0; j < n; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
  }

  int sigmoid(int a) {
    Tensor<T> out(val(a).shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = sigmoid_scalar(val(a).data[i]);
    return push(std::move(out), [this, a](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& y = val(id);
      const Tensor<T>& g = grad(id);
      for (size_t i = 0; i < y.data.size(); ++i)
        grad_rw(a).data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
    });
  }

  int tanh(int a) {
    Tensor<T> out(val(a).shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::tanh(val(a).data[i]);
    return push(std::move(out), [this, a](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& y = val(id);
      const Tensor<T>& g = grad(id);
      for (size_t i = 0; i < y.data.size(); ++i)
        grad_rw(a).data[i] += g.data[i] * (T(1) - y.data[i] * y.data[i]);
    });
  }

  int elu(int a) {
    Tensor<T> out(val(a).shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = elu_scalar(val(a).data[i]);
    return push(std::move(out), [this, a](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& x = val(a);
      const Tensor<T>& y = val(id);
      const Tensor<T>& g = grad(id);
      for (size_t i = 0; i < y.data.size(); ++i)
        grad_rw(a).data[i] += g.data[i] * (x.data[i] >= T(0) ? T(1) : y.data[i] + T(1));
    });
  }

  // Variational dropout: the caller supplies the binary mask (sampled once
  // per sequence and reused across time steps); activations scale by
  // 1/(1-rate) so expectations match the undropped forward.
  int dropout(int a, T rate, const Tensor<T>& mask) {
    check_same_shape(val(a), mask, "dropout");
    const T scale = T(1) / (T(1) - rate);
    Tensor<T> out(val(a).shape);
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = val(a).data[i] * mask.data[i] * scale;
    return push(std::move(out), [this, a, scale, mask](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& g = grad(id);
      for (size_t i = 0; i < g.data.size(); ++i)
        grad_rw(a).data[i] += g.data[i] * mask.data[i] * scale;
    });
  }

  // Rows of a [V,d] table gathered into [ids.size(), d].
  int embedding_lookup(int table, const std::vector<int>& ids) {
    const Tensor<T>& tb = val(table);
    const int d = tb.shape[1];
    Tensor<T> out({static_cast<int>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r)
      std::copy(tb.data.begin() + static_cast<size_t>(ids[r]) * d,
                tb.data.begin() + static_cast<size_t>(ids[r] + 1) * d,
                out.data.begin() + r * d);
    return push(std::move(out), [this, table, ids](int id) {
      if (!has_grad(table)) return;
      const Tensor<T>& g = grad(id);
      Tensor<T>& gt = grad_rw(table);
      const int d = g.shape[1];
      for (size_t r = 0; r < ids.size(); ++r)
        for (int j = 0; j < d; ++j) gt(ids[r], j) += g(static_cast<int>(r), j);
    });
  }

  // Same-padding convolution on [H,W,C]; kernel [kh,kw,Cin,Cout].
  int conv2d(int input, int kernel, int stride = 1) {
    const auto& in = val(input);
    const auto& k = val(kernel);
    const int oh = (in.shape[0] + stride - 1) / stride;
    const int ow = (in.shape[1] + stride - 1) / stride;
    Tensor<T> out({oh, ow, k.shape[3]});
    conv2d_into(out, in, k, stride);
    return push(std::move(out), [this, input, kernel, stride](int id) {
      conv2d_backward(input, kernel, stride, id);
    });
  }

  // Same data, new shape (row-major layout unchanged).
  int reshape(int a, std::vector<int> shape) {
    if (Tensor<T>::numel_of(shape) != val(a).numel())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor<T> out(std::move(shape), val(a).data);
    return push(std::move(out), [this, a](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& g = grad(id);
      Tensor<T>& ga = grad_rw(a);
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
  }

  // [m,n] -> [m,1] row sums.
  int row_sum(int a) {
    const Tensor<T>& v = val(a);
    const int m = v.shape[0], n = v.shape[1];
    Tensor<T> out({m, 1});
    for (int i = 0; i < m; ++i) {
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += v(i, j);
      out.data[i] = acc;
    }
    return push(std::move(out), [this, a, m, n](int id) {
      if (!has_grad(a)) return;
      const Tensor<T>& g = grad(id);
      Tensor<T>& ga = grad_rw(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga(i, j) += g.data[i];
    });
  }

  int sum(int a) {
    T s = T(0);
    for (T v : val(a).data) s += v;
    return push(Tensor<T>({1, 1}, {s}), [this, a](int id) {
      if (!has_grad(a)) return;
      const T g = grad(id).data[0];
      for (auto& v : grad_rw(a).data) v += g;
    });
  }

  int mean(int a) {
    const T inv = T(1) / static_cast<T>(val(a).numel());
    T s = T(0);
    for (T v : val(a).data) s += v;
    return push(Tensor<T>({1, 1}, {s * inv}), [this, a, inv](int id) {
      if (!has_grad(a)) return;
      const T g = grad(id).data[0] * inv;
      for (auto& v : grad_rw(a).data) v += g;
    });
  }

  // Mean over rows of -log softmax(logits)[target].
  int cross_entropy(int logits, const std::vector<int>& targets) {
    const Tensor<T>& z = val(logits);
    const int m = z.shape[0], n = z.shape[1];
    if (static_cast<int>(targets.size()) != m)
      throw std::invalid_argument("cross_entropy: one target per row required");
    Tensor<T> probs(z.shape);
    softmax_rows_into(probs, z);
    T loss = T(0);
    for (int i = 0; i < m; ++i)
      loss -= std::log(std::max(probs(i, targets[i]), std::numeric_limits<T>::min()));
    loss /= static_cast<T>(m);
    // Probabilities are saved on a side leaf so backward does not recompute.
    const int saved = leaf(std::move(probs));
    return push(Tensor<T>({1, 1}, {loss}), [this, logits, targets, saved, m, n](int id) {
      if (!has_grad(logits)) return;
      const T g = grad(id).data[0] / static_cast<T>(m);
      const Tensor<T>& p = val(saved);
      Tensor<T>& gl = grad_rw(logits);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gl(i, j) += g * (p(i, j) - (j == targets[i] ? T(1) : T(0)));
    });
  }

  // Reverse pass from a scalar node. Gradients become readable via grad();
  // parameter leaves accumulate into their external sinks.
  void backward(int loss_id) {
    if (loss_id < 0 || loss_id >= size())
      throw std::invalid_argument("backward: node id not on this tape");
    if (val(loss_id).numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    ensure_grad(loss_id).data[0] = T(1);
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward) continue;
      if (!n.external_grad && n.grad.data.empty()) continue;  // no gradient flowed here
      n.backward(id);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    const Tensor<T>* external_value = nullptr;
    Tensor<T>* external_grad = nullptr;
    std::function<void(int)> backward;
  };

  std::vector<Node> nodes_;

  int last() const { return static_cast<int>(nodes_.size()) - 1; }

  int push(Tensor<T> value, std::function<void(int)> back) {
    if (check_finite && !all_finite(value))
      throw std::runtime_error("non-finite value produced on tape");
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, std::move(back)});
    return last();
  }

  bool has_grad(int) const { return true; }

  Tensor<T>& ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.external_grad) return *n.external_grad;
    if (n.grad.data.empty()) n.grad = Tensor<T>(val(id).shape);
    return n.grad;
  }

  Tensor<T>& grad_rw(int id) { return ensure_grad(id); }

  // += g into node b, reducing over broadcast dimensions; when scale_by is
  // set (mul backward) each contribution is weighted by the matching element.
  void accumulate_broadcast(int b, const Tensor<T>& g, const Tensor<T>* scale_by) {
    Tensor<T>& gb = grad_rw(b);
    const Tensor<T>& vb = val(b);
    const int m = g.shape[0], n = g.shape[1];
    auto w = [&](int i, int j) { return scale_by ? (*scale_by)(i, j) : T(1); };
    if (vb.same_shape(g)) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb(i, j) += g(i, j) * w(i, j);
    } else if (vb.shape == std::vector<int>{1, n}) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb.data[j] += g(i, j) * w(i, j);
    } else {  // scalar
      T acc = T(0);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) acc += g(i, j) * w(i, j);
      gb.data[0] += acc;
    }
  }

  void conv2d_backward(int input, int kernel, int stride, int id) {
    const Tensor<T>& in = val(input);
    const Tensor<T>& k = val(kernel);
    const Tensor<T>& g = grad(id);
    Tensor<T>& gin = grad_rw(input);
    Tensor<T>& gk = grad_rw(kernel);
    const int h = in.shape[0], w = in.shape[1], cin = in.shape[2];
    const int kh = k.shape[0], kw = k.shape[1], cout = k.shape[3];
    const int oh = g.shape[0], ow = g.shape[1];
    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* gpix = g.data.data() + (static_cast<size_t>(oy) * ow + ox) * cout;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - ph;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride + kx - pw;
            if (ix < 0 || ix >= w) continue;
            const T* ipix = in.data.data() + (static_cast<size_t>(iy) * w + ix) * cin;
            T* gipix = gin.data.data() + (static_cast<size_t>(iy) * w + ix) * cin;
            const size_t koff = (static_cast<size_t>(ky) * kw + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T* krow = k.data.data() + koff + static_cast<size_t>(ci) * cout;
              T* gkrow = gk.data.data() + koff + static_cast<size_t>(ci) * cout;
              T acc = T(0);
              const T iv = ipix[ci];
              for (int co = 0; co < cout; ++co) {
                acc += gpix[co] * krow[co];
                gkrow[co] += gpix[co] * iv;
              }
              gipix[ci] += acc;
            }
          }
        }
      }
    }
  }
};

}  // namespace fwlab
