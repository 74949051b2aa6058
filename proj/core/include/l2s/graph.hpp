#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "l2s/error.hpp"
#include "l2s/tensor.hpp"

namespace l2s {

constexpr int kIgnoreId = -100;

// Reverse-mode tape. Nodes are recorded in topological order by
// construction; backward() walks them once in reverse. Leaves are the
// trainable parameters; constants never receive gradients and their
// subgraphs are skipped during the backward sweep.
template <typename T>
class Graph {
 public:
  using Id = int32_t;

  Id constant(Tensor<T> v) { return push(std::move(v), false); }

  Id leaf(Tensor<T> v) { return push(std::move(v), true); }

  const Tensor<T>& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }

  // Zero tensor of matching shape until backward() has run.
  const Tensor<T>& grad(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  // Accumulated 2*p*q*r over every matmul recorded on the tape.
  int64_t flops() const { return flops_; }

  size_t size() const { return nodes_.size(); }

  Id matmul(Id a, Id b) {
    Tensor<T> v = l2s::matmul(value(a), value(b));
    flops_ += matmul_flops(value(a).rows(), value(a).cols(), value(b).cols());
    return push_op(std::move(v), {a, b}, [a, b](Graph& g, const Tensor<T>& gout) {
      if (g.needs_grad(a)) g.accumulate(a, matmul_nt(gout, g.value(b)));
      if (g.needs_grad(b)) {
        // dB = A^T . gout
        g.accumulate(b, l2s::matmul(l2s::transpose(g.value(a)), gout));
      }
    });
  }

  Id add(Id a, Id b) {
    Tensor<T> v = l2s::add(value(a), value(b));
    return push_op(std::move(v), {a, b}, [a, b](Graph& g, const Tensor<T>& gout) {
      if (g.needs_grad(a)) g.accumulate(a, gout);
      if (g.needs_grad(b)) g.accumulate(b, gout);
    });
  }

  Id add_bias(Id x, Id bias) {
    Tensor<T> v = l2s::add_bias(value(x), value(bias));
    return push_op(std::move(v), {x, bias}, [x, bias](Graph& g, const Tensor<T>& gout) {
      if (g.needs_grad(x)) g.accumulate(x, gout);
      if (g.needs_grad(bias)) {
        Tensor<T> gb = Tensor<T>::zeros(g.value(bias).shape);
        for (int64_t i = 0; i < gout.rows(); ++i)
          for (int64_t j = 0; j < gout.cols(); ++j)
            gb.data[static_cast<size_t>(j)] += gout.at(i, j);
        g.accumulate(bias, std::move(gb));
      }
    });
  }

  Id scale(Id x, T c) {
    Tensor<T> v = l2s::scale(value(x), c);
    return push_op(std::move(v), {x}, [x, c](Graph& g, const Tensor<T>& gout) {
      if (g.needs_grad(x)) g.accumulate(x, l2s::scale(gout, c));
    });
  }

  Id transpose(Id x) {
    Tensor<T> v = l2s::transpose(value(x));
    return push_op(std::move(v), {x}, [x](Graph& g, const Tensor<T>& gout) {
      if (g.needs_grad(x)) g.accumulate(x, l2s::transpose(gout));
    });
  }

  Id relu(Id x) {
    Tensor<T> v = l2s::relu(value(x));
    return push_op(std::move(v), {x}, [x](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(x)) return;
      Tensor<T> gx = gout;
      const Tensor<T>& in = g.value(x);
      for (size_t i = 0; i < gx.data.size(); ++i)
        if (in.data[i] <= T(0)) gx.data[i] = T(0);
      g.accumulate(x, std::move(gx));
    });
  }

  Id gelu(Id x) {
    Tensor<T> v = l2s::gelu(value(x));
    return push_op(std::move(v), {x}, [x](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(x)) return;
      Tensor<T> gx = gout;
      const Tensor<T>& in = g.value(x);
      for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= gelu_grad_scalar(in.data[i]);
      g.accumulate(x, std::move(gx));
    });
  }

  Id softmax_rows(Id x) {
    Tensor<T> v = l2s::softmax_rows(value(x));
    Tensor<T> saved = v;  // adjoint needs the output probabilities
    return push_op(std::move(v), {x},
                   [x, p = std::move(saved)](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(x)) return;
      Tensor<T> gx = Tensor<T>::zeros(p.shape);
      for (int64_t i = 0; i < p.rows(); ++i) {
        const T* prow = p.row_ptr(i);
        const T* go = gout.row_ptr(i);
        T dot = T(0);
        for (int64_t j = 0; j < p.cols(); ++j) dot += go[j] * prow[j];
        T* gx_row = gx.row_ptr(i);
        for (int64_t j = 0; j < p.cols(); ++j) gx_row[j] = prow[j] * (go[j] - dot);
      }
      g.accumulate(x, std::move(gx));
    });
  }

  Id layer_norm(Id x, Id gain, Id bias, T eps) {
    Tensor<T> v = l2s::layer_norm(value(x), value(gain), value(bias), eps);
    return push_op(std::move(v), {x, gain, bias},
                   [x, gain, bias, eps](Graph& g, const Tensor<T>& gout) {
      const Tensor<T>& in = g.value(x);
      const Tensor<T>& gn = g.value(gain);
      const int64_t r = in.rows(), c = in.cols();
      Tensor<T> gx = Tensor<T>::zeros(in.shape);
      Tensor<T> ggain = Tensor<T>::zeros(gn.shape);
      Tensor<T> gbias = Tensor<T>::zeros(gn.shape);
      for (int64_t i = 0; i < r; ++i) {
        const T* xr = in.row_ptr(i);
        const T* go = gout.row_ptr(i);
        T mean = T(0);
        for (int64_t j = 0; j < c; ++j) mean += xr[j];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int64_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        // dL/dxhat and the two reduced terms of the layer-norm adjoint
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (int64_t j = 0; j < c; ++j) {
          const T xhat = (xr[j] - mean) * inv;
          const T dxhat = go[j] * gn.data[static_cast<size_t>(j)];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          ggain.data[static_cast<size_t>(j)] += go[j] * xhat;
          gbias.data[static_cast<size_t>(j)] += go[j];
        }
        T* gx_row = gx.row_ptr(i);
        const T cn = static_cast<T>(c);
        for (int64_t j = 0; j < c; ++j) {
          const T xhat = (xr[j] - mean) * inv;
          const T dxhat = go[j] * gn.data[static_cast<size_t>(j)];
          gx_row[j] = inv * (dxhat - sum_dxhat / cn - xhat * sum_dxhat_xhat / cn);
        }
      }
      if (g.needs_grad(x)) g.accumulate(x, std::move(gx));
      if (g.needs_grad(gain)) g.accumulate(gain, std::move(ggain));
      if (g.needs_grad(bias)) g.accumulate(bias, std::move(gbias));
    });
  }

  Id causal_mask(Id x, int64_t offset) {
    Tensor<T> v = l2s::causal_mask(value(x), offset);
    return push_op(std::move(v), {x}, [x, offset](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(x)) return;
      Tensor<T> gx = gout;
      for (int64_t i = 0; i < gx.rows(); ++i) {
        T* row = gx.row_ptr(i);
        for (int64_t j = i + offset + 1; j < gx.cols(); ++j) row[j] = T(0);
      }
      g.accumulate(x, std::move(gx));
    });
  }

  Id slice_cols(Id x, int64_t c0, int64_t c1) {
    const Tensor<T>& in = value(x);
    if (c0 < 0 || c1 > in.cols() || c0 >= c1)
      throw ContractError("slice_cols: bad range");
    Tensor<T> v = Tensor<T>::zeros({in.rows(), c1 - c0});
    for (int64_t i = 0; i < in.rows(); ++i)
      for (int64_t j = c0; j < c1; ++j) v.at(i, j - c0) = in.at(i, j);
    return push_op(std::move(v), {x}, [x, c0, c1](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(x)) return;
      Tensor<T> gx = Tensor<T>::zeros(g.value(x).shape);
      for (int64_t i = 0; i < gout.rows(); ++i)
        for (int64_t j = c0; j < c1; ++j) gx.at(i, j) = gout.at(i, j - c0);
      g.accumulate(x, std::move(gx));
    });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    int64_t total = 0;
    const int64_t r = value(parts.front()).rows();
    for (Id p : parts) total += value(p).cols();
    Tensor<T> v = Tensor<T>::zeros({r, total});
    int64_t off = 0;
    for (Id p : parts) {
      const Tensor<T>& t = value(p);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < t.cols(); ++j) v.at(i, off + j) = t.at(i, j);
      off += t.cols();
    }
    std::vector<Id> ps = parts;
    return push_op(std::move(v), ps, [ps](Graph& g, const Tensor<T>& gout) {
      int64_t off2 = 0;
      for (Id p : ps) {
        const Tensor<T>& t = g.value(p);
        if (g.needs_grad(p)) {
          Tensor<T> gp = Tensor<T>::zeros(t.shape);
          for (int64_t i = 0; i < gout.rows(); ++i)
            for (int64_t j = 0; j < t.cols(); ++j) gp.at(i, j) = gout.at(i, off2 + j);
          g.accumulate(p, std::move(gp));
        }
        off2 += t.cols();
      }
    });
  }

  Id concat_rows(const std::vector<Id>& parts) {
    int64_t total = 0;
    const int64_t c = value(parts.front()).cols();
    for (Id p : parts) total += value(p).rows();
    Tensor<T> v = Tensor<T>::zeros({total, c});
    int64_t off = 0;
    for (Id p : parts) {
      const Tensor<T>& t = value(p);
      for (int64_t i = 0; i < t.rows(); ++i)
        for (int64_t j = 0; j < c; ++j) v.at(off + i, j) = t.at(i, j);
      off += t.rows();
    }
    std::vector<Id> ps = parts;
    return push_op(std::move(v), ps, [ps](Graph& g, const Tensor<T>& gout) {
      int64_t off2 = 0;
      for (Id p : ps) {
        const Tensor<T>& t = g.value(p);
        if (g.needs_grad(p)) {
          Tensor<T> gp = Tensor<T>::zeros(t.shape);
          for (int64_t i = 0; i < t.rows(); ++i)
            for (int64_t j = 0; j < t.cols(); ++j) gp.at(i, j) = gout.at(off2 + i, j);
          g.accumulate(p, std::move(gp));
        }
        off2 += t.rows();
      }
    });
  }

  // Gather rows of `table` by token id. Gradient scatters back into the
  // table, accumulating across repeated ids.
  Id embedding_rows(Id table, std::vector<int> ids) {
    const Tensor<T>& tab = value(table);
    Tensor<T> v = Tensor<T>::zeros({static_cast<int64_t>(ids.size()), tab.cols()});
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tab.rows())
        throw ContractError("embedding_rows: id " + std::to_string(ids[i]) + " out of range");
      for (int64_t j = 0; j < tab.cols(); ++j)
        v.at(static_cast<int64_t>(i), j) = tab.at(ids[i], j);
    }
    return push_op(std::move(v), {table},
                   [table, ids = std::move(ids)](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(table)) return;
      Tensor<T> gt = Tensor<T>::zeros(g.value(table).shape);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < gout.cols(); ++j)
          gt.at(ids[i], j) += gout.at(static_cast<int64_t>(i), j);
      g.accumulate(table, std::move(gt));
    });
  }

  // Mean negative log-softmax probability of the targets. Rows whose target
  // is kIgnoreId contribute nothing to the loss or to the gradient.
  Id cross_entropy(Id logits, std::vector<int> targets) {
    const Tensor<T>& lg = value(logits);
    if (static_cast<int64_t>(targets.size()) != lg.rows())
      throw ShapeError("cross_entropy: target count " + std::to_string(targets.size()) +
                       " vs logits " + lg.shape_str());
    int64_t counted = 0;
    T total = T(0);
    for (int64_t i = 0; i < lg.rows(); ++i) {
      const int t = targets[static_cast<size_t>(i)];
      if (t == kIgnoreId) continue;
      if (t < 0 || t >= lg.cols()) throw ContractError("cross_entropy: target out of range");
      const T* row = lg.row_ptr(i);
      T mx = row[0];
      for (int64_t j = 1; j < lg.cols(); ++j) mx = std::max(mx, row[j]);
      T sum = T(0);
      for (int64_t j = 0; j < lg.cols(); ++j) sum += std::exp(row[j] - mx);
      total += std::log(sum) + mx - row[t];
      ++counted;
    }
    if (counted == 0) throw ContractError("cross_entropy: every position ignored, mean undefined");
    Tensor<T> v({1}, {total / static_cast<T>(counted)});
    return push_op(std::move(v), {logits},
                   [logits, targets = std::move(targets), counted](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(logits)) return;
      const Tensor<T>& lg2 = g.value(logits);
      Tensor<T> p = l2s::softmax_rows(lg2);
      const T s = gout.data[0] / static_cast<T>(counted);
      Tensor<T> gx = Tensor<T>::zeros(lg2.shape);
      for (int64_t i = 0; i < lg2.rows(); ++i) {
        const int t = targets[static_cast<size_t>(i)];
        if (t == kIgnoreId) continue;
        T* gx_row = gx.row_ptr(i);
        const T* prow = p.row_ptr(i);
        for (int64_t j = 0; j < lg2.cols(); ++j) gx_row[j] = prow[j] * s;
        gx_row[t] -= s;
      }
      g.accumulate(logits, std::move(gx));
    });
  }

  Id sum_all(Id x) {
    T total = T(0);
    for (T v : value(x).data) total += v;
    Tensor<T> v({1}, {total});
    return push_op(std::move(v), {x}, [x](Graph& g, const Tensor<T>& gout) {
      if (!g.needs_grad(x)) return;
      g.accumulate(x, Tensor<T>::full(g.value(x).shape, gout.data[0]));
    });
  }

  void backward(Id loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    if (ln.value.numel() != 1)
      throw ContractError("backward: loss must be scalar, got " + ln.value.shape_str());
    ln.grad = Tensor<T>::full(ln.value.shape, T(1));
    for (int32_t i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.data.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  bool needs_grad(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  void accumulate(Id id, Tensor<T> g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) {
      n.grad = std::move(g);
    } else {
      for (size_t i = 0; i < n.grad.data.size(); ++i) n.grad.data[i] += g.data[i];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void(Graph&, const Tensor<T>&)> backward;
  };

  Id push(Tensor<T> v, bool requires_grad) {
    nodes_.push_back(Node{std::move(v), {}, requires_grad, nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  template <typename Fn>
  Id push_op(Tensor<T> v, const std::vector<Id>& parents, Fn&& backward) {
    bool rg = false;
    for (Id p : parents) rg = rg || nodes_[static_cast<size_t>(p)].requires_grad;
    Id id = push(std::move(v), rg);
    if (rg) nodes_[static_cast<size_t>(id)].backward = std::forward<Fn>(backward);
    return id;
  }

  std::vector<Node> nodes_;
  int64_t flops_ = 0;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace l2s
