// SPDX-License-Identifier: Apache-2.0
#include "etc/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "etc/kernels.hpp"

namespace etc::ag {
namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_result(Matrix<T> value, std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const NodePtr<T>& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <class T>
void accumulate(Node<T>& target, const Matrix<T>& g) {
  if (!target.requires_grad) return;
  auto& buf = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf.data()[i] += g.data()[i];
}

std::string shape_of(std::size_t r, std::size_t c) { return "[" + std::to_string(r) + "x" + std::to_string(c) + "]"; }

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_of(a.rows(), a.cols()) + " vs " +
                                shape_of(b.rows(), b.cols()));
}

}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
Var<T>::Var(Matrix<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <class T>
Matrix<T> Var<T>::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix<T>(rows(), cols());
}

template <class T>
void backward(const Var<T>& root) {
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward: root must be a 1x1 scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()(0, 0) += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.same_shape(node->value)) node->backward(*node);
  }
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: dimension mismatch " + shape_of(a.rows(), a.cols()) + " * " +
                                shape_of(b.rows(), b.cols()));
  Matrix<T> out;
  kernels::gemm_nn(a.value(), b.value(), out);
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) kernels::gemm_nt(self.grad, pb.value, pa.grad_buffer(), true);
    if (pb.requires_grad) kernels::gemm_tn(pa.value, self.grad, pb.grad_buffer(), true);
  });
}

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: dimension mismatch " + shape_of(a.rows(), a.cols()) + " * " +
                                shape_of(b.rows(), b.cols()) + "^T");
  Matrix<T> out;
  kernels::gemm_nt(a.value(), b.value(), out);
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) kernels::gemm_nn(self.grad, pb.value, pa.grad_buffer(), true);
    if (pb.requires_grad) kernels::gemm_tn(self.grad, pa.value, pb.grad_buffer(), true);
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.value().data()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias) {
  if (bias.value().size() != a.cols())
    throw std::invalid_argument("add_row: bias width " + std::to_string(bias.value().size()) + " vs " +
                                std::to_string(a.cols()));
  Matrix<T> out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias.value().data()[c];
  return make_result<T>(std::move(out), {a.node(), bias.node()}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    Node<T>& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& g = pb.grad_buffer();
    for (std::size_t r = 0; r < self.grad.rows(); ++r)
      for (std::size_t c = 0; c < self.grad.cols(); ++c) g.data()[c] += self.grad(r, c);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  Matrix<T> out = a.value();
  for (T& v : out.values()) v *= factor;
  return make_result<T>(std::move(out), {a.node()}, [factor](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += factor * self.grad.data()[i];
  });
}

template <class T>
Var<T> add_constant(const Var<T>& a, const Matrix<T>& c) {
  if (!a.value().same_shape(c)) throw std::invalid_argument("add_constant: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += c.data()[i];
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) { accumulate(*self.parents[0], self.grad); });
}

template <class T>
Var<T> gelu(const Var<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = kernels::gelu(a.value().data()[i]);
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data()[i] += self.grad.data()[i] * kernels::gelu_derivative(pa.value.data()[i]);
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  if (x.cols() == 0) throw std::invalid_argument("layer_norm: empty feature dimension");
  Matrix<T> out;
  std::vector<T> mean, rstd;
  kernels::layer_norm_rows(x.value(), gain.value(), bias.value(), eps, out, mean, rstd);
  return make_result<T>(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [mean = std::move(mean), rstd = std::move(rstd)](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        Node<T>& pg = *self.parents[1];
        Node<T>& pb = *self.parents[2];
        const std::size_t d = px.value.cols();
        std::vector<T> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < px.value.rows(); ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < d; ++c) {
            xhat[c] = (px.value(r, c) - mean[r]) * rstd[r];
            dxhat[c] = self.grad(r, c) * pg.value.data()[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
          }
          mean_d /= static_cast<T>(d);
          mean_dx /= static_cast<T>(d);
          if (px.requires_grad) {
            auto& g = px.grad_buffer();
            for (std::size_t c = 0; c < d; ++c) g(r, c) += rstd[r] * (dxhat[c] - mean_d - xhat[c] * mean_dx);
          }
          if (pg.requires_grad) {
            auto& g = pg.grad_buffer();
            for (std::size_t c = 0; c < d; ++c) g.data()[c] += self.grad(r, c) * xhat[c];
          }
          if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t c = 0; c < d; ++c) g.data()[c] += self.grad(r, c);
          }
        }
      });
}

template <class T>
Var<T> softmax(const Var<T>& scores, T guard) {
  if (!all_finite(scores.value())) throw std::domain_error("non-finite scores");
  Matrix<T> out;
  kernels::softmax_rows(scores.value(), guard, out);
  return make_result<T>(std::move(out), {scores.node()}, [](Node<T>& self) {
    Node<T>& ps = *self.parents[0];
    if (!ps.requires_grad) return;
    auto& g = ps.grad_buffer();
    const std::size_t cols = self.value.cols();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      T inner = 0;
      for (std::size_t c = 0; c < cols; ++c) inner += self.grad(r, c) * self.value(r, c);
      for (std::size_t c = 0; c < cols; ++c) g(r, c) += self.value(r, c) * (self.grad(r, c) - inner);
    }
  });
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.cols();
    parents.push_back(p.node());
  }
  Matrix<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p.value().row(r).begin(), p.value().row(r).end(), out.row(r).begin() + offset);
    offset += p.cols();
  }
  return make_result<T>(std::move(out), std::move(parents), [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& parent : self.parents) {
      const std::size_t w = parent->value.cols();
      if (parent->requires_grad) {
        auto& g = parent->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) g(r, c) += self.grad(r, offset + c);
      }
      offset += w;
    }
  });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p.rows();
    parents.push_back(p.node());
  }
  Matrix<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + offset * cols);
    offset += p.rows();
  }
  return make_result<T>(std::move(out), std::move(parents), [](Node<T>& self) {
    std::size_t offset = 0;
    const std::size_t cols = self.value.cols();
    for (auto& parent : self.parents) {
      const std::size_t h = parent->value.rows();
      if (parent->requires_grad) {
        auto& g = parent->grad_buffer();
        for (std::size_t i = 0; i < h * cols; ++i) g.data()[i] += self.grad.data()[offset * cols + i];
      }
      offset += h;
    }
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw std::out_of_range("slice_cols: range exceeds width");
  Matrix<T> out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a.value()(r, begin + c);
  return make_result<T>(std::move(out), {a.node()}, [begin, count](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) g(r, begin + c) += self.grad(r, c);
  });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw std::out_of_range("slice_rows: range exceeds height");
  const std::size_t cols = a.cols();
  Matrix<T> out(count, cols, std::span<const T>(a.value().data() + begin * cols, count * cols));
  return make_result<T>(std::move(out), {a.node()}, [begin](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    const std::size_t cols = self.value.cols();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g.data()[begin * cols + i] += self.grad.data()[i];
  });
}

template <class T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> ids) {
  const std::size_t cols = table.cols();
  Matrix<T> out(ids.size(), cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows())
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return make_result<T>(std::move(out), {table.node()}, [kept = std::move(kept)](Node<T>& self) {
    Node<T>& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    auto& g = pt.grad_buffer();
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) g(static_cast<std::size_t>(kept[i]), c) += self.grad(i, c);
  });
}

template <class T>
Var<T> relative_bias(const Var<T>& q, const Var<T>& keys, const Grid<std::int32_t>& labels) {
  if (q.cols() != keys.cols()) throw std::invalid_argument("relative_bias: query/key width mismatch");
  if (labels.rows() != q.rows()) throw std::invalid_argument("relative_bias: label rows must match queries");
  const auto vocab = static_cast<std::int32_t>(keys.rows());
  for (std::int32_t id : labels.values())
    if (id >= vocab) throw std::out_of_range("relative_bias: label id " + std::to_string(id) + " out of range");
  Matrix<T> dots;
  kernels::gemm_nt(q.value(), keys.value(), dots);
  Matrix<T> out(labels.rows(), labels.cols());
  for (std::size_t i = 0; i < labels.rows(); ++i)
    for (std::size_t c = 0; c < labels.cols(); ++c) {
      const std::int32_t id = labels(i, c);
      if (id >= 0) out(i, c) = dots(i, static_cast<std::size_t>(id));
    }
  return make_result<T>(std::move(out), {q.node(), keys.node()}, [labels](Node<T>& self) {
    Node<T>& pq = *self.parents[0];
    Node<T>& pk = *self.parents[1];
    Matrix<T> per_label(labels.rows(), pk.value.rows());
    for (std::size_t i = 0; i < labels.rows(); ++i)
      for (std::size_t c = 0; c < labels.cols(); ++c) {
        const std::int32_t id = labels(i, c);
        if (id >= 0) per_label(i, static_cast<std::size_t>(id)) += self.grad(i, c);
      }
    if (pq.requires_grad) kernels::gemm_nn(per_label, pk.value, pq.grad_buffer(), true);
    if (pk.requires_grad) kernels::gemm_tn(per_label, pq.value, pk.grad_buffer(), true);
  });
}

template <class T>
Var<T> band_scores(const Var<T>& q, const Var<T>& k, std::size_t radius) {
  Matrix<T> out;
  kernels::band_scores(q.value(), k.value(), radius, out);
  return make_result<T>(std::move(out), {q.node(), k.node()}, [radius](Node<T>& self) {
    Node<T>& pq = *self.parents[0];
    Node<T>& pk = *self.parents[1];
    if (pq.requires_grad) kernels::band_apply(self.grad, pk.value, radius, pq.grad_buffer(), true);
    if (pk.requires_grad) kernels::band_scatter(self.grad, pq.value, radius, pk.grad_buffer(), true);
  });
}

template <class T>
Var<T> band_apply(const Var<T>& weights, const Var<T>& values, std::size_t radius) {
  Matrix<T> out;
  kernels::band_apply(weights.value(), values.value(), radius, out);
  return make_result<T>(std::move(out), {weights.node(), values.node()}, [radius](Node<T>& self) {
    Node<T>& pw = *self.parents[0];
    Node<T>& pv = *self.parents[1];
    if (pw.requires_grad) {
      Matrix<T> dw;
      kernels::band_scores(self.grad, pv.value, radius, dw);
      accumulate(pw, dw);
    }
    if (pv.requires_grad) kernels::band_scatter(pw.value, self.grad, radius, pv.grad_buffer(), true);
  });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets) {
  if (targets.size() != logits.rows()) throw std::invalid_argument("cross_entropy: one target per row required");
  if (targets.empty()) throw std::invalid_argument("cross_entropy: no targets");
  const std::size_t n = logits.rows(), v = logits.cols();
  Matrix<T> probs(n, v);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= v) throw std::out_of_range("cross_entropy: target out of range");
    T mx = logits.value()(r, 0);
    for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, logits.value()(r, c));
    T sum = 0;
    for (std::size_t c = 0; c < v; ++c) sum += std::exp(logits.value()(r, c) - mx);
    const T log_z = mx + std::log(sum);
    total += log_z - logits.value()(r, static_cast<std::size_t>(t));
    for (std::size_t c = 0; c < v; ++c) probs(r, c) = std::exp(logits.value()(r, c) - log_z);
  }
  Matrix<T> out(1, 1, {total / static_cast<T>(n)});
  std::vector<std::int32_t> kept(targets.begin(), targets.end());
  return make_result<T>(std::move(out), {logits.node()},
                        [probs = std::move(probs), kept = std::move(kept)](Node<T>& self) {
                          Node<T>& pl = *self.parents[0];
                          if (!pl.requires_grad) return;
                          auto& g = pl.grad_buffer();
                          const T s = self.grad(0, 0) / static_cast<T>(kept.size());
                          for (std::size_t r = 0; r < probs.rows(); ++r) {
                            for (std::size_t c = 0; c < probs.cols(); ++c) g(r, c) += s * probs(r, c);
                            g(r, static_cast<std::size_t>(kept[r])) -= s;
                          }
                        });
}

#define ETC_INSTANTIATE_AG(T)                                                                  \
  template class Var<T>;                                                                       \
  template void backward<T>(const Var<T>&);                                                    \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> scale<T>(const Var<T>&, T);                                                  \
  template Var<T> add_constant<T>(const Var<T>&, const Matrix<T>&);                            \
  template Var<T> gelu<T>(const Var<T>&);                                                      \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);               \
  template Var<T> softmax<T>(const Var<T>&, T);                                                \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                                     \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                                     \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);                      \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                      \
  template Var<T> gather_rows<T>(const Var<T>&, std::span<const std::int32_t>);                \
  template Var<T> relative_bias<T>(const Var<T>&, const Var<T>&, const Grid<std::int32_t>&);   \
  template Var<T> band_scores<T>(const Var<T>&, const Var<T>&, std::size_t);                   \
  template Var<T> band_apply<T>(const Var<T>&, const Var<T>&, std::size_t);                    \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const std::int32_t>);

ETC_INSTANTIATE_AG(float)
ETC_INSTANTIATE_AG(double)

}  // namespace etc::ag
