#include "crossfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "crossfuse/errors.hpp"
#include "gemm.hpp"

namespace crossfuse {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;
template <typename T>
using BackwardFn = std::function<void(detail::Node<T>&)>;

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op, std::vector<NodePtr<T>> parents,
                           BackwardFn<T> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->is_leaf = false;
  node->op = op;
  node->seq = detail::next_node_seq();
  const bool needs_grad = GradMode::enabled() &&
                          std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

// Grad buffer of parent i, or nullptr when that parent does not need one.
template <typename T>
T* parent_grad(detail::Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

template <typename T>
void require_rank(const BasicTensor<T>& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(x.shape()));
  }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// (rows, last-axis length) view used by the row-wise ops.
template <typename T>
std::pair<std::size_t, std::size_t> rows_cols(const BasicTensor<T>& x, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": needs at least one axis");
  const std::size_t n = x.shape().back();
  return {x.numel() / n, n};
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return make_result<T>({m, n}, std::move(out), "matmul", {a.node_ptr(), b.node_ptr()},
                        [m, n, k](detail::Node<T>& self) {
                          const T* a_data = self.parents[0]->data.data();
                          const T* b_data = self.parents[1]->data.data();
                          if (T* ga = parent_grad(self, 0)) detail::gemm_nt(m, k, n, self.grad.data(), b_data, ga);
                          if (T* gb = parent_grad(self, 1)) detail::gemm_tn(k, n, m, a_data, self.grad.data(), gb);
                        });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  const std::size_t s = x.dim(0), f = x.dim(1), n = w.dim(1);
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != n)) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  std::vector<T> out(s * n, T(0));
  if (has_bias) {
    for (std::size_t i = 0; i < s; ++i) std::copy(b.data().begin(), b.data().end(), out.begin() + i * n);
  }
  detail::gemm_nn(s, n, f, x.data().data(), w.data().data(), out.data());
  std::vector<NodePtr<T>> parents{x.node_ptr(), w.node_ptr()};
  if (has_bias) parents.push_back(b.node_ptr());
  return make_result<T>({s, n}, std::move(out), "linear", std::move(parents),
                        [s, f, n, has_bias](detail::Node<T>& self) {
                          const T* dy = self.grad.data();
                          if (T* gx = parent_grad(self, 0)) {
                            detail::gemm_nt(s, f, n, dy, self.parents[1]->data.data(), gx);
                          }
                          if (T* gw = parent_grad(self, 1)) {
                            detail::gemm_tn(f, n, s, self.parents[0]->data.data(), dy, gw);
                          }
                          if (has_bias) {
                            if (T* gb = parent_grad(self, 2)) {
                              for (std::size_t i = 0; i < s; ++i) {
                                for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), "add", {a.node_ptr(), b.node_ptr()}, [](detail::Node<T>& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t side = 0; side < 2; ++side) {
      if (T* g = parent_grad(self, side)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), "sub", {a.node_ptr(), b.node_ptr()}, [](detail::Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    }
    if (T* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), "mul", {a.node_ptr(), b.node_ptr()}, [](detail::Node<T>& self) {
    const std::size_t n = self.grad.size();
    const T* ad = self.parents[0]->data.data();
    const T* bd = self.parents[1]->data.data();
    if (T* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bd[i];
    }
    if (T* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * ad[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  return make_result<T>(x.shape(), std::move(out), "scale", {x.node_ptr()}, [factor](detail::Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : (xd[i] == xd[i] ? T(0) : xd[i]);
  return make_result<T>(x.shape(), std::move(out), "relu", {x.node_ptr()}, [](detail::Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T* xd = self.parents[0]->data.data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xd[i] > T(0)) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * inv_sqrt2));
  return make_result<T>(x.shape(), std::move(out), "gelu", {x.node_ptr()}, [inv_sqrt2](detail::Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T* xd = self.parents[0]->data.data();
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(xd[i] * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xd[i] * xd[i]);
        g[i] += self.grad[i] * (cdf + xd[i] * pdf);
      }
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>(Shape{}, std::vector<T>{total}, "sum", {x.node_ptr()}, [](detail::Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(outer * inner, T(0));
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    T* dst = out.data() + o * inner;
    for (std::size_t l = 0; l < len; ++l) {
      const T* src = xd.data() + (o * len + l) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) dst[i] /= static_cast<T>(len);
  }
  return make_result<T>(std::move(out_shape), std::move(out), "mean", {x.node_ptr()},
                        [outer, inner, len](detail::Node<T>& self) {
                          if (T* g = parent_grad(self, 0)) {
                            const T w = T(1) / static_cast<T>(len);
                            for (std::size_t o = 0; o < outer; ++o) {
                              const T* dy = self.grad.data() + o * inner;
                              for (std::size_t l = 0; l < len; ++l) {
                                T* dst = g + (o * len + l) * inner;
                                for (std::size_t i = 0; i < inner; ++i) dst[i] += w * dy[i];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for shape " + shape_str(first));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: inconsistent shapes " + shape_str(first) + " and " + shape_str(s) +
                           " on axis " + std::to_string(axis));
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<NodePtr<T>> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto xd = xs[k].data();
    const std::size_t chunk = lens[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(xd.data() + o * chunk, chunk, out.data() + o * total * inner + offset);
    }
    offset += chunk;
    parents.push_back(xs[k].node_ptr());
  }
  return make_result<T>(std::move(out_shape), std::move(out), "concat", std::move(parents),
                        [outer, inner, total, lens](detail::Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < lens.size(); ++k) {
                            const std::size_t chunk = lens[k] * inner;
                            if (T* g = parent_grad(self, k)) {
                              for (std::size_t o = 0; o < outer; ++o) {
                                const T* src = self.grad.data() + o * total * inner + offset;
                                T* dst = g + o * chunk;
                                for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                              }
                            }
                            offset += chunk;
                          }
                        });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("reshape: zero-sized dimension in " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {x.node_ptr()}, [](detail::Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> flatten_last_two(const BasicTensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("flatten_last_two: needs rank >= 2, got " + shape_str(x.shape()));
  Shape s = x.shape();
  const std::size_t merged = s[s.size() - 2] * s[s.size() - 1];
  s.pop_back();
  s.back() = merged;
  return reshape(x, std::move(s));
}

template <typename T>
BasicTensor<T> transpose_last_two(const BasicTensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last_two: needs rank >= 2, got " + shape_str(x.shape()));
  Shape s = x.shape();
  const std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  const std::size_t batches = x.numel() / (rows * cols);
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < batches; ++b) {
    detail::transpose_into(rows, cols, xd.data() + b * rows * cols, out.data() + b * rows * cols);
  }
  return make_result<T>(std::move(s), std::move(out), "transpose", {x.node_ptr()},
                        [batches, rows, cols](detail::Node<T>& self) {
                          if (T* g = parent_grad(self, 0)) {
                            for (std::size_t b = 0; b < batches; ++b) {
                              const T* src = self.grad.data() + b * rows * cols;
                              T* dst = g + b * rows * cols;
                              // src is [cols x rows]
                              for (std::size_t c = 0; c < cols; ++c) {
                                for (std::size_t r = 0; r < rows; ++r) dst[r * cols + c] += src[c * rows + r];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const auto [rows, n] = rows_cols(x, "softmax");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xd.data() + r * n;
    T* dst = out.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x.node_ptr()},
                        [rows = rows, n = n](detail::Node<T>& self) {
                          if (T* g = parent_grad(self, 0)) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* y = self.data.data() + r * n;
                              const T* dy = self.grad.data() + r * n;
                              T dot = T(0);
                              for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                              for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x) {
  const auto [rows, n] = rows_cols(x, "log_softmax");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xd.data() + r * n;
    T* dst = out.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) total += std::exp(src[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) dst[j] = src[j] - lse;
  }
  return make_result<T>(x.shape(), std::move(out), "log_softmax", {x.node_ptr()},
                        [rows = rows, n = n](detail::Node<T>& self) {
                          if (T* g = parent_grad(self, 0)) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* y = self.data.data() + r * n;
                              const T* dy = self.grad.data() + r * n;
                              T total = T(0);
                              for (std::size_t j = 0; j < n; ++j) total += dy[j];
                              for (std::size_t j = 0; j < n; ++j) g[r * n + j] += dy[j] - std::exp(y[j]) * total;
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps) {
  const auto [rows, n] = rows_cols(x, "layer_norm");
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match feature size " + std::to_string(n));
  }
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  std::vector<T> normalized(x.numel());
  std::vector<T> inv_std(rows);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xd.data() + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += src[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<T>(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (src[j] - mu) * inv_std[r];
      normalized[r * n + j] = h;
      out[r * n + j] = h * gd[j] + bd[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [rows = rows, n = n, normalized = std::move(normalized), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const T* dy = self.grad.data();
        const T* gd = self.parents[1]->data.data();
        if (T* gg = parent_grad(self, 1)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[r * n + j] * normalized[r * n + j];
          }
        }
        if (T* gb = parent_grad(self, 2)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[r * n + j];
          }
        }
        if (T* gx = parent_grad(self, 0)) {
          std::vector<T> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = T(0), mean_dh_h = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = dy[r * n + j] * gd[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * normalized[r * n + j];
            }
            mean_dh /= static_cast<T>(n);
            mean_dh_h /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[r * n + j] += inv_std[r] * (dh[j] - mean_dh - normalized[r * n + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b, std::size_t stride,
                      std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k || b.shape() != Shape{co}) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                         ", bias " + shape_str(b.shape()) + " are inconsistent");
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (h + 2 * padding < k || wd + 2 * padding < k) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - k) / stride + 1;
  const std::size_t patch = c * k * k, positions = ho * wo;

  // cols[(ci*k + ky)*k + kx, oy*wo + ox]
  std::vector<T> cols(patch * positions, T(0));
  const auto xd = x.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((ci * k + ky) * k + kx) * positions;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            row[oy * wo + ox] = xd[(ci * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  std::vector<T> out(co * positions);
  for (std::size_t o = 0; o < co; ++o) std::fill_n(out.data() + o * positions, positions, b.data()[o]);
  detail::gemm_nn(co, positions, patch, w.data().data(), cols.data(), out.data());

  return make_result<T>(
      {co, ho, wo}, std::move(out), "conv2d", {x.node_ptr(), w.node_ptr(), b.node_ptr()},
      [c, h, wd, co, k, ho, wo, stride, padding, patch, positions, cols = std::move(cols)](detail::Node<T>& self) {
        const T* dy = self.grad.data();
        if (T* gw = parent_grad(self, 1)) detail::gemm_nt(co, patch, positions, dy, cols.data(), gw);
        if (T* gb = parent_grad(self, 2)) {
          for (std::size_t o = 0; o < co; ++o) {
            T acc = T(0);
            for (std::size_t p = 0; p < positions; ++p) acc += dy[o * positions + p];
            gb[o] += acc;
          }
        }
        if (T* gx = parent_grad(self, 0)) {
          std::vector<T> dcols(patch * positions, T(0));
          detail::gemm_tn(patch, positions, co, self.parents[1]->data.data(), dy, dcols.data());
          for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = dcols.data() + ((ci * k + ky) * k + kx) * positions;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                    gx[(ci * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] +=
                        row[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> conv1d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b, std::size_t stride) {
  require_rank(x, 2, "conv1d");
  require_rank(w, 3, "conv1d");
  const std::size_t c = x.dim(0), len = x.dim(1);
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || b.shape() != Shape{co}) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                         ", bias " + shape_str(b.shape()) + " are inconsistent");
  }
  if (stride == 0) throw DimensionError("conv1d: stride must be positive");
  if (len < k) {
    throw DimensionError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                         std::to_string(k));
  }
  const std::size_t lo = (len - k) / stride + 1;
  const std::size_t patch = c * k;
  std::vector<T> cols(patch * lo);
  const auto xd = x.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t j = 0; j < k; ++j) {
      T* row = cols.data() + (ci * k + j) * lo;
      const T* src = xd.data() + ci * len + j;
      for (std::size_t o = 0; o < lo; ++o) row[o] = src[o * stride];
    }
  }
  std::vector<T> out(co * lo);
  for (std::size_t o = 0; o < co; ++o) std::fill_n(out.data() + o * lo, lo, b.data()[o]);
  detail::gemm_nn(co, lo, patch, w.data().data(), cols.data(), out.data());

  return make_result<T>({co, lo}, std::move(out), "conv1d", {x.node_ptr(), w.node_ptr(), b.node_ptr()},
                        [c, len, co, k, lo, stride, patch, cols = std::move(cols)](detail::Node<T>& self) {
                          const T* dy = self.grad.data();
                          if (T* gw = parent_grad(self, 1)) detail::gemm_nt(co, patch, lo, dy, cols.data(), gw);
                          if (T* gb = parent_grad(self, 2)) {
                            for (std::size_t o = 0; o < co; ++o) {
                              T acc = T(0);
                              for (std::size_t p = 0; p < lo; ++p) acc += dy[o * lo + p];
                              gb[o] += acc;
                            }
                          }
                          if (T* gx = parent_grad(self, 0)) {
                            std::vector<T> dcols(patch * lo, T(0));
                            detail::gemm_tn(patch, lo, co, self.parents[1]->data.data(), dy, dcols.data());
                            for (std::size_t ci = 0; ci < c; ++ci) {
                              for (std::size_t j = 0; j < k; ++j) {
                                const T* row = dcols.data() + (ci * k + j) * lo;
                                T* dst = gx + ci * len + j;
                                for (std::size_t o = 0; o < lo; ++o) dst[o * stride] += row[o];
                              }
                            }
                          }
                        });
}

#define CROSSFUSE_INSTANTIATE_OPS(T)                                                                          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                   \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&, std::size_t);                                          \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);                           \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                             \
  template BasicTensor<T> flatten_last_two(const BasicTensor<T>&);                                           \
  template BasicTensor<T> transpose_last_two(const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                                \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                 std::size_t, std::size_t);                                                  \
  template BasicTensor<T> conv1d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                 std::size_t);

CROSSFUSE_INSTANTIATE_OPS(float)
CROSSFUSE_INSTANTIATE_OPS(double)

#undef CROSSFUSE_INSTANTIATE_OPS

}  // namespace crossfuse
