#pragma once

#include <cmath>
#include <vector>

#include "crossfuse/attention.hpp"
#include "crossfuse/random.hpp"
#include "crossfuse/tensor.hpp"

namespace testutil {

using crossfuse::Rng;
using crossfuse::Shape;
using crossfuse::Tensor;

using Matrix = std::vector<std::vector<double>>;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<float> v(crossfuse::shape_numel(shape));
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Matrix to_matrix(const Tensor& t) {
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  Matrix m(rows, std::vector<double>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = t.data()[i * cols + j];
  }
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    }
  }
  return c;
}

// softmax(q k^T / sqrt(d)) v, written out in double.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Matrix out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size());
    double mx = -1e300;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t f = 0; f < q[i].size(); ++f) dot += q[i][f] * k[j][f];
      s[j] = dot * scale;
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.size(); ++j) {
      for (std::size_t f = 0; f < v[j].size(); ++f) out[i][f] += s[j] / z * v[j][f];
    }
  }
  return out;
}

inline Matrix multi_head(const Matrix& q, const Matrix& k, const Matrix& v, const crossfuse::AttentionParams& p) {
  Matrix concat(q.size());
  for (std::size_t h = 0; h < p.heads(); ++h) {
    const Matrix head = attention(matmul(q, to_matrix(p.w_query[h])), matmul(k, to_matrix(p.w_key[h])),
                                  matmul(v, to_matrix(p.w_value[h])));
    for (std::size_t i = 0; i < q.size(); ++i) concat[i].insert(concat[i].end(), head[i].begin(), head[i].end());
  }
  return matmul(concat, to_matrix(p.w_out));
}

inline double max_abs_diff(const Tensor& a, const Matrix& b) {
  double m = 0.0;
  const std::size_t cols = b[0].size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) m = std::max(m, std::abs(a.data()[i * cols + j] - b[i][j]));
  }
  return m;
}

// Rows of x reordered so that row i of the result is row perm[i] of x.
inline Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t cols = x.dim(1);
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(x.data().data() + perm[i] * cols, cols, out.data() + i * cols);
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace testutil

#include "crossfuse/synth.hpp"

namespace testutil {

// Synthetic spec whose media match crossfuse::gradcheck::tiny_model_config().
inline crossfuse::SynthSpec tiny_spec(std::size_t num_train, std::size_t num_val, std::uint64_t seed = 0) {
  crossfuse::SynthSpec s;
  s.num_train = num_train;
  s.num_val = num_val;
  s.video_height = 8;
  s.video_width = 8;
  s.video_frames = 6;
  s.grating_cycles = 2.0;
  s.audio_length = 320;
  s.seed = seed;
  return s;
}

}  // namespace testutil
