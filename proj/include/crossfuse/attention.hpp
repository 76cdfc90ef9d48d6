#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "crossfuse/encoders.hpp"
#include "crossfuse/params.hpp"
#include "crossfuse/tensor.hpp"

namespace crossfuse {

/// Per-head query/key/value projections (each [d x d_h]) and the output
/// projection W^O ([h*d_h x d]). No biases.
struct AttentionParams {
  std::vector<Tensor> w_query;
  std::vector<Tensor> w_key;
  std::vector<Tensor> w_value;
  Tensor w_out;

  std::size_t heads() const { return w_query.size(); }
  std::size_t model_dim() const { return w_out.dim(1); }

  static AttentionParams init(std::size_t model_dim, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Collects the softmax weight matrices of every attention call it is passed to.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

/// softmax(Q K^T / sqrt(d_k)) V with d_k = Q's feature size.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionTrace* trace = nullptr);

/// Concat(head_1..head_h) W^O, head_i = attention(q W^Q_i, k W^K_i, v W^V_i).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                            AttentionTrace* trace = nullptr);

/// x + MHA(x, x, x) with x = audio rows followed by video rows.
Tensor self_attention_block(const ModalEmbedding& a_emb, const ModalEmbedding& v_emb, const AttentionParams& params,
                            AttentionTrace* trace = nullptr);

/// query + MHA(query, context, context).
Tensor cross_attention_block(const ModalEmbedding& query_mod, const ModalEmbedding& context_mod,
                             const AttentionParams& params, AttentionTrace* trace = nullptr);

}  // namespace crossfuse
