#include "crossfuse/attention.hpp"

#include <cmath>

#include "crossfuse/errors.hpp"
#include "crossfuse/ops.hpp"

namespace crossfuse {

AttentionParams AttentionParams::init(std::size_t model_dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("attention: model dim " + std::to_string(model_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = model_dim / heads;
  AttentionParams p;
  for (std::size_t i = 0; i < heads; ++i) {
    p.w_query.push_back(uniform_param({model_dim, head_dim}, model_dim, rng));
    p.w_key.push_back(uniform_param({model_dim, head_dim}, model_dim, rng));
    p.w_value.push_back(uniform_param({model_dim, head_dim}, model_dim, rng));
  }
  p.w_out = uniform_param({heads * head_dim, model_dim}, heads * head_dim, rng);
  return p;
}

void AttentionParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  for (std::size_t i = 0; i < heads(); ++i) {
    const std::string head = prefix + ".head" + std::to_string(i);
    out.push_back({head + ".w_query", w_query[i], ParamGroup::Fusion});
    out.push_back({head + ".w_key", w_key[i], ParamGroup::Fusion});
    out.push_back({head + ".w_value", w_value[i], ParamGroup::Fusion});
  }
  out.push_back({prefix + ".w_out", w_out, ParamGroup::Fusion});
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionTrace* trace) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("scaled_dot_attention: expected matrices, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("scaled_dot_attention: query " + shape_str(q.shape()) + " and key " +
                         shape_str(k.shape()) + " feature sizes differ");
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("scaled_dot_attention: key " + shape_str(k.shape()) + " and value " +
                         shape_str(v.shape()) + " lengths differ");
  }
  const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  Tensor weights = softmax(scale(matmul(q, transpose_last_two(k)), inv_sqrt_dk));
  if (trace) trace->weights.push_back(weights);
  return matmul(weights, v);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionParams& params,
                            AttentionTrace* trace) {
  const std::size_t d = params.w_query.empty() ? 0 : params.w_query.front().dim(0);
  for (const Tensor* x : {&q, &k, &v}) {
    if (x->rank() != 2 || x->dim(1) != d) {
      throw DimensionError("multi_head_attention: input " + shape_str(x->shape()) + " does not have feature size " +
                           std::to_string(d));
    }
  }
  std::vector<Tensor> heads;
  heads.reserve(params.heads());
  for (std::size_t i = 0; i < params.heads(); ++i) {
    heads.push_back(scaled_dot_attention(matmul(q, params.w_query[i]), matmul(k, params.w_key[i]),
                                         matmul(v, params.w_value[i]), trace));
  }
  return matmul(concat(heads, 1), params.w_out);
}

Tensor self_attention_block(const ModalEmbedding& a_emb, const ModalEmbedding& v_emb, const AttentionParams& params,
                            AttentionTrace* trace) {
  if (a_emb.seq.rank() != 2 || v_emb.seq.rank() != 2 || a_emb.features() != v_emb.features()) {
    throw DimensionError("self_attention_block: embeddings " + shape_str(a_emb.seq.shape()) + " and " +
                         shape_str(v_emb.seq.shape()) + " do not share a feature size");
  }
  const Tensor x = concat<float>({a_emb.seq, v_emb.seq}, 0);
  return add(x, multi_head_attention(x, x, x, params, trace));
}

Tensor cross_attention_block(const ModalEmbedding& query_mod, const ModalEmbedding& context_mod,
                             const AttentionParams& params, AttentionTrace* trace) {
  if (query_mod.seq.rank() != 2 || context_mod.seq.rank() != 2 ||
      query_mod.features() != context_mod.features()) {
    throw DimensionError("cross_attention_block: embeddings " + shape_str(query_mod.seq.shape()) + " and " +
                         shape_str(context_mod.seq.shape()) + " do not share a feature size");
  }
  return add(query_mod.seq, multi_head_attention(query_mod.seq, context_mod.seq, context_mod.seq, params, trace));
}

}  // namespace crossfuse
