#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fmae/rng.hpp"
#include "fmae/tensor.hpp"

namespace fmae {

template <typename T>
struct LinearParams {
  Tensor<T> w;  // {in, out}
  Tensor<T> b;  // {out}
};

template <typename T>
LinearParams<T> make_linear(int in, int out, Rng& rng, double sigma = 0.02) {
  std::vector<T> w(static_cast<std::size_t>(in) * out);
  for (auto& v : w) v = static_cast<T>(rng.truncated_normal(sigma));
  return {Tensor<T>::parameter({static_cast<std::size_t>(in), static_cast<std::size_t>(out)},
                               std::move(w)),
          Tensor<T>::zeros({static_cast<std::size_t>(out)}, true)};
}

template <typename T>
Tensor<T> apply_linear(const Tensor<T>& x, const LinearParams<T>& p) {
  return linear(x, p.w, p.b);
}

/// One pre-norm transformer layer: multi-head self-attention and a GELU MLP,
/// each behind a residual connection.
template <typename T>
struct TransformerLayerParams {
  int heads = 1;
  LinearParams<T> q, k, v, o;
  Tensor<T> ln1_scale, ln1_offset;
  LinearParams<T> ff1, ff2;
  Tensor<T> ln2_scale, ln2_offset;
};

template <typename T>
TransformerLayerParams<T> make_transformer_layer(int d_model, int heads, int ff_mult, Rng& rng) {
  if (heads <= 0 || d_model % heads != 0) {
    throw ContractError("transformer layer: model width must divide evenly across heads");
  }
  TransformerLayerParams<T> p;
  p.heads = heads;
  p.q = make_linear<T>(d_model, d_model, rng);
  p.k = make_linear<T>(d_model, d_model, rng);
  p.v = make_linear<T>(d_model, d_model, rng);
  p.o = make_linear<T>(d_model, d_model, rng);
  p.ff1 = make_linear<T>(d_model, d_model * ff_mult, rng);
  p.ff2 = make_linear<T>(d_model * ff_mult, d_model, rng);
  const auto d = static_cast<std::size_t>(d_model);
  p.ln1_scale = Tensor<T>::parameter({d}, std::vector<T>(d, T(1)));
  p.ln1_offset = Tensor<T>::zeros({d}, true);
  p.ln2_scale = Tensor<T>::parameter({d}, std::vector<T>(d, T(1)));
  p.ln2_offset = Tensor<T>::zeros({d}, true);
  return p;
}

/// Scaled dot-product multi-head attention over already-normalized tokens.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const TransformerLayerParams<T>& p) {
  const std::size_t d = x.cols();
  const std::size_t dh = d / static_cast<std::size_t>(p.heads);
  const Tensor<T> q = apply_linear(x, p.q);
  const Tensor<T> k = apply_linear(x, p.k);
  const Tensor<T> v = apply_linear(x, p.v);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    const std::size_t lo = static_cast<std::size_t>(h) * dh, hi = lo + dh;
    const Tensor<T> qh = slice_cols(q, lo, hi);
    const Tensor<T> kh = slice_cols(k, lo, hi);
    const Tensor<T> vh = slice_cols(v, lo, hi);
    const Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return apply_linear(concat_cols(heads), p.o);
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const TransformerLayerParams<T>& p) {
  const Tensor<T> h = add(x, multi_head_attention(layer_norm(x, p.ln1_scale, p.ln1_offset), p));
  const Tensor<T> n2 = layer_norm(h, p.ln2_scale, p.ln2_offset);
  return add(h, apply_linear(gelu(apply_linear(n2, p.ff1)), p.ff2));
}

template <typename T>
LinearParams<T> clone_linear(const LinearParams<T>& p) {
  return {p.w.clone_parameter(), p.b.clone_parameter()};
}

template <typename T>
TransformerLayerParams<T> clone_layer(const TransformerLayerParams<T>& p) {
  TransformerLayerParams<T> out;
  out.heads = p.heads;
  out.q = clone_linear(p.q);
  out.k = clone_linear(p.k);
  out.v = clone_linear(p.v);
  out.o = clone_linear(p.o);
  out.ln1_scale = p.ln1_scale.clone_parameter();
  out.ln1_offset = p.ln1_offset.clone_parameter();
  out.ff1 = clone_linear(p.ff1);
  out.ff2 = clone_linear(p.ff2);
  out.ln2_scale = p.ln2_scale.clone_parameter();
  out.ln2_offset = p.ln2_offset.clone_parameter();
  return out;
}

template <typename T>
void collect_linear(const std::string& prefix, const LinearParams<T>& p,
                    std::vector<std::pair<std::string, Tensor<T>>>& out) {
  out.emplace_back(prefix + ".w", p.w);
  out.emplace_back(prefix + ".b", p.b);
}

template <typename T>
void collect_layer(const std::string& prefix, const TransformerLayerParams<T>& p,
                   std::vector<std::pair<std::string, Tensor<T>>>& out) {
  collect_linear(prefix + ".q", p.q, out);
  collect_linear(prefix + ".k", p.k, out);
  collect_linear(prefix + ".v", p.v, out);
  collect_linear(prefix + ".o", p.o, out);
  out.emplace_back(prefix + ".ln1.scale", p.ln1_scale);
  out.emplace_back(prefix + ".ln1.offset", p.ln1_offset);
  collect_linear(prefix + ".ff1", p.ff1, out);
  collect_linear(prefix + ".ff2", p.ff2, out);
  out.emplace_back(prefix + ".ln2.scale", p.ln2_scale);
  out.emplace_back(prefix + ".ln2.offset", p.ln2_offset);
}

}  // namespace fmae
