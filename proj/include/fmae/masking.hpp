#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "fmae/model_config.hpp"
#include "fmae/nn.hpp"
#include "fmae/rng.hpp"
#include "fmae/schema.hpp"
#include "fmae/tensor.hpp"

namespace fmae {

// ---------------------------------------------------------------------------
// Patchify and mask sampling
// ---------------------------------------------------------------------------

/// Split a snippet into s contiguous patches of shape patch_len x channels.
/// Concatenating the patches in order reproduces the snippet exactly.
inline std::vector<std::vector<double>> patchify(const Snippet& snippet, int s) {
  if (s <= 0 || snippet.length % s != 0) {
    throw ContractError("patchify: snippet length must be divisible by patch count");
  }
  const int l0 = snippet.length / s;
  const int c = snippet.channels;
  std::vector<std::vector<double>> patches(static_cast<std::size_t>(s));
  for (int j = 0; j < s; ++j) {
    auto& patch = patches[static_cast<std::size_t>(j)];
    patch.resize(static_cast<std::size_t>(l0) * c);
    const auto begin = snippet.values.begin() + static_cast<std::ptrdiff_t>(j) * l0 * c;
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(l0) * c, patch.begin());
  }
  return patches;
}

/// Uniform channel subset of cardinality floor(c * p_channel).
inline std::vector<int> sample_channel_mask(int c, double p_channel, Rng& rng) {
  if (p_channel < 0 || p_channel >= 1) {
    throw ContractError("sample_channel_mask: probability must lie in [0, 1)");
  }
  const int k = static_cast<int>(std::floor(c * p_channel));
  return rng.sample_without_replacement(c, k);
}

/// One uniform patch subset of cardinality floor(s * p_patch) per snippet,
/// drawn independently.
inline std::vector<std::vector<int>> sample_patch_masks(int n, int s, double p_patch, Rng& rng) {
  if (p_patch < 0 || p_patch >= 1) {
    throw ContractError("sample_patch_masks: probability must lie in [0, 1)");
  }
  const int k = static_cast<int>(std::floor(s * p_patch));
  std::vector<std::vector<int>> sets(static_cast<std::size_t>(n));
  for (auto& set : sets) set = rng.sample_without_replacement(s, k);
  return sets;
}

inline MaskPlan sample_mask_plan(const ModelConfig& cfg, Rng& rng) {
  MaskPlan plan;
  plan.channel_set = sample_channel_mask(cfg.channels, cfg.p_channel, rng);
  plan.patch_sets = sample_patch_masks(cfg.group_size, cfg.patches, cfg.p_patch, rng);
  return plan;
}

/// Interleaved sin/cos encoding at geometrically spaced frequencies
/// (base 10000), as in the standard transformer.
inline std::vector<double> sinusoidal_encoding(int index, int width) {
  if (width % 2 != 0) throw ContractError("sinusoidal_encoding: width must be even");
  if (index < 0) throw ContractError("sinusoidal_encoding: index must be >= 0");
  std::vector<double> out(static_cast<std::size_t>(width));
  for (int k = 0; 2 * k < width; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / width);
    out[static_cast<std::size_t>(2 * k)] = std::sin(index * freq);
    out[static_cast<std::size_t>(2 * k) + 1] = std::cos(index * freq);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch embedding
// ---------------------------------------------------------------------------

/// Learnable patch embedding: shared projection of the flattened masked
/// patch, a bias, and one channel token per channel.
template <typename T>
struct EmbeddingParams {
  LinearParams<T> patch_embed;  // w: {l0*c, d}, b: {d}
  Tensor<T> channel_tokens;     // {c, d}; row k is the token of channel k

  static EmbeddingParams init(const ModelConfig& cfg, Rng& rng) {
    EmbeddingParams p;
    p.patch_embed = make_linear<T>(cfg.patch_values(), cfg.enc_dim, rng);
    std::vector<T> tokens(static_cast<std::size_t>(cfg.channels) * cfg.enc_dim);
    for (auto& v : tokens) v = static_cast<T>(rng.truncated_normal(0.02));
    p.channel_tokens = Tensor<T>::parameter(
        {static_cast<std::size_t>(cfg.channels), static_cast<std::size_t>(cfg.enc_dim)},
        std::move(tokens));
    return p;
  }
};

/// Retained encoder tokens plus the (snippet, patch) position each row
/// came from, in snippet-major, patch-ascending order.
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;                          // t x (d + d_pos)
  std::vector<std::pair<int, int>> origin;   // (i, j) per row
};

namespace detail {

/// Effective channel mask for one snippet: the plan's set S plus every
/// channel absent at the source. Returned as a 0/1 indicator of length c.
inline std::vector<char> effective_channel_mask(const Snippet& snip,
                                                const std::vector<int>& channel_set) {
  std::vector<char> masked(static_cast<std::size_t>(snip.channels), 0);
  for (int ch : channel_set) {
    if (ch < 0 || ch >= snip.channels) {
      throw ContractError("mask plan: channel index out of range");
    }
    masked[static_cast<std::size_t>(ch)] = 1;
  }
  for (int ch = 0; ch < snip.channels; ++ch) {
    if (!snip.has_channel(ch)) masked[static_cast<std::size_t>(ch)] = 1;
  }
  return masked;
}

inline void check_plan(const SnippetGroup& group, const MaskPlan& plan, const ModelConfig& cfg) {
  if (static_cast<int>(plan.patch_sets.size()) != group.size()) {
    throw ContractError("mask plan: one patch set per snippet required");
  }
  for (const auto& set : plan.patch_sets) {
    for (int j : set) {
      if (j < 0 || j >= cfg.patches) throw ContractError("mask plan: patch index out of range");
    }
  }
  for (const auto& snip : group.snippets) {
    if (snip.length != cfg.snippet_len || snip.channels != cfg.channels) {
      throw ContractError("mask plan: snippet does not match the model config");
    }
  }
}

}  // namespace detail

/// Embed every patch of the group: masked channels are zeroed in the data,
/// channel tokens are added for exactly those channels, and the sinusoidal
/// patch position is concatenated. Row (i*s + j) holds patch j of snippet i.
/// Channels absent at the source share the masked-channel treatment.
template <typename T>
Tensor<T> embed_patches(const SnippetGroup& group, const MaskPlan& plan,
                        const EmbeddingParams<T>& params, const ModelConfig& cfg) {
  detail::check_plan(group, plan, cfg);
  const int n = group.size();
  const int s = cfg.patches;
  const int l0 = cfg.patch_len();
  const int c = cfg.channels;
  const std::size_t rows = static_cast<std::size_t>(n) * s;

  std::vector<T> data(rows * static_cast<std::size_t>(l0) * c, T(0));
  std::vector<T> indicator(rows * static_cast<std::size_t>(c), T(0));
  std::vector<T> pos(rows * static_cast<std::size_t>(cfg.enc_pos_dim));
  for (int i = 0; i < n; ++i) {
    const auto& snip = group.snippets[static_cast<std::size_t>(i)];
    const auto masked = detail::effective_channel_mask(snip, plan.channel_set);
    for (int j = 0; j < s; ++j) {
      const std::size_t row = static_cast<std::size_t>(i) * s + j;
      T* drow = data.data() + row * static_cast<std::size_t>(l0) * c;
      for (int t = 0; t < l0; ++t) {
        for (int ch = 0; ch < c; ++ch) {
          if (!masked[static_cast<std::size_t>(ch)]) {
            drow[t * c + ch] = static_cast<T>(snip.at(j * l0 + t, ch));
          }
        }
      }
      T* irow = indicator.data() + row * static_cast<std::size_t>(c);
      for (int ch = 0; ch < c; ++ch) irow[ch] = masked[static_cast<std::size_t>(ch)] ? T(1) : T(0);
      const auto enc = sinusoidal_encoding(j, cfg.enc_pos_dim);
      T* prow = pos.data() + row * static_cast<std::size_t>(cfg.enc_pos_dim);
      for (int k = 0; k < cfg.enc_pos_dim; ++k) prow[k] = static_cast<T>(enc[static_cast<std::size_t>(k)]);
    }
  }

  const Tensor<T> data_t =
      Tensor<T>::constant({rows, static_cast<std::size_t>(l0) * c}, std::move(data));
  const Tensor<T> indicator_t =
      Tensor<T>::constant({rows, static_cast<std::size_t>(c)}, std::move(indicator));
  const Tensor<T> pos_t =
      Tensor<T>::constant({rows, static_cast<std::size_t>(cfg.enc_pos_dim)}, std::move(pos));

  const Tensor<T> content = add(apply_linear(data_t, params.patch_embed),
                                matmul(indicator_t, params.channel_tokens));
  return concat_cols<T>({content, pos_t});
}

/// Drop masked patches and pack the retained embeddings into the encoder
/// sequence, recording each token's (snippet, patch) origin.
template <typename T>
TokenSequence<T> build_encoder_sequence(const Tensor<T>& grid, const MaskPlan& plan,
                                        const ModelConfig& cfg) {
  const int n = static_cast<int>(plan.patch_sets.size());
  const int s = cfg.patches;
  if (grid.rows() != static_cast<std::size_t>(n) * s) {
    throw ContractError("build_encoder_sequence: grid rows do not match the plan");
  }
  TokenSequence<T> seq;
  std::vector<int> retained;
  for (int i = 0; i < n; ++i) {
    const auto& masked = plan.patch_sets[static_cast<std::size_t>(i)];
    for (int j = 0; j < s; ++j) {
      if (std::find(masked.begin(), masked.end(), j) != masked.end()) continue;
      retained.push_back(i * s + j);
      seq.origin.emplace_back(i, j);
    }
  }
  seq.tokens = gather_rows(grid, retained);
  return seq;
}

}  // namespace fmae
