#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fmae/masking.hpp"
#include "fmae/model_config.hpp"
#include "fmae/nn.hpp"
#include "fmae/optim.hpp"
#include "fmae/rng.hpp"
#include "fmae/schema.hpp"
#include "fmae/tensor.hpp"

namespace fmae {

/// All learnable weights of the autoencoder. Initialization is truncated
/// normal (sigma 0.02) for projections, zeros for biases, ones for
/// layer-norm scales.
template <typename T>
struct ModelParams {
  ModelConfig cfg;
  EmbeddingParams<T> embedding;
  std::vector<TransformerLayerParams<T>> encoder;
  Tensor<T> enc_norm_scale, enc_norm_offset;
  LinearParams<T> latent_proj;  // {enc_dim, dec_dim}
  LinearParams<T> state_proj;   // {l0 * |state channels|, dec_dim}
  std::vector<TransformerLayerParams<T>> decoder;
  Tensor<T> dec_norm_scale, dec_norm_offset;
  LinearParams<T> recon_head;  // {dec width, l0 * c}

  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    p.embedding = EmbeddingParams<T>::init(cfg, rng);
    for (int i = 0; i < cfg.enc_layers; ++i) {
      p.encoder.push_back(
          make_transformer_layer<T>(cfg.enc_token_width(), cfg.enc_heads, cfg.ff_mult, rng));
    }
    const auto ew = static_cast<std::size_t>(cfg.enc_token_width());
    p.enc_norm_scale = Tensor<T>::parameter({ew}, std::vector<T>(ew, T(1)));
    p.enc_norm_offset = Tensor<T>::zeros({ew}, true);
    p.latent_proj = make_linear<T>(cfg.enc_dim, cfg.dec_dim, rng);
    p.state_proj = make_linear<T>(cfg.state_values(), cfg.dec_dim, rng);
    for (int i = 0; i < cfg.dec_layers; ++i) {
      p.decoder.push_back(
          make_transformer_layer<T>(cfg.dec_token_width(), cfg.dec_heads, cfg.ff_mult, rng));
    }
    const auto dw = static_cast<std::size_t>(cfg.dec_token_width());
    p.dec_norm_scale = Tensor<T>::parameter({dw}, std::vector<T>(dw, T(1)));
    p.dec_norm_offset = Tensor<T>::zeros({dw}, true);
    p.recon_head = make_linear<T>(cfg.dec_token_width(), cfg.patch_values(), rng);
    return p;
  }

  /// Embedding, encoder and latent projection: the part kept at fine-tuning.
  std::vector<std::pair<std::string, Tensor<T>>> encoder_side_tensors() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    collect_linear("embedding.patch", embedding.patch_embed, out);
    out.emplace_back("embedding.channel_tokens", embedding.channel_tokens);
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      collect_layer("encoder." + std::to_string(i), encoder[i], out);
    }
    out.emplace_back("encoder.norm.scale", enc_norm_scale);
    out.emplace_back("encoder.norm.offset", enc_norm_offset);
    collect_linear("latent_proj", latent_proj, out);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() const {
    auto out = encoder_side_tensors();
    collect_linear("state_proj", state_proj, out);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      collect_layer("decoder." + std::to_string(i), decoder[i], out);
    }
    out.emplace_back("decoder.norm.scale", dec_norm_scale);
    out.emplace_back("decoder.norm.offset", dec_norm_offset);
    collect_linear("recon_head", recon_head, out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : named_tensors()) {
      (void)name;
      total += t.size();
    }
    return total;
  }
};

template <typename T>
struct EncodeResult {
  Tensor<T> hidden;   // t x (d + d_pos), transformer output
  Tensor<T> content;  // t x d, positional tail dropped
  Tensor<T> latent;   // t x d', after the shared projection
  std::vector<std::pair<int, int>> origin;
};

/// Run the encoder stack over a retained-token sequence and project the
/// content slice to the decoder width.
template <typename T>
EncodeResult<T> encode(const TokenSequence<T>& seq, const ModelParams<T>& params) {
  if (seq.tokens.cols() != static_cast<std::size_t>(params.cfg.enc_token_width())) {
    throw ShapeError("encode: token width does not match the model config");
  }
  Tensor<T> x = seq.tokens;
  for (const auto& layer : params.encoder) x = transformer_block(x, layer);
  x = layer_norm(x, params.enc_norm_scale, params.enc_norm_offset);
  EncodeResult<T> out;
  out.hidden = x;
  out.content = slice_cols(x, 0, static_cast<std::size_t>(params.cfg.enc_dim));
  out.latent = apply_linear(out.content, params.latent_proj);
  out.origin = seq.origin;
  return out;
}

template <typename T>
struct StateTokens {
  Tensor<T> tokens;                         // m x d'
  std::vector<std::pair<int, int>> positions;  // masked (i, j), snippet-major
};

/// Battery-state conditioning tokens: the original (pre-masking) values of
/// the state channels of each masked patch, flattened and projected to d'.
template <typename T>
StateTokens<T> battery_state_tokens(const SnippetGroup& group, const MaskPlan& plan,
                                    const ModelParams<T>& params) {
  const ModelConfig& cfg = params.cfg;
  detail::check_plan(group, plan, cfg);
  const int l0 = cfg.patch_len();
  const int ns = static_cast<int>(cfg.state_channels.size());
  StateTokens<T> out;
  std::vector<T> data;
  for (int i = 0; i < group.size(); ++i) {
    const auto& snip = group.snippets[static_cast<std::size_t>(i)];
    auto masked_patches = plan.patch_sets[static_cast<std::size_t>(i)];
    std::sort(masked_patches.begin(), masked_patches.end());
    for (int j : masked_patches) {
      out.positions.emplace_back(i, j);
      for (int t = 0; t < l0; ++t) {
        for (int k = 0; k < ns; ++k) {
          data.push_back(static_cast<T>(snip.at(j * l0 + t, cfg.state_channels[static_cast<std::size_t>(k)])));
        }
      }
    }
  }
  const std::size_t m = out.positions.size();
  const Tensor<T> data_t =
      Tensor<T>::constant({m, static_cast<std::size_t>(cfg.state_values())}, std::move(data));
  out.tokens = m > 0 ? apply_linear(data_t, params.state_proj) : data_t;
  return out;
}

namespace detail {

template <typename T>
Tensor<T> decoder_pos_matrix(const ModelConfig& cfg, int n) {
  const int s = cfg.patches;
  std::vector<T> pos(static_cast<std::size_t>(n) * s * cfg.dec_pos_dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < s; ++j) {
      const auto enc = sinusoidal_encoding(j, cfg.dec_pos_dim);
      T* row = pos.data() + (static_cast<std::size_t>(i) * s + j) * cfg.dec_pos_dim;
      for (int k = 0; k < cfg.dec_pos_dim; ++k) row[k] = static_cast<T>(enc[static_cast<std::size_t>(k)]);
    }
  }
  return Tensor<T>::constant(
      {static_cast<std::size_t>(n) * s, static_cast<std::size_t>(cfg.dec_pos_dim)},
      std::move(pos));
}

/// Permutation that scatters [encoder latents; filler tokens] into canonical
/// snippet-major order. Throws InternalError on a double fill or a hole.
inline std::vector<int> scatter_permutation(const std::vector<std::pair<int, int>>& retained,
                                            const std::vector<std::pair<int, int>>& filled,
                                            int n, int s) {
  std::vector<int> perm(static_cast<std::size_t>(n) * s, -1);
  auto place = [&](const std::pair<int, int>& pos, int source_row) {
    const auto [i, j] = pos;
    if (i < 0 || i >= n || j < 0 || j >= s) {
      throw InternalError("decoder assembly: position out of range");
    }
    auto& slot = perm[static_cast<std::size_t>(i) * s + j];
    if (slot != -1) throw InternalError("decoder assembly: position filled twice");
    slot = source_row;
  };
  for (std::size_t r = 0; r < retained.size(); ++r) place(retained[r], static_cast<int>(r));
  for (std::size_t r = 0; r < filled.size(); ++r) {
    place(filled[r], static_cast<int>(retained.size() + r));
  }
  for (int slot : perm) {
    if (slot == -1) throw InternalError("decoder assembly: hole in the token grid");
  }
  return perm;
}

}  // namespace detail

/// Scatter encoder latents to retained positions and state tokens to masked
/// positions, then concatenate the sinusoidal within-snippet position.
template <typename T>
Tensor<T> assemble_decoder_input(const EncodeResult<T>& encoded, const StateTokens<T>& state,
                                 const ModelParams<T>& params) {
  const ModelConfig& cfg = params.cfg;
  const int s = cfg.patches;
  const std::size_t total = encoded.origin.size() + state.positions.size();
  if (total == 0 || total % static_cast<std::size_t>(s) != 0) {
    throw InternalError("decoder assembly: token count is not a whole number of snippets");
  }
  const int n = static_cast<int>(total / static_cast<std::size_t>(s));
  const auto perm = detail::scatter_permutation(encoded.origin, state.positions, n, s);
  Tensor<T> combined = state.positions.empty()
                           ? encoded.latent
                           : concat_rows<T>({encoded.latent, state.tokens});
  const Tensor<T> grid = gather_rows(combined, perm);
  return concat_cols<T>({grid, detail::decoder_pos_matrix<T>(cfg, n)});
}

/// Decoder stack plus the per-token reconstruction head. Row (i*s + j) of
/// the result is the flattened reconstruction of patch j of snippet i.
template <typename T>
Tensor<T> decode_reconstruct(const Tensor<T>& decoder_input, const ModelParams<T>& params) {
  if (decoder_input.cols() != static_cast<std::size_t>(params.cfg.dec_token_width())) {
    throw ShapeError("decode_reconstruct: token width does not match the model config");
  }
  Tensor<T> x = decoder_input;
  for (const auto& layer : params.decoder) x = transformer_block(x, layer);
  x = layer_norm(x, params.dec_norm_scale, params.dec_norm_offset);
  return apply_linear(x, params.recon_head);
}

/// Reconstruction targets and the union loss mask for one group: every
/// element of a masked patch, plus masked-channel columns inside retained
/// patches. Channels absent at the source are excluded from the channel
/// columns because no ground truth exists for them.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> pretrain_targets(const SnippetGroup& group, const MaskPlan& plan,
                                                 const ModelConfig& cfg) {
  detail::check_plan(group, plan, cfg);
  const int n = group.size();
  const int s = cfg.patches;
  const int l0 = cfg.patch_len();
  const int c = cfg.channels;
  const std::size_t rows = static_cast<std::size_t>(n) * s;
  const std::size_t width = static_cast<std::size_t>(l0) * c;
  std::vector<T> target(rows * width, T(0));
  std::vector<T> mask(rows * width, T(0));
  for (int i = 0; i < n; ++i) {
    const auto& snip = group.snippets[static_cast<std::size_t>(i)];
    const auto& masked_patches = plan.patch_sets[static_cast<std::size_t>(i)];
    for (int j = 0; j < s; ++j) {
      const std::size_t row = static_cast<std::size_t>(i) * s + j;
      T* trow = target.data() + row * width;
      for (int t = 0; t < l0; ++t) {
        for (int ch = 0; ch < c; ++ch) trow[t * c + ch] = static_cast<T>(snip.at(j * l0 + t, ch));
      }
      T* mrow = mask.data() + row * width;
      const bool patch_masked =
          std::find(masked_patches.begin(), masked_patches.end(), j) != masked_patches.end();
      if (patch_masked) {
        std::fill(mrow, mrow + width, T(1));
      } else if (cfg.loss_channel_columns) {
        for (int ch : plan.channel_set) {
          if (!snip.has_channel(ch)) continue;
          for (int t = 0; t < l0; ++t) mrow[t * c + ch] = T(1);
        }
      }
    }
  }
  return {Tensor<T>::constant({rows, width}, std::move(target)),
          Tensor<T>::constant({rows, width}, std::move(mask))};
}

/// Masked-reconstruction MSE in normalized units.
template <typename T>
Tensor<T> pretrain_loss(const Tensor<T>& reconstruction, const SnippetGroup& group,
                        const MaskPlan& plan, const ModelConfig& cfg) {
  auto [target, mask] = pretrain_targets<T>(group, plan, cfg);
  return mse_masked(reconstruction, target, mask);
}

template <typename T>
struct PretrainForward {
  Tensor<T> grid;          // n*s x (d + d_pos)
  TokenSequence<T> seq;    // retained tokens
  EncodeResult<T> encoded;
  StateTokens<T> state;
  Tensor<T> decoder_input;  // n*s x (d' + d'_pos)
  Tensor<T> reconstruction;  // n*s x (l0 * c)
  Tensor<T> loss;           // scalar
};

/// Full pretraining pass for one group, exposed stage by stage.
template <typename T>
PretrainForward<T> forward_pretrain(const SnippetGroup& group, const MaskPlan& plan,
                                    const ModelParams<T>& params) {
  PretrainForward<T> out;
  out.grid = embed_patches(group, plan, params.embedding, params.cfg);
  out.seq = build_encoder_sequence(out.grid, plan, params.cfg);
  out.encoded = encode(out.seq, params);
  out.state = battery_state_tokens(group, plan, params);
  out.decoder_input = assemble_decoder_input(out.encoded, out.state, params);
  out.reconstruction = decode_reconstruct(out.decoder_input, params);
  out.loss = pretrain_loss(out.reconstruction, group, plan, params.cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Collapse probe
// ---------------------------------------------------------------------------

enum class CollapseMode {
  kVanillaMaskToken,  // masked positions share one learnable token
  kBatteryState,      // masked positions carry projected battery states
};

struct CollapseReport {
  /// Flattened decoder outputs at masked positions, parallel to `positions`.
  std::vector<std::vector<double>> outputs;
  std::vector<std::pair<int, int>> positions;
  /// max |delta| between outputs at equal masked patch index, per snippet
  /// pair; -1 when the pair shares no masked position.
  std::vector<std::vector<double>> divergence;
  double max_divergence = 0.0;
};

/// Compare decoder outputs at equal masked positions across snippets. With a
/// shared mask token the decoder input rows coincide, so outputs collapse;
/// battery-state padding breaks the tie whenever the states differ.
template <typename T>
CollapseReport collapse_probe(const SnippetGroup& group, const MaskPlan& plan,
                              const ModelParams<T>& params, CollapseMode mode, Rng& rng) {
  const ModelConfig& cfg = params.cfg;
  const int n = group.size();
  bool shared = false;
  for (int a = 0; a < n && !shared; ++a) {
    for (int b = a + 1; b < n && !shared; ++b) {
      for (int j : plan.patch_sets[static_cast<std::size_t>(a)]) {
        const auto& other = plan.patch_sets[static_cast<std::size_t>(b)];
        if (std::find(other.begin(), other.end(), j) != other.end()) {
          shared = true;
          break;
        }
      }
    }
  }
  if (!shared) {
    throw ContractError("collapse_probe: no two snippets share a masked patch index");
  }

  const Tensor<T> grid = embed_patches(group, plan, params.embedding, cfg);
  const TokenSequence<T> seq = build_encoder_sequence(grid, plan, cfg);
  const EncodeResult<T> encoded = encode(seq, params);

  StateTokens<T> filler = battery_state_tokens(group, plan, params);
  if (mode == CollapseMode::kVanillaMaskToken) {
    // One shared token, broadcast to every masked position.
    std::vector<T> token(static_cast<std::size_t>(cfg.dec_dim));
    for (auto& v : token) v = static_cast<T>(rng.truncated_normal(0.02));
    std::vector<T> rows;
    rows.reserve(filler.positions.size() * token.size());
    for (std::size_t r = 0; r < filler.positions.size(); ++r) {
      rows.insert(rows.end(), token.begin(), token.end());
    }
    filler.tokens = Tensor<T>::constant(
        {filler.positions.size(), static_cast<std::size_t>(cfg.dec_dim)}, std::move(rows));
  }

  const Tensor<T> decoder_input = assemble_decoder_input(encoded, filler, params);
  const Tensor<T> reconstruction = decode_reconstruct(decoder_input, params);

  CollapseReport report;
  report.positions = filler.positions;
  const std::size_t width = reconstruction.cols();
  for (const auto& [i, j] : filler.positions) {
    const T* row = reconstruction.value().data() +
                   (static_cast<std::size_t>(i) * cfg.patches + j) * width;
    report.outputs.emplace_back(row, row + width);
  }
  report.divergence.assign(static_cast<std::size_t>(n),
                           std::vector<double>(static_cast<std::size_t>(n), -1.0));
  for (std::size_t a = 0; a < report.positions.size(); ++a) {
    for (std::size_t b = a + 1; b < report.positions.size(); ++b) {
      if (report.positions[a].second != report.positions[b].second) continue;
      if (report.positions[a].first == report.positions[b].first) continue;
      double delta = 0.0;
      for (std::size_t k = 0; k < width; ++k) {
        delta = std::max(delta, std::abs(report.outputs[a][k] - report.outputs[b][k]));
      }
      auto& cell = report.divergence[static_cast<std::size_t>(report.positions[a].first)]
                                    [static_cast<std::size_t>(report.positions[b].first)];
      cell = std::max(cell, delta);
      auto& mirrored = report.divergence[static_cast<std::size_t>(report.positions[b].first)]
                                        [static_cast<std::size_t>(report.positions[a].first)];
      mirrored = std::max(mirrored, delta);
      report.max_divergence = std::max(report.max_divergence, delta);
    }
  }
  return report;
}

}  // namespace fmae
