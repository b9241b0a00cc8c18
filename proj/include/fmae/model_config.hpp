#pragma once

#include <vector>

#include "fmae/errors.hpp"
#include "fmae/schema.hpp"

namespace fmae {

/// Architecture and masking configuration. Defaults reproduce the standard
/// setup; tests shrink every dimension for finite-difference checks.
struct ModelConfig {
  int snippet_len = kSnippetLength;  // l
  int channels = kChannelCount;      // c
  int patches = 8;                   // s
  int group_size = 5;                // n

  int enc_dim = 96;      // d, patch embedding width
  int enc_pos_dim = 12;  // positional width concatenated at the encoder
  int enc_layers = 6;
  int enc_heads = 3;

  int dec_dim = 64;     // d', decoder content width
  int dec_pos_dim = 8;  // positional width concatenated at the decoder
  int dec_layers = 4;
  int dec_heads = 4;

  int ff_mult = 4;  // MLP expansion inside transformer layers

  double p_patch = 0.5;
  double p_channel = 0.4;

  /// Channels whose raw values condition the decoder at masked positions.
  std::vector<int> state_channels = {kCurrent, kSoc, kMileage};

  /// When false the pretraining loss covers masked patches only, ignoring
  /// masked-channel columns inside retained patches (ablation switch).
  bool loss_channel_columns = true;

  int patch_len() const {
    if (patches <= 0 || snippet_len % patches != 0) {
      throw ContractError("model config: snippet length must be divisible by patch count");
    }
    return snippet_len / patches;
  }
  int patch_values() const { return patch_len() * channels; }
  int state_values() const { return patch_len() * static_cast<int>(state_channels.size()); }
  int enc_token_width() const { return enc_dim + enc_pos_dim; }
  int dec_token_width() const { return dec_dim + dec_pos_dim; }

  void validate() const {
    patch_len();
    if (group_size < 1) throw ContractError("model config: group size must be >= 1");
    if (enc_heads <= 0 || enc_token_width() % enc_heads != 0) {
      throw ContractError("model config: encoder width must divide across heads");
    }
    if (dec_heads <= 0 || dec_token_width() % dec_heads != 0) {
      throw ContractError("model config: decoder width must divide across heads");
    }
    if (p_patch < 0 || p_patch >= 1 || p_channel < 0 || p_channel >= 1) {
      throw ContractError("model config: masking probabilities must lie in [0, 1)");
    }
    for (int ch : state_channels) {
      if (ch < 0 || ch >= channels) {
        throw ContractError("model config: state channel index out of range");
      }
    }
  }
};

}  // namespace fmae
