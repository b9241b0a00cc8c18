#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmae/checkpoint.hpp"
#include "fmae/data.hpp"
#include "fmae/heads.hpp"
#include "fmae/metrics.hpp"
#include "fmae/model.hpp"
#include "fmae/optim.hpp"

namespace fmae {

struct PretrainConfig {
  int epochs = 800;
  int warmup_epochs = 40;
  int batch_groups = 256;
  int group_size = 5;  // n
  double peak_lr = 1.5e-4;
  double p_patch = 0.5;
  double p_channel = 0.4;
  std::uint64_t seed = 0;
};

struct FinetuneConfig {
  Task task = Task::kCapacity;
  std::string dataset_kind = "lab";  // ev | bess | lab
  double lr = 0.0;                   // 0 -> per-task default
  int epochs = 50;
  int batch = 32;
  int patience = 10;  // early stop on held-out loss
  double snippet_fraction = 0.0;  // 0 -> per-task default
  int rul_gap = 20;
  std::vector<double> rul_cycles = {40, 60, 80, 100};
  /// Channels the task data provides; empty -> per-task default.
  std::vector<int> provided_channels;
  std::uint64_t seed = 0;
};

/// Finetune learning rates: capacity 0.00625 (ev), 0.0625 (bess),
/// 0.00625 (lab); IR 0.001; anomaly 0.000625; RUL 0.00125.
double default_finetune_lr(Task task, const std::string& dataset_kind);

/// Training-snippet fractions: 5% for capacity, 20% for IR and anomaly.
double default_snippet_fraction(Task task);

/// floor(count * fraction) snippets, at least one, drawn uniformly without
/// replacement. Indices are returned ascending.
std::vector<int> subsample_snippets(const std::vector<int>& indices, double fraction, Rng& rng);

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

template <typename T>
struct PretrainResult {
  ModelParams<T> params;
  Normalizer normalizer;
  std::vector<double> epoch_loss;
  std::vector<double> applied_lr;  // lr actually used at each optimizer step
  std::vector<std::string> warnings;
};

template <typename T>
PretrainResult<T> pretrain_run(const Corpus& corpus, const PretrainConfig& cfg,
                               ModelConfig model_cfg);

// ---------------------------------------------------------------------------
// Finetuning
// ---------------------------------------------------------------------------

/// The artifact produced by finetuning: encoder side of the autoencoder plus
/// one task head. Decoder weights are structurally absent.
template <typename T>
struct FinetunedModel {
  ModelConfig cfg;
  EmbeddingParams<T> embedding;
  std::vector<TransformerLayerParams<T>> encoder;
  Tensor<T> enc_norm_scale, enc_norm_offset;
  LinearParams<T> latent_proj;
  TaskHead<T> head;
  Normalizer input_norm;
  double target_mean = 0.0;  // target scaling fitted on the train folds
  double target_std = 1.0;

  /// View through ModelParams so the encoder-path helpers can run. Decoder
  /// fields stay default-constructed and are never touched at inference.
  ModelParams<T> encoder_view() const {
    ModelParams<T> p;
    p.cfg = cfg;
    p.embedding = embedding;
    p.encoder = encoder;
    p.enc_norm_scale = enc_norm_scale;
    p.enc_norm_offset = enc_norm_offset;
    p.latent_proj = latent_proj;
    return p;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() const {
    auto out = encoder_view().encoder_side_tensors();
    collect_linear("head", head.head, out);
    return out;
  }
};

template <typename T>
struct FinetuneResult {
  FinetunedModel<T> model;
  std::map<std::string, double> eval_metrics;
  std::vector<double> train_loss_history;
  int trained_epochs = 0;
};

/// One cross-validation round: finetune the encoder plus a fresh head on the
/// train sources and evaluate on the held-out sources.
template <typename T>
FinetuneResult<T> finetune_run(const ModelParams<T>& pretrained, const Normalizer& norm,
                               const Corpus& corpus,
                               const std::vector<std::string>& train_sources,
                               const std::vector<std::string>& eval_sources,
                               const FinetuneConfig& cfg);

/// Task metrics of an already-finetuned model over the given sources, in
/// original units. Uses the normalizer, channel policy and target scaling
/// stored in the model.
template <typename T>
std::map<std::string, double> evaluate_finetuned(const FinetunedModel<T>& model,
                                                 const Corpus& corpus,
                                                 const std::vector<std::string>& eval_sources,
                                                 const FinetuneConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoint packing
// ---------------------------------------------------------------------------

template <typename T>
Checkpoint pack_pretrained(const ModelParams<T>& params, const Normalizer& norm,
                           const std::vector<std::pair<std::string, std::string>>& config_echo);

template <typename T>
ModelParams<T> unpack_pretrained(const Checkpoint& ckpt, Normalizer& norm_out);

template <typename T>
Checkpoint pack_finetuned(const FinetunedModel<T>& model,
                          const std::vector<std::pair<std::string, std::string>>& config_echo);

template <typename T>
FinetunedModel<T> unpack_finetuned(const Checkpoint& ckpt);

/// Copy every named tensor present in the checkpoint into the given
/// parameter list; dtype/shape disagreements raise CheckpointShapeError.
template <typename T>
void load_model_tensors(const Checkpoint& ckpt,
                        std::vector<std::pair<std::string, Tensor<T>>> named);

/// Model dimensions stored in / read from a checkpoint manifest.
void manifest_put_model_config(std::map<std::string, std::string>& manifest,
                               const ModelConfig& cfg);
ModelConfig manifest_get_model_config(const std::map<std::string, std::string>& manifest);
void manifest_put_normalizer(std::map<std::string, std::string>& manifest, const Normalizer& norm);
Normalizer manifest_get_normalizer(const std::map<std::string, std::string>& manifest);

}  // namespace fmae
