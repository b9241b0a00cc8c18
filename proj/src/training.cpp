#include "fmae/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace fmae {

double default_finetune_lr(Task task, const std::string& dataset_kind) {
  switch (task) {
    case Task::kCapacity:
      if (dataset_kind == "bess") return 0.0625;
      return 0.00625;  // ev and lab
    case Task::kIr:
      return 0.001;
    case Task::kAnomaly:
      return 0.000625;
    case Task::kRul:
      return 0.00125;
  }
  throw ContractError("default_finetune_lr: unknown task");
}

double default_snippet_fraction(Task task) {
  switch (task) {
    case Task::kCapacity:
      return 0.05;
    case Task::kIr:
    case Task::kAnomaly:
      return 0.20;
    case Task::kRul:
      return 1.0;  // RUL selects by cycle list instead
  }
  throw ContractError("default_snippet_fraction: unknown task");
}

std::vector<int> subsample_snippets(const std::vector<int>& indices, double fraction, Rng& rng) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw ContractError("subsample_snippets: fraction must lie in (0, 1]");
  }
  if (indices.empty()) return {};
  const int count = static_cast<int>(indices.size());
  const int take = std::max(1, static_cast<int>(std::floor(count * fraction)));
  const auto picks = rng.sample_without_replacement(count, take);
  std::vector<int> out;
  out.reserve(picks.size());
  for (int p : picks) out.push_back(indices[static_cast<std::size_t>(p)]);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest helpers
// ---------------------------------------------------------------------------

namespace {

std::string format_double_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double manifest_double(const std::map<std::string, std::string>& manifest,
                       const std::string& key) {
  const auto it = manifest.find(key);
  if (it == manifest.end()) throw IoError("checkpoint manifest: missing key '" + key + "'");
  return std::stod(it->second);
}

int manifest_int(const std::map<std::string, std::string>& manifest, const std::string& key) {
  const auto it = manifest.find(key);
  if (it == manifest.end()) throw IoError("checkpoint manifest: missing key '" + key + "'");
  return std::stoi(it->second);
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::vector<int> split_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

void manifest_put_model_config(std::map<std::string, std::string>& manifest,
                               const ModelConfig& cfg) {
  manifest["model.snippet_len"] = std::to_string(cfg.snippet_len);
  manifest["model.channels"] = std::to_string(cfg.channels);
  manifest["model.patches"] = std::to_string(cfg.patches);
  manifest["model.group_size"] = std::to_string(cfg.group_size);
  manifest["model.enc_dim"] = std::to_string(cfg.enc_dim);
  manifest["model.enc_pos_dim"] = std::to_string(cfg.enc_pos_dim);
  manifest["model.enc_layers"] = std::to_string(cfg.enc_layers);
  manifest["model.enc_heads"] = std::to_string(cfg.enc_heads);
  manifest["model.dec_dim"] = std::to_string(cfg.dec_dim);
  manifest["model.dec_pos_dim"] = std::to_string(cfg.dec_pos_dim);
  manifest["model.dec_layers"] = std::to_string(cfg.dec_layers);
  manifest["model.dec_heads"] = std::to_string(cfg.dec_heads);
  manifest["model.ff_mult"] = std::to_string(cfg.ff_mult);
  manifest["model.p_patch"] = format_double_text(cfg.p_patch);
  manifest["model.p_channel"] = format_double_text(cfg.p_channel);
  manifest["model.state_channels"] = join_ints(cfg.state_channels);
  manifest["model.loss_channel_columns"] = cfg.loss_channel_columns ? "1" : "0";
}

ModelConfig manifest_get_model_config(const std::map<std::string, std::string>& manifest) {
  ModelConfig cfg;
  cfg.snippet_len = manifest_int(manifest, "model.snippet_len");
  cfg.channels = manifest_int(manifest, "model.channels");
  cfg.patches = manifest_int(manifest, "model.patches");
  cfg.group_size = manifest_int(manifest, "model.group_size");
  cfg.enc_dim = manifest_int(manifest, "model.enc_dim");
  cfg.enc_pos_dim = manifest_int(manifest, "model.enc_pos_dim");
  cfg.enc_layers = manifest_int(manifest, "model.enc_layers");
  cfg.enc_heads = manifest_int(manifest, "model.enc_heads");
  cfg.dec_dim = manifest_int(manifest, "model.dec_dim");
  cfg.dec_pos_dim = manifest_int(manifest, "model.dec_pos_dim");
  cfg.dec_layers = manifest_int(manifest, "model.dec_layers");
  cfg.dec_heads = manifest_int(manifest, "model.dec_heads");
  cfg.ff_mult = manifest_int(manifest, "model.ff_mult");
  cfg.p_patch = manifest_double(manifest, "model.p_patch");
  cfg.p_channel = manifest_double(manifest, "model.p_channel");
  cfg.state_channels = split_ints(manifest.at("model.state_channels"));
  cfg.loss_channel_columns = manifest_int(manifest, "model.loss_channel_columns") != 0;
  return cfg;
}

void manifest_put_normalizer(std::map<std::string, std::string>& manifest,
                             const Normalizer& norm) {
  for (std::size_t ch = 0; ch < norm.mean.size(); ++ch) {
    manifest["norm.mean." + std::to_string(ch)] = format_double_text(norm.mean[ch]);
    manifest["norm.std." + std::to_string(ch)] = format_double_text(norm.stddev[ch]);
  }
  manifest["norm.channels"] = std::to_string(norm.mean.size());
  manifest["norm.clamp_sigma"] = format_double_text(norm.clamp_sigma);
}

Normalizer manifest_get_normalizer(const std::map<std::string, std::string>& manifest) {
  Normalizer norm;
  const int channels = manifest_int(manifest, "norm.channels");
  norm.clamp_sigma = manifest_double(manifest, "norm.clamp_sigma");
  for (int ch = 0; ch < channels; ++ch) {
    norm.mean.push_back(manifest_double(manifest, "norm.mean." + std::to_string(ch)));
    norm.stddev.push_back(manifest_double(manifest, "norm.std." + std::to_string(ch)));
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

template <typename T>
PretrainResult<T> pretrain_run(const Corpus& corpus, const PretrainConfig& cfg,
                               ModelConfig model_cfg) {
  model_cfg.group_size = cfg.group_size;
  model_cfg.p_patch = cfg.p_patch;
  model_cfg.p_channel = cfg.p_channel;
  model_cfg.validate();

  PretrainResult<T> result;
  result.normalizer = Normalizer::fit(corpus);
  const Corpus normalized = result.normalizer.apply_all(corpus);

  struct SourcePool {
    std::string id;
    std::vector<int> indices;
  };
  std::vector<SourcePool> pools;
  std::size_t total_snippets = 0;
  for (const auto& source : normalized.sources()) {
    auto indices = normalized.indices_of(source);
    if (static_cast<int>(indices.size()) < cfg.group_size) {
      result.warnings.push_back("source '" + source + "' has fewer than " +
                                std::to_string(cfg.group_size) + " snippets; excluded");
      continue;
    }
    total_snippets += indices.size();
    pools.push_back({source, std::move(indices)});
  }
  if (pools.empty()) throw ContractError("pretrain_run: no source has enough snippets");

  Rng rng(cfg.seed);
  ModelParams<T> params = ModelParams<T>::init(model_cfg, rng);

  auto named = params.named_tensors();
  AdamState<T> adam;
  adam.init(named);

  const long denom = static_cast<long>(cfg.batch_groups) * cfg.group_size;
  const int steps_per_epoch =
      std::max(1L, (static_cast<long>(total_snippets) + denom - 1) / denom);
  const LrSchedule sched{cfg.peak_lr, cfg.warmup_epochs, cfg.epochs, steps_per_epoch};

  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_acc = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      Tensor<T> batch_loss;
      for (int g = 0; g < cfg.batch_groups; ++g) {
        const auto& pool = pools[rng.uniform_index(pools.size())];
        const auto picks =
            rng.sample_without_replacement(static_cast<int>(pool.indices.size()), cfg.group_size);
        SnippetGroup group;
        group.source_id = pool.id;
        for (int p : picks) {
          group.snippets.push_back(
              normalized.snippets[static_cast<std::size_t>(pool.indices[static_cast<std::size_t>(p)])]);
        }
        const auto report = validate_group(group, cfg.group_size);
        if (!report.ok()) {
          throw InternalError("pretrain_run: sampled group violates invariants: " +
                              report.violations.front());
        }
        const MaskPlan plan = sample_mask_plan(model_cfg, rng);
        const Tensor<T> loss = forward_pretrain(group, plan, params).loss;
        batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
      }
      batch_loss = scale(batch_loss, static_cast<T>(1.0 / cfg.batch_groups));
      const double loss_value = static_cast<double>(batch_loss.item());
      if (!std::isfinite(loss_value)) {
        throw TrainingDivergenceError("pretrain_run: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", step " + std::to_string(step));
      }
      batch_loss.backward();
      const double lr = lr_at(global_step, sched);
      result.applied_lr.push_back(lr);
      adam_step(named, adam, lr);
      ++global_step;
      epoch_acc += loss_value;
    }
    result.epoch_loss.push_back(epoch_acc / steps_per_epoch);
  }
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// Finetuning
// ---------------------------------------------------------------------------

namespace {

template <typename T>
FinetunedModel<T> clone_for_finetune(const ModelParams<T>& pretrained, const TaskHead<T>& head,
                                     const Normalizer& norm) {
  FinetunedModel<T> m;
  m.cfg = pretrained.cfg;
  m.embedding.patch_embed = clone_linear(pretrained.embedding.patch_embed);
  m.embedding.channel_tokens = pretrained.embedding.channel_tokens.clone_parameter();
  for (const auto& layer : pretrained.encoder) m.encoder.push_back(clone_layer(layer));
  m.enc_norm_scale = pretrained.enc_norm_scale.clone_parameter();
  m.enc_norm_offset = pretrained.enc_norm_offset.clone_parameter();
  m.latent_proj = clone_linear(pretrained.latent_proj);
  m.head = head;
  m.input_norm = norm;
  return m;
}

/// One supervised example: a snippet (or an RUL pair) and its scaled target.
struct ExampleRef {
  int snippet = -1;
  int pair_early = -1;  // RUL only
  double target = 0.0;
};

struct TaskData {
  std::vector<Snippet> snippets;  // policy-applied, normalized
  std::vector<ExampleRef> train;
  std::vector<ExampleRef> eval;
  std::vector<double> train_targets_raw;  // original units
  std::vector<double> eval_targets_raw;
  std::vector<int> eval_source_of;  // per eval example, for anomaly scoring
  std::vector<std::string> eval_source_ids;
  std::vector<bool> eval_source_anomaly;
  double target_mean = 0.0;
  double target_std = 1.0;
};

double label_for_task(const LabelSet& label, Task task, bool& present) {
  present = true;
  switch (task) {
    case Task::kCapacity:
      if (label.soh) return *label.soh;
      break;
    case Task::kIr:
      if (label.ir_mohm) return *label.ir_mohm;
      break;
    case Task::kAnomaly:
      if (label.anomaly) return *label.anomaly ? 1.0 : 0.0;
      if (label.anomaly.has_value()) return 0.0;
      break;
    case Task::kRul:
      if (label.rul_cycles) return static_cast<double>(*label.rul_cycles);
      break;
  }
  present = false;
  return 0.0;
}

template <typename T>
TaskData build_task_data(const ModelParams<T>& pretrained, const Normalizer& norm,
                         const Corpus& corpus, const std::vector<std::string>& train_sources,
                         const std::vector<std::string>& eval_sources, const FinetuneConfig& cfg,
                         const std::vector<int>& provided, Rng& rng) {
  (void)pretrained;
  TaskData data;
  data.snippets.reserve(corpus.snippets.size());
  for (const auto& snip : corpus.snippets) {
    data.snippets.push_back(norm.apply(apply_channel_policy(snip, provided)));
  }

  const double fraction =
      cfg.snippet_fraction > 0 ? cfg.snippet_fraction : default_snippet_fraction(cfg.task);

  auto add_examples = [&](const std::vector<std::string>& sources, bool training) {
    for (std::size_t src_pos = 0; src_pos < sources.size(); ++src_pos) {
      const auto& source = sources[src_pos];
      auto indices = corpus.indices_of(source);
      if (indices.empty()) continue;

      if (cfg.task == Task::kRul) {
        // restrict to the configured cycles, then pair snippets `gap` apart
        std::vector<int> eligible;
        for (int idx : indices) {
          const double cyc = corpus.snippets[static_cast<std::size_t>(idx)].cycle_or_mileage;
          for (double want : cfg.rul_cycles) {
            if (std::abs(cyc - want) < 1e-9) {
              eligible.push_back(idx);
              break;
            }
          }
        }
        std::vector<Snippet> eligible_snips;
        for (int idx : eligible) {
          eligible_snips.push_back(corpus.snippets[static_cast<std::size_t>(idx)]);
        }
        for (const auto& [a, b] : rul_pairs(eligible_snips, cfg.rul_gap)) {
          const int early = eligible[static_cast<std::size_t>(a)];
          const int late = eligible[static_cast<std::size_t>(b)];
          bool present = false;
          const double truth =
              label_for_task(corpus.labels[static_cast<std::size_t>(late)], cfg.task, present);
          if (!present) continue;
          ExampleRef ex;
          ex.snippet = late;
          ex.pair_early = early;
          ex.target = truth;
          if (training) {
            data.train.push_back(ex);
            data.train_targets_raw.push_back(truth);
          } else {
            data.eval.push_back(ex);
            data.eval_targets_raw.push_back(truth);
            data.eval_source_of.push_back(static_cast<int>(src_pos));
          }
        }
        continue;
      }

      std::vector<int> chosen = indices;
      if (training && fraction < 1.0) chosen = subsample_snippets(indices, fraction, rng);
      for (int idx : chosen) {
        bool present = false;
        const double truth =
            label_for_task(corpus.labels[static_cast<std::size_t>(idx)], cfg.task, present);
        if (!present) continue;
        ExampleRef ex;
        ex.snippet = idx;
        ex.target = truth;
        if (training) {
          data.train.push_back(ex);
          data.train_targets_raw.push_back(truth);
        } else {
          data.eval.push_back(ex);
          data.eval_targets_raw.push_back(truth);
          data.eval_source_of.push_back(static_cast<int>(src_pos));
        }
      }
    }
  };

  add_examples(train_sources, true);
  add_examples(eval_sources, false);
  if (data.train.empty()) {
    throw ContractError("finetune_run: no labeled training examples for task " +
                        std::string(task_name(cfg.task)));
  }
  if (data.eval.empty()) {
    throw ContractError("finetune_run: no labeled evaluation examples for task " +
                        std::string(task_name(cfg.task)));
  }

  data.eval_source_ids = eval_sources;
  if (cfg.task == Task::kAnomaly) {
    data.eval_source_anomaly.resize(eval_sources.size(), false);
    for (std::size_t i = 0; i < eval_sources.size(); ++i) {
      for (int idx : corpus.indices_of(eval_sources[i])) {
        const auto& lab = corpus.labels[static_cast<std::size_t>(idx)];
        if (lab.anomaly) {
          data.eval_source_anomaly[i] = *lab.anomaly;
          break;
        }
      }
    }
  }

  // Target scaling: SOH stays a fraction, anomaly stays 0/1; IR and RUL are
  // z-scored on the training fold.
  if (cfg.task == Task::kIr || cfg.task == Task::kRul) {
    const double n = static_cast<double>(data.train_targets_raw.size());
    double mean = 0.0;
    for (double v : data.train_targets_raw) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : data.train_targets_raw) var += (v - mean) * (v - mean);
    data.target_mean = mean;
    data.target_std = std::max(std::sqrt(var / n), 1e-9);
  }
  const auto scale_target = [&](ExampleRef& ex) {
    ex.target = (ex.target - data.target_mean) / data.target_std;
  };
  for (auto& ex : data.train) scale_target(ex);
  for (auto& ex : data.eval) scale_target(ex);
  return data;
}

template <typename T>
Tensor<T> example_prediction(const ExampleRef& ex, const TaskData& data,
                             const FinetunedModel<T>& model, const ModelParams<T>& view) {
  if (ex.pair_early >= 0) {
    const Tensor<T> diff =
        rul_pair_feature(data.snippets[static_cast<std::size_t>(ex.pair_early)],
                         data.snippets[static_cast<std::size_t>(ex.snippet)], view,
                         model.head.pairing_gap.value_or(20));
    return regression_forward(diff, model.head);
  }
  const Tensor<T> feature =
      snippet_feature(data.snippets[static_cast<std::size_t>(ex.snippet)], view);
  return regression_forward(feature, model.head);
}

template <typename T>
Tensor<T> batch_loss_for(const std::vector<ExampleRef>& batch, const TaskData& data,
                         const FinetunedModel<T>& model, const ModelParams<T>& view, Task task) {
  std::vector<Tensor<T>> preds;
  std::vector<T> targets;
  preds.reserve(batch.size());
  for (const auto& ex : batch) {
    preds.push_back(example_prediction(ex, data, model, view));
    targets.push_back(static_cast<T>(ex.target));
  }
  const Tensor<T> pred = concat_rows(preds);
  const Tensor<T> target = Tensor<T>::constant({batch.size(), 1}, std::move(targets));
  if (task == Task::kAnomaly) return bce_with_logits(pred, target);
  const Tensor<T> ones =
      Tensor<T>::constant({batch.size(), 1}, std::vector<T>(batch.size(), T(1)));
  return mse_masked(pred, target, ones);
}

}  // namespace

template <typename T>
FinetuneResult<T> finetune_run(const ModelParams<T>& pretrained, const Normalizer& norm,
                               const Corpus& corpus,
                               const std::vector<std::string>& train_sources,
                               const std::vector<std::string>& eval_sources,
                               const FinetuneConfig& cfg) {
  Rng rng(cfg.seed);
  const std::vector<int> provided = cfg.provided_channels.empty()
                                        ? default_task_channels(cfg.task, cfg.dataset_kind)
                                        : cfg.provided_channels;

  TaskHead<T> head = TaskHead<T>::init(cfg.task, pretrained.cfg, provided, rng);
  if (cfg.task == Task::kRul) head.pairing_gap = cfg.rul_gap;

  FinetuneResult<T> result;
  result.model = clone_for_finetune(pretrained, head, norm);
  FinetunedModel<T>& model = result.model;

  TaskData data = build_task_data(pretrained, norm, corpus, train_sources, eval_sources, cfg,
                                  provided, rng);
  model.target_mean = data.target_mean;
  model.target_std = data.target_std;

  // Start the regression head at the mean scaled target so the first steps
  // do not flood the pretrained encoder with constant-offset gradients.
  if (cfg.task != Task::kAnomaly) {
    double mean_scaled = 0.0;
    for (const auto& ex : data.train) mean_scaled += ex.target;
    model.head.head.b.mutable_value()[0] =
        static_cast<T>(mean_scaled / static_cast<double>(data.train.size()));
  }

  const ModelParams<T> view = model.encoder_view();
  auto named = model.named_tensors();
  AdamState<T> adam;
  adam.init(named);
  const double lr = cfg.lr > 0 ? cfg.lr : default_finetune_lr(cfg.task, cfg.dataset_kind);

  const auto snapshot = [&]() {
    std::vector<std::vector<T>> state;
    for (const auto& [name, t] : named) {
      (void)name;
      state.push_back(t.value());
    }
    return state;
  };
  const auto restore = [&](const std::vector<std::vector<T>>& state) {
    for (std::size_t i = 0; i < named.size(); ++i) named[i].second.mutable_value() = state[i];
  };

  double best_eval = std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_state = snapshot();
  int stale_epochs = 0;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch));
      std::vector<ExampleRef> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data.train[order[i]]);
      const Tensor<T> loss = batch_loss_for(batch, data, model, view, cfg.task);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw TrainingDivergenceError("finetune_run: non-finite loss at epoch " +
                                      std::to_string(epoch));
      }
      loss.backward();
      adam_step(named, adam, lr);
      epoch_loss += loss_value;
      ++steps;
    }
    result.train_loss_history.push_back(epoch_loss / static_cast<double>(steps));
    result.trained_epochs = epoch + 1;

    const Tensor<T> eval_loss = batch_loss_for(data.eval, data, model, view, cfg.task);
    const double eval_value = static_cast<double>(eval_loss.item());
    if (eval_value < best_eval - 1e-12) {
      best_eval = eval_value;
      best_state = snapshot();
      stale_epochs = 0;
    } else if (++stale_epochs >= cfg.patience) {
      break;
    }
  }
  restore(best_state);

  // Held-out metrics in original units.
  std::vector<double> preds, truths;
  std::vector<std::vector<double>> logits_by_source(data.eval_source_ids.size());
  for (std::size_t i = 0; i < data.eval.size(); ++i) {
    const auto& ex = data.eval[i];
    const double raw = static_cast<double>(example_prediction(ex, data, model, view).item());
    if (cfg.task == Task::kAnomaly) {
      logits_by_source[static_cast<std::size_t>(data.eval_source_of[i])].push_back(raw);
    } else {
      preds.push_back(raw * data.target_std + data.target_mean);
      truths.push_back(data.eval_targets_raw[i]);
    }
  }

  if (cfg.task == Task::kAnomaly) {
    std::vector<double> scores;
    std::vector<bool> flags;
    for (std::size_t s = 0; s < logits_by_source.size(); ++s) {
      if (logits_by_source[s].empty()) continue;
      scores.push_back(anomaly_vehicle_score(logits_by_source[s]));
      flags.push_back(data.eval_source_anomaly[s]);
    }
    result.eval_metrics["auroc"] = auroc(scores, flags);
  } else {
    const RegressionMetrics m = rmse_mae_mape(preds, truths);
    result.eval_metrics["rmse"] = m.rmse;
    result.eval_metrics["mae"] = m.mae;
    if (m.mape) result.eval_metrics["mape"] = *m.mape;
    std::vector<double> train_raw = data.train_targets_raw;
    result.eval_metrics["baseline_rmse"] = naive_rul_baseline(train_raw, truths);
  }
  return result;
}

template <typename T>
std::map<std::string, double> evaluate_finetuned(const FinetunedModel<T>& model,
                                                 const Corpus& corpus,
                                                 const std::vector<std::string>& eval_sources,
                                                 const FinetuneConfig& cfg) {
  const ModelParams<T> view = model.encoder_view();
  const Task task = model.head.task;

  std::vector<double> preds, truths;
  std::vector<std::vector<double>> logits_by_source(eval_sources.size());
  std::vector<bool> source_anomaly(eval_sources.size(), false);

  for (std::size_t s = 0; s < eval_sources.size(); ++s) {
    const auto indices = corpus.indices_of(eval_sources[s]);
    if (task == Task::kRul) {
      std::vector<int> eligible;
      for (int idx : indices) {
        const double cyc = corpus.snippets[static_cast<std::size_t>(idx)].cycle_or_mileage;
        for (double want : cfg.rul_cycles) {
          if (std::abs(cyc - want) < 1e-9) {
            eligible.push_back(idx);
            break;
          }
        }
      }
      std::vector<Snippet> snips;
      for (int idx : eligible) {
        snips.push_back(model.input_norm.apply(apply_channel_policy(
            corpus.snippets[static_cast<std::size_t>(idx)], model.head.provided_channels)));
      }
      for (const auto& [a, b] : rul_pairs(snips, model.head.pairing_gap.value_or(20))) {
        const auto& late_label = corpus.labels[static_cast<std::size_t>(eligible[static_cast<std::size_t>(b)])];
        if (!late_label.rul_cycles) continue;
        const Tensor<T> diff =
            rul_pair_feature(snips[static_cast<std::size_t>(a)], snips[static_cast<std::size_t>(b)],
                             view, model.head.pairing_gap.value_or(20));
        const double raw = static_cast<double>(regression_forward(diff, model.head).item());
        preds.push_back(raw * model.target_std + model.target_mean);
        truths.push_back(static_cast<double>(*late_label.rul_cycles));
      }
      continue;
    }
    for (int idx : indices) {
      const auto& label = corpus.labels[static_cast<std::size_t>(idx)];
      bool present = false;
      const double truth = label_for_task(label, task, present);
      if (!present) continue;
      const Snippet snip = model.input_norm.apply(apply_channel_policy(
          corpus.snippets[static_cast<std::size_t>(idx)], model.head.provided_channels));
      const double raw = static_cast<double>(
          regression_forward(snippet_feature(snip, view), model.head).item());
      if (task == Task::kAnomaly) {
        logits_by_source[s].push_back(raw);
        source_anomaly[s] = truth != 0.0;
      } else {
        preds.push_back(raw * model.target_std + model.target_mean);
        truths.push_back(truth);
      }
    }
  }

  std::map<std::string, double> metrics;
  if (task == Task::kAnomaly) {
    std::vector<double> scores;
    std::vector<bool> flags;
    for (std::size_t s = 0; s < logits_by_source.size(); ++s) {
      if (logits_by_source[s].empty()) continue;
      scores.push_back(anomaly_vehicle_score(logits_by_source[s]));
      flags.push_back(source_anomaly[s]);
    }
    metrics["auroc"] = auroc(scores, flags);
  } else {
    const RegressionMetrics m = rmse_mae_mape(preds, truths);
    metrics["rmse"] = m.rmse;
    metrics["mae"] = m.mae;
    if (m.mape) metrics["mape"] = *m.mape;
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// Checkpoint packing
// ---------------------------------------------------------------------------

template <typename T>
Checkpoint pack_pretrained(const ModelParams<T>& params, const Normalizer& norm,
                           const std::vector<std::pair<std::string, std::string>>& config_echo) {
  Checkpoint ckpt;
  ckpt.manifest["kind"] = "pretrained";
  manifest_put_model_config(ckpt.manifest, params.cfg);
  manifest_put_normalizer(ckpt.manifest, norm);
  for (const auto& [key, value] : config_echo) ckpt.manifest["run." + key] = value;
  for (const auto& [name, tensor] : params.named_tensors()) {
    ckpt.tensors.push_back(to_blob(name, tensor));
  }
  return ckpt;
}

template <typename T>
void load_model_tensors(const Checkpoint& ckpt,
                        std::vector<std::pair<std::string, Tensor<T>>> named) {
  for (auto& [name, tensor] : named) {
    const TensorBlob* blob = ckpt.find(name);
    if (!blob) throw CheckpointShapeError("checkpoint: tensor '" + name + "' is missing");
    blob_into(*blob, tensor);
  }
}

template <typename T>
ModelParams<T> unpack_pretrained(const Checkpoint& ckpt, Normalizer& norm_out) {
  const auto kind = ckpt.manifest.find("kind");
  if (kind == ckpt.manifest.end() || kind->second != "pretrained") {
    throw IoError("checkpoint: expected kind = pretrained");
  }
  const ModelConfig cfg = manifest_get_model_config(ckpt.manifest);
  norm_out = manifest_get_normalizer(ckpt.manifest);
  Rng rng(0);
  ModelParams<T> params = ModelParams<T>::init(cfg, rng);
  load_model_tensors<T>(ckpt, params.named_tensors());
  return params;
}

template <typename T>
Checkpoint pack_finetuned(const FinetunedModel<T>& model,
                          const std::vector<std::pair<std::string, std::string>>& config_echo) {
  Checkpoint ckpt;
  ckpt.manifest["kind"] = "finetuned";
  ckpt.manifest["task"] = task_name(model.head.task);
  ckpt.manifest["provided_channels"] = join_ints(model.head.provided_channels);
  if (model.head.pairing_gap) {
    ckpt.manifest["pairing_gap"] = std::to_string(*model.head.pairing_gap);
  }
  ckpt.manifest["target_mean"] = format_double_text(model.target_mean);
  ckpt.manifest["target_std"] = format_double_text(model.target_std);
  manifest_put_model_config(ckpt.manifest, model.cfg);
  manifest_put_normalizer(ckpt.manifest, model.input_norm);
  for (const auto& [key, value] : config_echo) ckpt.manifest["run." + key] = value;
  for (const auto& [name, tensor] : model.named_tensors()) {
    ckpt.tensors.push_back(to_blob(name, tensor));
  }
  return ckpt;
}

template <typename T>
FinetunedModel<T> unpack_finetuned(const Checkpoint& ckpt) {
  const auto kind = ckpt.manifest.find("kind");
  if (kind == ckpt.manifest.end() || kind->second != "finetuned") {
    throw IoError("checkpoint: expected kind = finetuned");
  }
  const ModelConfig cfg = manifest_get_model_config(ckpt.manifest);
  const auto task = parse_task(ckpt.manifest.at("task"));
  if (!task) throw IoError("checkpoint: unknown task '" + ckpt.manifest.at("task") + "'");

  Rng rng(0);
  const ModelParams<T> scaffold = ModelParams<T>::init(cfg, rng);
  TaskHead<T> head =
      TaskHead<T>::init(*task, cfg, split_ints(ckpt.manifest.at("provided_channels")), rng);
  const auto gap = ckpt.manifest.find("pairing_gap");
  if (gap != ckpt.manifest.end()) head.pairing_gap = std::stoi(gap->second);

  FinetunedModel<T> model = clone_for_finetune(scaffold, head, Normalizer{});
  model.input_norm = manifest_get_normalizer(ckpt.manifest);
  model.target_mean = manifest_double(ckpt.manifest, "target_mean");
  model.target_std = manifest_double(ckpt.manifest, "target_std");
  load_model_tensors<T>(ckpt, model.named_tensors());
  return model;
}

// Explicit instantiations: float32 for training, float64 for oracles.
template PretrainResult<float> pretrain_run<float>(const Corpus&, const PretrainConfig&,
                                                   ModelConfig);
template PretrainResult<double> pretrain_run<double>(const Corpus&, const PretrainConfig&,
                                                     ModelConfig);
template FinetuneResult<float> finetune_run<float>(const ModelParams<float>&, const Normalizer&,
                                                   const Corpus&,
                                                   const std::vector<std::string>&,
                                                   const std::vector<std::string>&,
                                                   const FinetuneConfig&);
template FinetuneResult<double> finetune_run<double>(const ModelParams<double>&,
                                                     const Normalizer&, const Corpus&,
                                                     const std::vector<std::string>&,
                                                     const std::vector<std::string>&,
                                                     const FinetuneConfig&);
template Checkpoint pack_pretrained<float>(
    const ModelParams<float>&, const Normalizer&,
    const std::vector<std::pair<std::string, std::string>>&);
template Checkpoint pack_pretrained<double>(
    const ModelParams<double>&, const Normalizer&,
    const std::vector<std::pair<std::string, std::string>>&);
template ModelParams<float> unpack_pretrained<float>(const Checkpoint&, Normalizer&);
template ModelParams<double> unpack_pretrained<double>(const Checkpoint&, Normalizer&);
template Checkpoint pack_finetuned<float>(
    const FinetunedModel<float>&, const std::vector<std::pair<std::string, std::string>>&);
template FinetunedModel<float> unpack_finetuned<float>(const Checkpoint&);
template std::map<std::string, double> evaluate_finetuned<float>(
    const FinetunedModel<float>&, const Corpus&, const std::vector<std::string>&,
    const FinetuneConfig&);
template void load_model_tensors<float>(const Checkpoint&,
                                        std::vector<std::pair<std::string, Tensor<float>>>);
template void load_model_tensors<double>(const Checkpoint&,
                                         std::vector<std::pair<std::string, Tensor<double>>>);

}  // namespace fmae
