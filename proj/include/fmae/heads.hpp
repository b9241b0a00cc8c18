#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fmae/model.hpp"

namespace fmae {

enum class Task { kCapacity, kIr, kAnomaly, kRul };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::kCapacity: return "capacity";
    case Task::kIr: return "ir";
    case Task::kAnomaly: return "anomaly";
    case Task::kRul: return "rul";
  }
  return "?";
}

inline std::optional<Task> parse_task(const std::string& name) {
  if (name == "capacity") return Task::kCapacity;
  if (name == "ir") return Task::kIr;
  if (name == "anomaly") return Task::kAnomaly;
  if (name == "rul") return Task::kRul;
  return std::nullopt;
}

/// Per-task output layer plus the task's data policy.
template <typename T>
struct TaskHead {
  Task task = Task::kCapacity;
  LinearParams<T> head;                 // {d', 1}
  std::vector<int> provided_channels;   // channels the task supplies; others padded
  std::optional<int> pairing_gap;       // cycles between the two RUL snippets

  static TaskHead init(Task task, const ModelConfig& cfg, std::vector<int> provided, Rng& rng) {
    TaskHead h;
    h.task = task;
    h.head = make_linear<T>(cfg.dec_dim, 1, rng);
    h.provided_channels = std::move(provided);
    if (task == Task::kRul) h.pairing_gap = 20;
    return h;
  }
};

/// Channels a task's data carries by default, per the experiment setup:
/// lab tasks see voltage/current/SoC (plus the cycle coordinate where the
/// task uses it), system-level tasks see everything.
inline std::vector<int> default_task_channels(Task task, const std::string& dataset_kind) {
  if (dataset_kind == "lab") {
    if (task == Task::kIr) return {kVoltage, kCurrent, kSoc};
    return {kVoltage, kCurrent, kSoc, kMileage};
  }
  return {kVoltage, kCurrent, kSoc, kMaxCellVoltage, kMinCellVoltage,
          kMaxTemperature, kMinTemperature, kMileage};
}

/// Effective inference-time channel mask: the complement of `present`,
/// routed through the same channel-token pathway as pretraining masks.
inline std::vector<int> pad_missing_channels(const Snippet& snippet) {
  std::vector<int> missing;
  for (int ch = 0; ch < snippet.channels; ++ch) {
    if (!snippet.has_channel(ch)) missing.push_back(ch);
  }
  if (static_cast<int>(missing.size()) == snippet.channels) {
    throw DegenerateInputError("pad_missing_channels: every channel is missing");
  }
  return missing;
}

/// Restrict a snippet to the channels a task provides; everything else is
/// marked absent and zero-filled.
inline Snippet apply_channel_policy(Snippet snippet, const std::vector<int>& provided) {
  for (int ch = 0; ch < snippet.channels; ++ch) {
    const bool keep = std::find(provided.begin(), provided.end(), ch) != provided.end();
    if (keep) continue;
    snippet.present[static_cast<std::size_t>(ch)] = 0;
    for (int t = 0; t < snippet.length; ++t) snippet.at(t, ch) = 0.0;
  }
  return snippet;
}

/// Inference/finetune feature of one snippet: embed with no patch masking
/// (missing channels padded by their tokens), encode, and average the s
/// per-patch latents into a single d' vector.
template <typename T>
Tensor<T> snippet_feature(const Snippet& snippet, const ModelParams<T>& params) {
  MaskPlan plan;
  plan.channel_set = pad_missing_channels(snippet);
  plan.patch_sets = {{}};
  SnippetGroup group{{snippet}, snippet.source_id};
  const Tensor<T> grid = embed_patches(group, plan, params.embedding, params.cfg);
  const TokenSequence<T> seq = build_encoder_sequence(grid, plan, params.cfg);
  const EncodeResult<T> encoded = encode(seq, params);
  return mean_axis(encoded.latent, 0);  // 1 x d'
}

/// Affine map from a pooled feature to the scalar estimate.
template <typename T>
Tensor<T> regression_forward(const Tensor<T>& feature, const TaskHead<T>& head) {
  if (feature.rank() != 2 || feature.cols() != head.head.w.rows()) {
    throw ShapeError("regression_forward: feature width does not match the head");
  }
  return apply_linear(feature, head.head);
}

/// Feature difference of two snippets separated by the pairing gap.
template <typename T>
Tensor<T> rul_pair_feature(const Snippet& early, const Snippet& late,
                           const ModelParams<T>& params, int gap) {
  const double observed = late.cycle_or_mileage - early.cycle_or_mileage;
  if (std::abs(observed - gap) > 1e-9) {
    throw ContractError("rul_pair_feature: snippets are " + std::to_string(observed) +
                        " cycles apart, expected " + std::to_string(gap));
  }
  return sub(snippet_feature(late, params), snippet_feature(early, params));
}

/// All (early, late) index pairs separated by exactly `gap` cycles.
inline std::vector<std::pair<int, int>> rul_pairs(const std::vector<Snippet>& snippets,
                                                  double gap) {
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t a = 0; a < snippets.size(); ++a) {
    for (std::size_t b = 0; b < snippets.size(); ++b) {
      if (a == b) continue;
      if (std::abs(snippets[b].cycle_or_mileage - snippets[a].cycle_or_mileage - gap) < 1e-9) {
        pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [&](const auto& p, const auto& q) {
    const double pc = snippets[static_cast<std::size_t>(p.first)].cycle_or_mileage;
    const double qc = snippets[static_cast<std::size_t>(q.first)].cycle_or_mileage;
    if (pc != qc) return pc < qc;
    return p < q;
  });
  return pairs;
}

/// Vehicle-level anomaly score: mean of the top ceil(0.1 * m) snippet logits.
inline double anomaly_vehicle_score(std::vector<double> logits) {
  if (logits.empty()) throw DegenerateInputError("anomaly_vehicle_score: no logits");
  const auto m = logits.size();
  const std::size_t k = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(m)));
  std::partial_sort(logits.begin(), logits.begin() + static_cast<std::ptrdiff_t>(k), logits.end(),
                    std::greater<double>());
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += logits[i];
  return acc / static_cast<double>(k);
}

}  // namespace fmae
