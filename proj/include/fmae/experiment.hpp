#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fmae/config.hpp"
#include "fmae/metrics.hpp"

namespace fmae {

/// Orchestration behind the CLI subcommands. Every run writes its outputs
/// under `out_dir` and embeds the fully resolved configuration.

struct GenerateOutcome {
  std::string snippet_path;
  std::string label_path;
  int snippet_count = 0;
};
GenerateOutcome run_generate(const RunConfig& cfg, const std::string& out_dir);

struct PretrainOutcome {
  std::string checkpoint_path;
  std::string history_path;
  std::vector<double> epoch_loss;
};
PretrainOutcome run_pretrain(const RunConfig& cfg, const std::string& data_path,
                             const std::string& out_dir);

struct FinetuneOutcome {
  MetricReport report;
  std::vector<std::string> fold_checkpoints;
  std::string report_csv;
  std::string summary_path;
};
FinetuneOutcome run_finetune(const RunConfig& cfg, const std::string& task,
                             const std::string& data_path, const std::string& checkpoint_path,
                             const std::string& out_dir);

struct EvaluateOutcome {
  MetricReport report;
  std::string report_csv;
  std::string summary_path;
};
EvaluateOutcome run_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                             const std::string& data_path, const std::string& out_dir);

struct CollapseOutcome {
  double vanilla_max = 0.0;
  double battery_state_max = 0.0;
  std::string report_path;
};
CollapseOutcome run_probe_collapse(const RunConfig& cfg,
                                   const std::optional<std::string>& checkpoint_path,
                                   const std::optional<std::string>& data_path,
                                   const std::string& out_dir);

}  // namespace fmae
