#include "fmae/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "fmae/data.hpp"
#include "fmae/training.hpp"

namespace fs = std::filesystem;

namespace fmae {

namespace {

std::string format_double_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

/// --data accepts either a directory holding snippets.csv/labels.csv or the
/// snippet CSV itself (labels expected next to it).
std::pair<std::string, std::string> resolve_data_paths(const std::string& data_path) {
  if (fs::is_directory(data_path)) {
    return {(fs::path(data_path) / "snippets.csv").string(),
            (fs::path(data_path) / "labels.csv").string()};
  }
  const fs::path snippets(data_path);
  return {snippets.string(), (snippets.parent_path() / "labels.csv").string()};
}

SyntheticFleetConfig fleet_from_config(const RunConfig& cfg) {
  SyntheticFleetConfig fleet;
  fleet.kind = cfg.get("fleet.kind", fleet.kind);
  fleet.n_sources = cfg.get_int("fleet.sources", fleet.n_sources);
  fleet.snippets_per_source = cfg.get_int("fleet.snippets_per_source", fleet.snippets_per_source);
  fleet.anomaly_fraction = cfg.get_double("fleet.anomaly_fraction", fleet.anomaly_fraction);
  fleet.cycle_step = cfg.get_int("fleet.cycle_step", fleet.cycle_step);
  fleet.fade_rate_lo = cfg.get_double("fleet.fade_rate_lo", fleet.fade_rate_lo);
  fleet.fade_rate_hi = cfg.get_double("fleet.fade_rate_hi", fleet.fade_rate_hi);
  fleet.fade_exponent_lo = cfg.get_double("fleet.fade_exponent_lo", fleet.fade_exponent_lo);
  fleet.fade_exponent_hi = cfg.get_double("fleet.fade_exponent_hi", fleet.fade_exponent_hi);
  fleet.r_growth = cfg.get_double("fleet.r_growth", fleet.r_growth);
  fleet.voltage_noise = cfg.get_double("fleet.voltage_noise", fleet.voltage_noise);
  fleet.spread_base = cfg.get_double("fleet.spread_base", fleet.spread_base);
  fleet.spread_noise = cfg.get_double("fleet.spread_noise", fleet.spread_noise);
  fleet.anomaly_spread_factor =
      cfg.get_double("fleet.anomaly_spread_factor", fleet.anomaly_spread_factor);
  fleet.seed = cfg.get_u64("seed", fleet.seed);
  return fleet;
}

std::vector<std::pair<std::string, std::string>> fleet_echo(const SyntheticFleetConfig& f) {
  return {{"fleet.kind", f.kind},
          {"fleet.sources", std::to_string(f.n_sources)},
          {"fleet.snippets_per_source", std::to_string(f.snippets_per_source)},
          {"fleet.anomaly_fraction", format_double_text(f.anomaly_fraction)},
          {"fleet.cycle_step", std::to_string(f.cycle_step)},
          {"fleet.fade_rate_lo", format_double_text(f.fade_rate_lo)},
          {"fleet.fade_rate_hi", format_double_text(f.fade_rate_hi)},
          {"fleet.fade_exponent_lo", format_double_text(f.fade_exponent_lo)},
          {"fleet.fade_exponent_hi", format_double_text(f.fade_exponent_hi)},
          {"fleet.r_growth", format_double_text(f.r_growth)},
          {"fleet.voltage_noise", format_double_text(f.voltage_noise)},
          {"fleet.spread_base", format_double_text(f.spread_base)},
          {"fleet.spread_noise", format_double_text(f.spread_noise)},
          {"fleet.anomaly_spread_factor", format_double_text(f.anomaly_spread_factor)},
          {"seed", std::to_string(f.seed)}};
}

ModelConfig model_from_config(const RunConfig& cfg) {
  ModelConfig m;
  m.snippet_len = cfg.get_int("model.snippet_len", m.snippet_len);
  m.channels = cfg.get_int("model.channels", m.channels);
  m.patches = cfg.get_int("model.patches", m.patches);
  m.enc_dim = cfg.get_int("model.enc_dim", m.enc_dim);
  m.enc_pos_dim = cfg.get_int("model.enc_pos_dim", m.enc_pos_dim);
  m.enc_layers = cfg.get_int("model.enc_layers", m.enc_layers);
  m.enc_heads = cfg.get_int("model.enc_heads", m.enc_heads);
  m.dec_dim = cfg.get_int("model.dec_dim", m.dec_dim);
  m.dec_pos_dim = cfg.get_int("model.dec_pos_dim", m.dec_pos_dim);
  m.dec_layers = cfg.get_int("model.dec_layers", m.dec_layers);
  m.dec_heads = cfg.get_int("model.dec_heads", m.dec_heads);
  m.ff_mult = cfg.get_int("model.ff_mult", m.ff_mult);
  m.state_channels = cfg.get_ints("model.state_channels", m.state_channels);
  m.loss_channel_columns = cfg.get_int("model.loss_channel_columns", 1) != 0;
  return m;
}

PretrainConfig pretrain_from_config(const RunConfig& cfg) {
  PretrainConfig p;
  p.epochs = cfg.get_int("pretrain.epochs", p.epochs);
  p.warmup_epochs = cfg.get_int("pretrain.warmup_epochs", p.warmup_epochs);
  p.batch_groups = cfg.get_int("pretrain.batch_groups", p.batch_groups);
  p.group_size = cfg.get_int("pretrain.group_size", p.group_size);
  p.peak_lr = cfg.get_double("pretrain.peak_lr", p.peak_lr);
  p.p_patch = cfg.get_double("pretrain.p_patch", p.p_patch);
  p.p_channel = cfg.get_double("pretrain.p_channel", p.p_channel);
  p.seed = cfg.get_u64("seed", p.seed);
  return p;
}

std::vector<std::pair<std::string, std::string>> pretrain_echo(const PretrainConfig& p,
                                                               const ModelConfig& m) {
  std::map<std::string, std::string> manifest;
  manifest_put_model_config(manifest, m);
  std::vector<std::pair<std::string, std::string>> echo(manifest.begin(), manifest.end());
  echo.emplace_back("pretrain.epochs", std::to_string(p.epochs));
  echo.emplace_back("pretrain.warmup_epochs", std::to_string(p.warmup_epochs));
  echo.emplace_back("pretrain.batch_groups", std::to_string(p.batch_groups));
  echo.emplace_back("pretrain.group_size", std::to_string(p.group_size));
  echo.emplace_back("pretrain.peak_lr", format_double_text(p.peak_lr));
  echo.emplace_back("pretrain.p_patch", format_double_text(p.p_patch));
  echo.emplace_back("pretrain.p_channel", format_double_text(p.p_channel));
  echo.emplace_back("seed", std::to_string(p.seed));
  return echo;
}

FinetuneConfig finetune_from_config(const RunConfig& cfg, Task task) {
  FinetuneConfig f;
  f.task = task;
  f.dataset_kind = cfg.get("finetune.kind", "lab");
  f.lr = cfg.get_double("finetune.lr", 0.0);
  f.epochs = cfg.get_int("finetune.epochs", f.epochs);
  f.batch = cfg.get_int("finetune.batch", f.batch);
  f.patience = cfg.get_int("finetune.patience", f.patience);
  f.snippet_fraction = cfg.get_double("finetune.fraction", 0.0);
  f.rul_gap = cfg.get_int("finetune.rul_gap", f.rul_gap);
  f.rul_cycles = cfg.get_doubles("finetune.rul_cycles", f.rul_cycles);
  f.provided_channels = cfg.get_ints("finetune.channels", {});
  f.seed = cfg.get_u64("seed", f.seed);
  return f;
}

std::vector<std::pair<std::string, std::string>> finetune_echo(const FinetuneConfig& f) {
  std::string cycles;
  for (std::size_t i = 0; i < f.rul_cycles.size(); ++i) {
    if (i) cycles += ',';
    cycles += format_double_text(f.rul_cycles[i]);
  }
  std::string channels;
  for (std::size_t i = 0; i < f.provided_channels.size(); ++i) {
    if (i) channels += ',';
    channels += std::to_string(f.provided_channels[i]);
  }
  return {{"finetune.task", task_name(f.task)},
          {"finetune.kind", f.dataset_kind},
          {"finetune.lr",
           format_double_text(f.lr > 0 ? f.lr : default_finetune_lr(f.task, f.dataset_kind))},
          {"finetune.epochs", std::to_string(f.epochs)},
          {"finetune.batch", std::to_string(f.batch)},
          {"finetune.patience", std::to_string(f.patience)},
          {"finetune.fraction",
           format_double_text(f.snippet_fraction > 0 ? f.snippet_fraction
                                                     : default_snippet_fraction(f.task))},
          {"finetune.rul_gap", std::to_string(f.rul_gap)},
          {"finetune.rul_cycles", cycles},
          {"finetune.channels", channels.empty() ? "task-default" : channels},
          {"seed", std::to_string(f.seed)}};
}

}  // namespace

GenerateOutcome run_generate(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const SyntheticFleetConfig fleet = fleet_from_config(cfg);
  const Corpus corpus = generate_synthetic_fleet(fleet);
  GenerateOutcome outcome;
  outcome.snippet_path = (fs::path(out_dir) / "snippets.csv").string();
  outcome.label_path = (fs::path(out_dir) / "labels.csv").string();
  outcome.snippet_count = static_cast<int>(corpus.snippets.size());
  write_corpus_csv(corpus, outcome.snippet_path, outcome.label_path);

  std::ofstream summary(fs::path(out_dir) / "generate_summary.txt");
  summary << "snippets = " << outcome.snippet_count << "\n[config]\n";
  for (const auto& [k, v] : fleet_echo(fleet)) summary << k << " = " << v << "\n";
  return outcome;
}

PretrainOutcome run_pretrain(const RunConfig& cfg, const std::string& data_path,
                             const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto [snippet_path, label_path] = resolve_data_paths(data_path);
  LoadResult loaded = load_dataset(snippet_path, label_path);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";

  const ModelConfig model_cfg = model_from_config(cfg);
  const PretrainConfig pre_cfg = pretrain_from_config(cfg);
  PretrainResult<float> result = pretrain_run<float>(loaded.corpus, pre_cfg, model_cfg);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  PretrainOutcome outcome;
  outcome.epoch_loss = result.epoch_loss;
  outcome.checkpoint_path = (fs::path(out_dir) / "pretrain.ckpt").string();
  outcome.history_path = (fs::path(out_dir) / "pretrain_history.csv").string();

  const auto echo = pretrain_echo(pre_cfg, result.params.cfg);
  pack_pretrained(result.params, result.normalizer, echo).save(outcome.checkpoint_path);

  std::ofstream history(outcome.history_path);
  history << "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    history << e << ',' << format_double_text(result.epoch_loss[e]) << '\n';
  }

  std::ofstream summary(fs::path(out_dir) / "pretrain_summary.txt");
  summary << "epochs = " << result.epoch_loss.size() << "\n";
  if (!result.epoch_loss.empty()) {
    summary << "first_epoch_loss = " << result.epoch_loss.front() << "\n";
    summary << "final_epoch_loss = " << result.epoch_loss.back() << "\n";
  }
  summary << "checkpoint = " << outcome.checkpoint_path << "\n[config]\n";
  for (const auto& [k, v] : echo) summary << k << " = " << v << "\n";
  return outcome;
}

FinetuneOutcome run_finetune(const RunConfig& cfg, const std::string& task,
                             const std::string& data_path, const std::string& checkpoint_path,
                             const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto parsed = parse_task(task);
  if (!parsed) throw ContractError("unknown task '" + task + "'");

  const auto [snippet_path, label_path] = resolve_data_paths(data_path);
  LoadResult loaded = load_dataset(snippet_path, label_path);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";

  Normalizer norm;
  const ModelParams<float> pretrained =
      unpack_pretrained<float>(Checkpoint::load(checkpoint_path), norm);

  FinetuneConfig fin_cfg = finetune_from_config(cfg, *parsed);
  const auto echo = finetune_echo(fin_cfg);

  std::map<std::string, bool> anomaly_by_source;
  for (std::size_t i = 0; i < loaded.corpus.snippets.size(); ++i) {
    const auto& label = loaded.corpus.labels[i];
    if (label.anomaly) anomaly_by_source[loaded.corpus.snippets[i].source_id] = *label.anomaly;
  }
  Rng fold_rng(fin_cfg.seed);
  const FoldPlan plan = make_cv_folds(loaded.corpus.sources(), anomaly_by_source,
                                      *parsed == Task::kAnomaly, fold_rng);

  FinetuneOutcome outcome;
  outcome.report.task = task;
  outcome.report.dataset = data_path;
  outcome.report.seed = fin_cfg.seed;
  outcome.report.config_echo = echo;

  const auto rounds = plan.rounds();
  for (std::size_t r = 0; r < rounds.size(); ++r) {
    FinetuneConfig round_cfg = fin_cfg;
    round_cfg.seed = fold_rng.spawn().next_u64();
    const FinetuneResult<float> result = finetune_run<float>(
        pretrained, norm, loaded.corpus, rounds[r].train_sources, rounds[r].eval_sources,
        round_cfg);
    for (const auto& [metric, value] : result.eval_metrics) {
      outcome.report.per_fold[metric].push_back(value);
    }
    const std::string fold_path =
        (fs::path(out_dir) / ("finetune_" + task + "_fold" + std::to_string(r) + ".ckpt"))
            .string();
    pack_finetuned(result.model, echo).save(fold_path);
    outcome.fold_checkpoints.push_back(fold_path);
  }

  outcome.report_csv = (fs::path(out_dir) / ("finetune_" + task + "_report.csv")).string();
  outcome.summary_path = (fs::path(out_dir) / ("finetune_" + task + "_summary.txt")).string();
  outcome.report.write_csv(outcome.report_csv);
  outcome.report.write_summary(outcome.summary_path);
  return outcome;
}

EvaluateOutcome run_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                             const std::string& data_path, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto [snippet_path, label_path] = resolve_data_paths(data_path);
  LoadResult loaded = load_dataset(snippet_path, label_path);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";

  const Checkpoint ckpt = Checkpoint::load(checkpoint_path);
  const FinetunedModel<float> model = unpack_finetuned<float>(ckpt);
  FinetuneConfig fin_cfg = finetune_from_config(cfg, model.head.task);
  fin_cfg.rul_gap = model.head.pairing_gap.value_or(fin_cfg.rul_gap);

  const auto metrics =
      evaluate_finetuned<float>(model, loaded.corpus, loaded.corpus.sources(), fin_cfg);

  EvaluateOutcome outcome;
  outcome.report.task = task_name(model.head.task);
  outcome.report.dataset = data_path;
  outcome.report.seed = fin_cfg.seed;
  outcome.report.config_echo = finetune_echo(fin_cfg);
  for (const auto& [metric, value] : metrics) outcome.report.per_fold[metric].push_back(value);
  outcome.report_csv = (fs::path(out_dir) / "evaluate_report.csv").string();
  outcome.summary_path = (fs::path(out_dir) / "evaluate_summary.txt").string();
  outcome.report.write_csv(outcome.report_csv);
  outcome.report.write_summary(outcome.summary_path);
  return outcome;
}

CollapseOutcome run_probe_collapse(const RunConfig& cfg,
                                   const std::optional<std::string>& checkpoint_path,
                                   const std::optional<std::string>& data_path,
                                   const std::string& out_dir) {
  ensure_dir(out_dir);
  const std::uint64_t seed = cfg.get_u64("seed", 7);

  ModelConfig model_cfg = model_from_config(cfg);
  Normalizer norm;
  std::optional<ModelParams<float>> params;
  if (checkpoint_path) {
    params = unpack_pretrained<float>(Checkpoint::load(*checkpoint_path), norm);
    model_cfg = params->cfg;
  }

  Corpus corpus;
  if (data_path) {
    const auto [snippet_path, label_path] = resolve_data_paths(*data_path);
    corpus = load_dataset(snippet_path, label_path).corpus;
  } else {
    SyntheticFleetConfig fleet;
    fleet.kind = "ev";
    fleet.n_sources = 2;
    fleet.snippets_per_source = std::max(10, model_cfg.group_size * 2);
    fleet.seed = seed;
    corpus = generate_synthetic_fleet(fleet);
  }
  if (!checkpoint_path) {
    norm = Normalizer::fit(corpus);
    Rng init_rng(seed);
    params = ModelParams<float>::init(model_cfg, init_rng);
  }

  // First source with enough snippets provides the probe group.
  SnippetGroup group;
  for (const auto& source : corpus.sources()) {
    const auto indices = corpus.indices_of(source);
    if (static_cast<int>(indices.size()) < model_cfg.group_size) continue;
    group.source_id = source;
    for (int g = 0; g < model_cfg.group_size; ++g) {
      group.snippets.push_back(
          norm.apply(corpus.snippets[static_cast<std::size_t>(indices[static_cast<std::size_t>(g)])]));
    }
    break;
  }
  if (group.snippets.empty()) {
    throw ContractError("probe-collapse: no source has enough snippets for a group");
  }

  Rng rng(seed);
  MaskPlan plan;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    plan = sample_mask_plan(model_cfg, rng);
    bool shared = false;
    for (std::size_t a = 0; a < plan.patch_sets.size() && !shared; ++a) {
      for (std::size_t b = a + 1; b < plan.patch_sets.size() && !shared; ++b) {
        for (int j : plan.patch_sets[a]) {
          const auto& other = plan.patch_sets[b];
          if (std::find(other.begin(), other.end(), j) != other.end()) {
            shared = true;
            break;
          }
        }
      }
    }
    if (shared) break;
  }

  Rng vanilla_rng(seed + 1);
  const CollapseReport vanilla =
      collapse_probe(group, plan, *params, CollapseMode::kVanillaMaskToken, vanilla_rng);
  Rng battery_rng(seed + 1);
  const CollapseReport battery =
      collapse_probe(group, plan, *params, CollapseMode::kBatteryState, battery_rng);

  CollapseOutcome outcome;
  outcome.vanilla_max = vanilla.max_divergence;
  outcome.battery_state_max = battery.max_divergence;
  outcome.report_path = (fs::path(out_dir) / "collapse_report.txt").string();

  std::ofstream report(outcome.report_path);
  report << "vanilla_mask_token_max_divergence = " << format_double_text(vanilla.max_divergence)
         << "\n";
  report << "battery_state_max_divergence = " << format_double_text(battery.max_divergence)
         << "\n";
  report << "seed = " << seed << "\n";
  auto dump_matrix = [&report](const char* name, const CollapseReport& r) {
    report << "\n[" << name << " pairwise max |delta|; -1 = no shared masked patch]\n";
    for (const auto& row : r.divergence) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        report << (i ? "," : "") << format_double_text(row[i]);
      }
      report << "\n";
    }
  };
  dump_matrix("vanilla_mask_token", vanilla);
  dump_matrix("battery_state", battery);
  return outcome;
}

}  // namespace fmae
