#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "fmae/experiment.hpp"

using fmae::RunConfig;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key = value configuration file");
  cmd->add_option("--seed", args.seed, "master random seed");
  cmd->add_option("--out", args.out_dir, "output directory");
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = RunConfig::from_file(args.config_path);
  if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FMAE: flexible masked-autoencoder pretraining and task heads for battery data"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  auto* gen = app.add_subcommand("generate", "write a synthetic fleet as CSV");
  add_common(gen, gen_args);

  CommonArgs pre_args;
  std::string pre_data;
  auto* pre = app.add_subcommand("pretrain", "masked-reconstruction pretraining");
  add_common(pre, pre_args);
  pre->add_option("--data", pre_data, "dataset directory or snippet CSV")->required();

  CommonArgs fin_args;
  std::string fin_data, fin_task, fin_ckpt;
  auto* fin = app.add_subcommand("finetune", "five-fold task finetuning from a checkpoint");
  add_common(fin, fin_args);
  fin->add_option("--data", fin_data, "dataset directory or snippet CSV")->required();
  fin->add_option("--task", fin_task, "capacity | ir | anomaly | rul")->required();
  fin->add_option("--checkpoint", fin_ckpt, "pretrained checkpoint")->required();

  CommonArgs eval_args;
  std::string eval_data, eval_ckpt;
  auto* eval = app.add_subcommand("evaluate", "metrics of a finetuned checkpoint on a dataset");
  add_common(eval, eval_args);
  eval->add_option("--data", eval_data, "dataset directory or snippet CSV")->required();
  eval->add_option("--checkpoint", eval_ckpt, "finetuned checkpoint")->required();

  CommonArgs probe_args;
  std::string probe_data, probe_ckpt;
  auto* probe = app.add_subcommand("probe-collapse",
                                   "decoder-output divergence with and without battery states");
  add_common(probe, probe_args);
  probe->add_option("--data", probe_data, "dataset directory or snippet CSV");
  probe->add_option("--checkpoint", probe_ckpt, "pretrained checkpoint (fresh init if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (gen->parsed()) {
      const auto outcome = run_generate(resolve(gen_args), gen_args.out_dir);
      std::cout << "wrote " << outcome.snippet_count << " snippets to " << outcome.snippet_path
                << "\n";
    } else if (pre->parsed()) {
      const auto outcome = run_pretrain(resolve(pre_args), pre_data, pre_args.out_dir);
      std::cout << "checkpoint: " << outcome.checkpoint_path << "\n";
      if (!outcome.epoch_loss.empty()) {
        std::cout << "first epoch loss " << outcome.epoch_loss.front() << ", final "
                  << outcome.epoch_loss.back() << "\n";
      }
    } else if (fin->parsed()) {
      const auto outcome =
          run_finetune(resolve(fin_args), fin_task, fin_data, fin_ckpt, fin_args.out_dir);
      std::cout << "report: " << outcome.report_csv << "\n";
      for (const auto& [metric, values] : outcome.report.per_fold) {
        std::cout << metric << " = " << outcome.report.mean(metric) << " +- "
                  << outcome.report.stddev(metric) << " over " << values.size() << " folds\n";
      }
    } else if (eval->parsed()) {
      const auto outcome =
          run_evaluate(resolve(eval_args), eval_ckpt, eval_data, eval_args.out_dir);
      std::cout << "report: " << outcome.report_csv << "\n";
      for (const auto& [metric, values] : outcome.report.per_fold) {
        std::cout << metric << " = " << values.front() << "\n";
      }
    } else if (probe->parsed()) {
      std::optional<std::string> data, ckpt;
      if (!probe_data.empty()) data = probe_data;
      if (!probe_ckpt.empty()) ckpt = probe_ckpt;
      const auto outcome = run_probe_collapse(resolve(probe_args), ckpt, data, probe_args.out_dir);
      std::cout << "vanilla mask token max divergence: " << outcome.vanilla_max << "\n";
      std::cout << "battery state max divergence:      " << outcome.battery_state_max << "\n";
      std::cout << "report: " << outcome.report_path << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
