#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "fmae/data.hpp"
#include "fmae/experiment.hpp"
#include "fmae/heads.hpp"
#include "fmae/masking.hpp"
#include "fmae/metrics.hpp"
#include "fmae/optim.hpp"

namespace py = pybind11;

namespace {

fmae::RunConfig config_from_dict(const py::dict& overrides) {
  fmae::RunConfig cfg;
  for (const auto& item : overrides) {
    cfg.set(py::str(item.first).cast<std::string>(), py::str(item.second).cast<std::string>());
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Flexible masked-autoencoder pretraining for battery time series";
  m.attr("__version__") = "0.1.0";

  py::register_exception<fmae::Error>(m, "FmaeError");

  m.def(
      "lr_at",
      [](long step, double peak, int warmup_epochs, int total_epochs, int steps_per_epoch) {
        return fmae::lr_at(step, {peak, warmup_epochs, total_epochs, steps_per_epoch});
      },
      py::arg("step"), py::arg("peak") = 1.5e-4, py::arg("warmup_epochs") = 40,
      py::arg("total_epochs") = 800, py::arg("steps_per_epoch") = 1,
      "Warmup/cosine learning rate at an optimizer step");

  m.def("sinusoidal_encoding", &fmae::sinusoidal_encoding, py::arg("index"), py::arg("width"));

  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<bool>& labels) {
        return fmae::auroc(scores, labels);
      },
      py::arg("scores"), py::arg("labels"),
      "Rank-based AUROC with ties half-credited");

  m.def(
      "rmse_mae_mape",
      [](const std::vector<double>& pred, const std::vector<double>& truth) {
        const auto r = fmae::rmse_mae_mape(pred, truth);
        py::dict out;
        out["rmse"] = r.rmse;
        out["mae"] = r.mae;
        if (r.mape) out["mape"] = *r.mape;
        return out;
      },
      py::arg("pred"), py::arg("truth"));

  m.def("anomaly_vehicle_score", &fmae::anomaly_vehicle_score, py::arg("logits"),
        "Mean of the top 10% snippet logits");

  m.def("naive_rul_baseline", &fmae::naive_rul_baseline, py::arg("train_ruls"),
        py::arg("eval_ruls"));

  m.def(
      "model_shape_summary",
      []() {
        fmae::ModelConfig cfg;
        py::dict out;
        out["encoder_token_width"] = cfg.enc_token_width();
        out["decoder_token_width"] = cfg.dec_token_width();
        out["reconstruction_width"] = cfg.patch_values();
        out["encoder_layers"] = cfg.enc_layers;
        out["encoder_heads"] = cfg.enc_heads;
        out["decoder_layers"] = cfg.dec_layers;
        out["decoder_heads"] = cfg.dec_heads;
        return out;
      },
      "Token widths and depths of the standard configuration");

  m.def(
      "generate_fleet",
      [](const std::string& out_dir, const py::dict& overrides) {
        const auto outcome = fmae::run_generate(config_from_dict(overrides), out_dir);
        py::dict out;
        out["snippets"] = outcome.snippet_count;
        out["snippet_path"] = outcome.snippet_path;
        out["label_path"] = outcome.label_path;
        return out;
      },
      py::arg("out_dir"), py::arg("overrides") = py::dict());

  m.def(
      "pretrain",
      [](const std::string& data_path, const std::string& out_dir, const py::dict& overrides) {
        const auto outcome = fmae::run_pretrain(config_from_dict(overrides), data_path, out_dir);
        py::dict out;
        out["checkpoint"] = outcome.checkpoint_path;
        out["history"] = outcome.history_path;
        out["epoch_loss"] = outcome.epoch_loss;
        return out;
      },
      py::arg("data_path"), py::arg("out_dir"), py::arg("overrides") = py::dict());

  m.def(
      "finetune",
      [](const std::string& task, const std::string& data_path, const std::string& checkpoint,
         const std::string& out_dir, const py::dict& overrides) {
        const auto outcome = fmae::run_finetune(config_from_dict(overrides), task, data_path,
                                                checkpoint, out_dir);
        py::dict metrics;
        for (const auto& [name, values] : outcome.report.per_fold) {
          metrics[name.c_str()] =
              py::make_tuple(outcome.report.mean(name), outcome.report.stddev(name), values);
        }
        py::dict out;
        out["metrics"] = metrics;
        out["report_csv"] = outcome.report_csv;
        out["fold_checkpoints"] = outcome.fold_checkpoints;
        return out;
      },
      py::arg("task"), py::arg("data_path"), py::arg("checkpoint"), py::arg("out_dir"),
      py::arg("overrides") = py::dict());

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& data_path, const std::string& out_dir,
         const py::dict& overrides) {
        const auto outcome =
            fmae::run_evaluate(config_from_dict(overrides), checkpoint, data_path, out_dir);
        py::dict out;
        for (const auto& [name, values] : outcome.report.per_fold) {
          out[name.c_str()] = values.front();
        }
        return out;
      },
      py::arg("checkpoint"), py::arg("data_path"), py::arg("out_dir"),
      py::arg("overrides") = py::dict());

  m.def(
      "probe_collapse",
      [](const std::string& out_dir, const std::optional<std::string>& checkpoint,
         const std::optional<std::string>& data_path, const py::dict& overrides) {
        const auto outcome =
            fmae::run_probe_collapse(config_from_dict(overrides), checkpoint, data_path, out_dir);
        py::dict out;
        out["vanilla_max"] = outcome.vanilla_max;
        out["battery_state_max"] = outcome.battery_state_max;
        out["report"] = outcome.report_path;
        return out;
      },
      py::arg("out_dir"), py::arg("checkpoint") = std::nullopt,
      py::arg("data_path") = std::nullopt, py::arg("overrides") = py::dict());
}
