#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmae/errors.hpp"

namespace fmae {

struct RegressionMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  /// Percent; absent when any truth value is zero.
  std::optional<double> mape;
};

/// RMSE, MAE and MAPE (percent) of predictions against ground truth.
RegressionMetrics rmse_mae_mape(const std::vector<double>& pred,
                                const std::vector<double>& truth);

/// Area under the ROC curve via rank statistics: the probability that a
/// random positive outscores a random negative, ties half-credited.
double auroc(const std::vector<double>& scores, const std::vector<bool>& labels);

/// RMSE of predicting the mean training RUL for every evaluation cell.
double naive_rul_baseline(const std::vector<double>& train_ruls,
                          const std::vector<double>& eval_ruls);

/// Per-fold metric values for one (task, dataset) experiment, with the full
/// resolved configuration echoed for reproducibility.
struct MetricReport {
  std::string task;
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::map<std::string, std::vector<double>> per_fold;  // metric -> fold values

  double mean(const std::string& metric) const;
  double stddev(const std::string& metric) const;

  /// Rows of (metric, fold, value) plus the header.
  void write_csv(const std::string& path) const;
  void write_summary(const std::string& path) const;
};

}  // namespace fmae
