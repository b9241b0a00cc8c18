#include "fmae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fmae {

RegressionMetrics rmse_mae_mape(const std::vector<double>& pred,
                                const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw ContractError("rmse_mae_mape: length mismatch");
  if (pred.empty()) throw ContractError("rmse_mae_mape: empty input");
  double sq = 0.0, abs_err = 0.0, pct = 0.0;
  bool mape_defined = true;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    sq += d * d;
    abs_err += std::abs(d);
    if (truth[i] == 0.0) {
      mape_defined = false;
    } else {
      pct += std::abs(d) / std::abs(truth[i]);
    }
  }
  const double n = static_cast<double>(pred.size());
  RegressionMetrics m;
  m.rmse = std::sqrt(sq / n);
  m.mae = abs_err / n;
  if (mape_defined) m.mape = pct / n * 100.0;
  return m;
}

double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ContractError("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (bool b : labels) n_pos += b ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auroc: both classes required");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks over ties, 1-based
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k]) rank_sum_pos += rank[k];
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double naive_rul_baseline(const std::vector<double>& train_ruls,
                          const std::vector<double>& eval_ruls) {
  if (train_ruls.empty()) throw ContractError("naive_rul_baseline: empty training set");
  if (eval_ruls.empty()) throw ContractError("naive_rul_baseline: empty evaluation set");
  const double mean =
      std::accumulate(train_ruls.begin(), train_ruls.end(), 0.0) /
      static_cast<double>(train_ruls.size());
  double sq = 0.0;
  for (double r : eval_ruls) sq += (mean - r) * (mean - r);
  return std::sqrt(sq / static_cast<double>(eval_ruls.size()));
}

double MetricReport::mean(const std::string& metric) const {
  const auto& v = per_fold.at(metric);
  if (v.empty()) throw ContractError("metric report: no fold values for " + metric);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double MetricReport::stddev(const std::string& metric) const {
  const auto& v = per_fold.at(metric);
  if (v.empty()) throw ContractError("metric report: no fold values for " + metric);
  const double m = mean(metric);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

void MetricReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "metric,fold,value\n";
  for (const auto& [metric, values] : per_fold) {
    for (std::size_t fold = 0; fold < values.size(); ++fold) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", values[fold]);
      out << metric << ',' << fold << ',' << buf << '\n';
    }
  }
  if (!out.flush()) throw IoError("failed writing '" + path + "'");
}

void MetricReport::write_summary(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "task = " << task << "\n";
  out << "dataset = " << dataset << "\n";
  out << "seed = " << seed << "\n";
  out << "\n[metrics]\n";
  for (const auto& [metric, values] : per_fold) {
    out << metric << " = " << mean(metric) << " +- " << stddev(metric) << " over "
        << values.size() << " folds\n";
  }
  out << "\n[config]\n";
  for (const auto& [key, value] : config_echo) out << key << " = " << value << "\n";
  if (!out.flush()) throw IoError("failed writing '" + path + "'");
}

}  // namespace fmae
