#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fmae/metrics.hpp"
#include "fmae/rng.hpp"

using namespace fmae;

TEST_CASE("regression metrics on simple inputs") {
  SUBCASE("perfect predictions") {
    const auto m = rmse_mae_mape({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
    CHECK(m.rmse == 0.0);
    CHECK(m.mae == 0.0);
    CHECK(m.mape.value() == 0.0);
  }
  SUBCASE("zero truth disables MAPE but not the rest") {
    const auto m = rmse_mae_mape({3.0, 4.0}, {0.0, 0.0});
    CHECK(m.rmse == doctest::Approx(std::sqrt((9.0 + 16.0) / 2.0)));
    CHECK(m.mae == doctest::Approx(3.5));
    CHECK_FALSE(m.mape.has_value());
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS((void)rmse_mae_mape({1.0}, {1.0, 2.0}), ContractError);
  }
}

TEST_CASE("regression metrics match an independent recomputation on random data") {
  Rng rng(31);
  std::vector<double> pred(20), truth(20);
  for (auto& v : pred) v = rng.uniform(1.0, 9.0);
  for (auto& v : truth) v = rng.uniform(1.0, 9.0);
  const auto m = rmse_mae_mape(pred, truth);

  // spreadsheet-style: accumulate in long double, different order
  long double sq = 0.0L, ab = 0.0L, pc = 0.0L;
  for (int i = 19; i >= 0; --i) {
    const long double d = static_cast<long double>(pred[static_cast<std::size_t>(i)]) -
                          truth[static_cast<std::size_t>(i)];
    sq += d * d;
    ab += std::abs(static_cast<double>(d));
    pc += std::abs(static_cast<double>(d)) / truth[static_cast<std::size_t>(i)];
  }
  CHECK(m.rmse == doctest::Approx(std::sqrt(static_cast<double>(sq / 20.0L))).epsilon(1e-12));
  CHECK(m.mae == doctest::Approx(static_cast<double>(ab / 20.0L)).epsilon(1e-12));
  CHECK(m.mape.value() ==
        doctest::Approx(static_cast<double>(pc / 20.0L) * 100.0).epsilon(1e-12));
}

TEST_CASE("RMSE is never below MAE") {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(30);
    std::vector<double> pred(n), truth(n);
    for (auto& v : pred) v = rng.normal();
    for (auto& v : truth) v = rng.normal();
    const auto m = rmse_mae_mape(pred, truth);
    CHECK(m.rmse >= m.mae - 1e-12);
  }
}

TEST_CASE("auroc on canonical cases") {
  CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}) == 1.0);
  CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {false, false, true, true}) == 0.0);
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {false, true, false, true}) == 0.5);
  CHECK_THROWS_AS((void)auroc({0.1, 0.2}, {true, true}), MetricError);
}

TEST_CASE("auroc equals pairwise enumeration on random instances") {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(29);
    std::vector<double> scores(n);
    std::vector<bool> labels(n);
    // quantized scores force plenty of ties
    for (auto& s : scores) s = static_cast<double>(rng.uniform_index(6)) / 3.0;
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform() < 0.5;
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos) labels[0] = true;
    if (!has_neg) labels[n - 1] = false;
    if (labels[0] == labels[n - 1] && n == 2) labels[0] = !labels[0];

    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!labels[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (labels[j]) continue;
        ++pairs;
        if (scores[i] > scores[j]) wins += 1.0;
        if (scores[i] == scores[j]) wins += 0.5;
      }
    }
    CHECK(auroc(scores, labels) ==
          doctest::Approx(wins / static_cast<double>(pairs)).epsilon(1e-12));
  }
}

TEST_CASE("naive RUL baseline predicts the training mean") {
  // train mean 150, eval equal to the constant -> zero error
  CHECK(naive_rul_baseline({100.0, 200.0}, {150.0}) == 0.0);
  CHECK(naive_rul_baseline({100.0, 200.0}, {160.0}) == doctest::Approx(10.0));
  CHECK_THROWS_AS((void)naive_rul_baseline({}, {1.0}), ContractError);
}

TEST_CASE("metric report means and stds recompute from fold values") {
  MetricReport report;
  report.task = "capacity";
  report.dataset = "synthetic";
  report.per_fold["rmse"] = {1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK(report.mean("rmse") == doctest::Approx(3.0));
  CHECK(report.stddev("rmse") == doctest::Approx(std::sqrt(2.0)));

  const auto path = std::filesystem::temp_directory_path() / "fmae_report_test.csv";
  report.write_csv(path.string());
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "metric,fold,value");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);
  std::filesystem::remove(path);
}
