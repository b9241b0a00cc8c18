#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "fmae/data.hpp"

using namespace fmae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("fmae_test_" + std::to_string(std::rand()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this) & 0xffff));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const char* name) const { return (path / name).string(); }
};

SyntheticFleetConfig small_fleet() {
  SyntheticFleetConfig cfg;
  cfg.n_sources = 4;
  cfg.snippets_per_source = 12;
  cfg.kind = "ev";
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("synthetic fleet generation is bitwise deterministic") {
  const Corpus a = generate_synthetic_fleet(small_fleet());
  const Corpus b = generate_synthetic_fleet(small_fleet());
  REQUIRE(a.snippets.size() == b.snippets.size());
  for (std::size_t i = 0; i < a.snippets.size(); ++i) {
    CHECK(a.snippets[i].values == b.snippets[i].values);
    CHECK(a.labels[i].soh == b.labels[i].soh);
  }
}

TEST_CASE("SOH labels decay with cycle count per source") {
  SyntheticFleetConfig cfg = small_fleet();
  cfg.snippets_per_source = 30;
  cfg.cycle_step = 10;
  const Corpus corpus = generate_synthetic_fleet(cfg);
  for (const auto& source : corpus.sources()) {
    double last = 2.0;
    for (int idx : corpus.indices_of(source)) {
      const double soh = corpus.labels[static_cast<std::size_t>(idx)].soh.value();
      CHECK(soh <= last + 1e-12);
      CHECK(soh > 0.0);
      CHECK(soh <= 1.0);
      last = soh;
    }
  }
}

TEST_CASE("RUL labels step down by the cycle spacing and bottom out at zero") {
  SyntheticFleetConfig cfg = small_fleet();
  cfg.n_sources = 2;
  cfg.snippets_per_source = 120;
  cfg.cycle_step = 5;
  cfg.fade_rate_lo = 8e-4;  // end of life well inside the generated range
  cfg.fade_rate_hi = 1.2e-3;
  const Corpus corpus = generate_synthetic_fleet(cfg);
  for (const auto& source : corpus.sources()) {
    const auto indices = corpus.indices_of(source);
    bool hit_zero = false;
    for (std::size_t k = 1; k < indices.size(); ++k) {
      const int prev = corpus.labels[static_cast<std::size_t>(indices[k - 1])].rul_cycles.value();
      const int curr = corpus.labels[static_cast<std::size_t>(indices[k])].rul_cycles.value();
      if (curr == 0) hit_zero = true;
      if (prev > 0 && curr > 0) CHECK(prev - curr == cfg.cycle_step);
      CHECK(curr >= 0);
    }
    CHECK(hit_zero);
  }
}

TEST_CASE("anomalous sources have strictly wider cell-voltage spread") {
  SyntheticFleetConfig cfg = small_fleet();
  cfg.n_sources = 8;
  cfg.anomaly_fraction = 0.5;
  cfg.anomaly_spread_factor = 2.0;
  const Corpus corpus = generate_synthetic_fleet(cfg);

  double normal_spread = 0.0, anomalous_spread = 0.0;
  int normal_count = 0, anomalous_count = 0;
  for (std::size_t i = 0; i < corpus.snippets.size(); ++i) {
    const auto& snip = corpus.snippets[i];
    double mean_spread = 0.0;
    for (int t = 0; t < snip.length; ++t) {
      mean_spread += snip.at(t, kMaxCellVoltage) - snip.at(t, kMinCellVoltage);
    }
    mean_spread /= snip.length;
    if (corpus.labels[i].anomaly.value()) {
      anomalous_spread += mean_spread;
      ++anomalous_count;
    } else {
      normal_spread += mean_spread;
      ++normal_count;
    }
  }
  REQUIRE(normal_count > 0);
  REQUIRE(anomalous_count > 0);
  CHECK(anomalous_spread / anomalous_count > normal_spread / normal_count);
}

TEST_CASE("lab fleets carry three measured channels plus the cycle coordinate") {
  SyntheticFleetConfig cfg = small_fleet();
  cfg.kind = "lab";
  const Corpus corpus = generate_synthetic_fleet(cfg);
  for (const auto& snip : corpus.snippets) {
    CHECK(snip.has_channel(kVoltage));
    CHECK(snip.has_channel(kCurrent));
    CHECK(snip.has_channel(kSoc));
    CHECK(snip.has_channel(kMileage));
    CHECK_FALSE(snip.has_channel(kMaxCellVoltage));
    CHECK_FALSE(snip.has_channel(kMinTemperature));
    for (int t = 0; t < snip.length; ++t) {
      CHECK(snip.at(t, kMileage) == snip.cycle_or_mileage);
    }
  }
}

TEST_CASE("normalizer standardizes present channels and floors constant ones") {
  const Corpus corpus = generate_synthetic_fleet(small_fleet());
  const Normalizer norm = Normalizer::fit(corpus);
  const Corpus normalized = norm.apply_all(corpus);

  for (int ch = 0; ch < 8; ++ch) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (const auto& snip : normalized.snippets) {
      if (!snip.has_channel(ch)) continue;
      for (int t = 0; t < snip.length; ++t) {
        sum += snip.at(t, ch);
        sum_sq += snip.at(t, ch) * snip.at(t, ch);
        ++count;
      }
    }
    if (count == 0) continue;
    const double mean = sum / count;
    const double var = sum_sq / count - mean * mean;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  // constant channel: sigma floor applies instead of dividing by zero
  Corpus constant;
  Snippet s = Snippet::zeros(8, 8);
  s.present.assign(8, 1);
  for (int t = 0; t < 8; ++t) s.at(t, 0) = 5.0;
  constant.snippets.push_back(s);
  constant.labels.emplace_back();
  const Normalizer cn = Normalizer::fit(constant);
  CHECK(cn.stddev[0] == doctest::Approx(1e-6));
}

TEST_CASE("normalizer round-trips within the clamp range") {
  const Corpus corpus = generate_synthetic_fleet(small_fleet());
  const Normalizer norm = Normalizer::fit(corpus);
  const Snippet& snip = corpus.snippets.front();
  const Snippet normalized = norm.apply(snip);
  for (int t = 0; t < snip.length; t += 13) {
    for (int ch = 0; ch < snip.channels; ++ch) {
      if (!snip.has_channel(ch)) continue;
      CHECK(norm.invert(normalized.at(t, ch), ch) ==
            doctest::Approx(snip.at(t, ch)).epsilon(1e-9));
    }
  }
}

TEST_CASE("normalizer leaves absent channels untouched") {
  SyntheticFleetConfig cfg = small_fleet();
  cfg.kind = "lab";
  const Corpus corpus = generate_synthetic_fleet(cfg);
  const Normalizer norm = Normalizer::fit(corpus);
  const Snippet normalized = norm.apply(corpus.snippets.front());
  for (int t = 0; t < normalized.length; ++t) {
    CHECK(normalized.at(t, kMaxCellVoltage) == 0.0);
  }
}

TEST_CASE("csv round trip reproduces snippets and labels exactly") {
  TempDir dir;
  SyntheticFleetConfig cfg = small_fleet();
  cfg.kind = "lab";  // exercises absent channels too
  const Corpus corpus = generate_synthetic_fleet(cfg);
  write_corpus_csv(corpus, dir.file("snippets.csv"), dir.file("labels.csv"));
  const LoadResult loaded = load_dataset(dir.file("snippets.csv"), dir.file("labels.csv"));

  CHECK(loaded.warnings.empty());
  REQUIRE(loaded.corpus.snippets.size() == corpus.snippets.size());
  for (std::size_t i = 0; i < corpus.snippets.size(); ++i) {
    CHECK(loaded.corpus.snippets[i].snippet_id == corpus.snippets[i].snippet_id);
    CHECK(loaded.corpus.snippets[i].values == corpus.snippets[i].values);
    CHECK(loaded.corpus.snippets[i].present == corpus.snippets[i].present);
    CHECK(loaded.corpus.snippets[i].cycle_or_mileage == corpus.snippets[i].cycle_or_mileage);
    CHECK(loaded.corpus.labels[i].soh.value() == corpus.labels[i].soh.value());
    CHECK(loaded.corpus.labels[i].rul_cycles == corpus.labels[i].rul_cycles);
    CHECK(loaded.corpus.labels[i].anomaly == corpus.labels[i].anomaly);
  }
}

TEST_CASE("a snippet file without system columns loads as lab-shaped data") {
  TempDir dir;
  std::ofstream snip(dir.file("snippets.csv"));
  snip << "snippet_id,source_id,t_index,voltage,current,soc\n";
  for (int t = 0; t < 4; ++t) {
    snip << "s1,cell,"
         << t << ',' << 3.0 + 0.1 * t << ',' << 1.5 << ',' << 0.2 + 0.1 * t << "\n";
  }
  snip.close();
  std::ofstream label(dir.file("labels.csv"));
  label << "snippet_id,soh,ir_mohm,anomaly,rul_cycles,cycle_number\ns1,0.95,,,,12\n";
  label.close();

  const LoadResult loaded = load_dataset(dir.file("snippets.csv"), dir.file("labels.csv"));
  REQUIRE(loaded.corpus.snippets.size() == 1);
  const Snippet& s = loaded.corpus.snippets.front();
  CHECK(s.has_channel(kVoltage));
  CHECK_FALSE(s.has_channel(kMaxCellVoltage));
  CHECK(s.has_channel(kMileage));  // filled from cycle_number
  CHECK(s.cycle_or_mileage == 12.0);
  CHECK(loaded.corpus.labels.front().soh.value() == doctest::Approx(0.95));
}

TEST_CASE("malformed rows are reported with their line number") {
  TempDir dir;
  std::ofstream snip(dir.file("snippets.csv"));
  snip << "snippet_id,source_id,t_index,voltage\n";
  snip << "s1,cell,0,3.1\n";
  snip << "s1,cell,1,not_a_number\n";
  snip.close();
  std::ofstream label(dir.file("labels.csv"));
  label << "snippet_id,soh,ir_mohm,anomaly,rul_cycles,cycle_number\n";
  label.close();

  CHECK_THROWS_WITH_AS(
      (void)load_dataset(dir.file("snippets.csv"), dir.file("labels.csv")),
      doctest::Contains(":3"), IoError);
}

TEST_CASE("duplicate snippet ids are rejected") {
  TempDir dir;
  std::ofstream snip(dir.file("snippets.csv"));
  snip << "snippet_id,source_id,t_index,voltage\n";
  for (int t = 0; t < 3; ++t) snip << "s1,cell," << t << ",3.1\n";
  for (int t = 0; t < 3; ++t) snip << "s1,cell," << t << ",3.4\n";  // id reused
  snip.close();
  std::ofstream label(dir.file("labels.csv"));
  label << "snippet_id,soh,ir_mohm,anomaly,rul_cycles,cycle_number\n";
  label.close();

  CHECK_THROWS_WITH_AS(
      (void)load_dataset(dir.file("snippets.csv"), dir.file("labels.csv")),
      doctest::Contains("duplicate"), IoError);
}

TEST_CASE("labels for unknown snippets produce warnings, not failures") {
  TempDir dir;
  std::ofstream snip(dir.file("snippets.csv"));
  snip << "snippet_id,source_id,t_index,voltage\n";
  snip << "s1,cell,0,3.1\ns1,cell,1,3.2\n";
  snip.close();
  std::ofstream label(dir.file("labels.csv"));
  label << "snippet_id,soh,ir_mohm,anomaly,rul_cycles,cycle_number\n";
  label << "ghost,0.9,,,,\n";
  label.close();

  const LoadResult loaded = load_dataset(dir.file("snippets.csv"), dir.file("labels.csv"));
  REQUIRE(loaded.warnings.size() == 1);
  CHECK(loaded.warnings.front().find("ghost") != std::string::npos);
}

TEST_CASE("standard folds partition ten sources into five pairs") {
  std::vector<std::string> sources;
  for (int i = 0; i < 10; ++i) sources.push_back("v" + std::to_string(i));
  Rng rng(5);
  const FoldPlan plan = make_cv_folds(sources, {}, false, rng);
  REQUIRE(plan.folds.size() == 5);
  for (const auto& fold : plan.folds) CHECK(fold.size() == 2);

  const auto rounds = plan.rounds();
  REQUIRE(rounds.size() == 5);
  std::set<std::string> eval_seen;
  for (const auto& round : rounds) {
    CHECK(round.train_sources.size() == 8);
    CHECK(round.eval_sources.size() == 2);
    for (const auto& s : round.eval_sources) {
      CHECK(eval_seen.insert(s).second);  // each source evaluated exactly once
    }
    // leak-free: no overlap between train and eval
    for (const auto& s : round.eval_sources) {
      CHECK(std::find(round.train_sources.begin(), round.train_sources.end(), s) ==
            round.train_sources.end());
    }
  }
  CHECK(eval_seen.size() == 10);
}

TEST_CASE("anomaly folds follow the asymmetric 4+1 / 1+4 protocol") {
  std::vector<std::string> sources;
  std::map<std::string, bool> labels;
  for (int i = 0; i < 10; ++i) {
    sources.push_back("n" + std::to_string(i));
    labels[sources.back()] = false;
  }
  for (int i = 0; i < 5; ++i) {
    sources.push_back("f" + std::to_string(i));
    labels[sources.back()] = true;
  }
  Rng rng(6);
  const FoldPlan plan = make_cv_folds(sources, labels, true, rng);
  const auto rounds = plan.rounds();
  REQUIRE(rounds.size() == 5);
  for (const auto& round : rounds) {
    int train_normal = 0, train_faulty = 0, eval_normal = 0, eval_faulty = 0;
    for (const auto& s : round.train_sources) (labels.at(s) ? train_faulty : train_normal)++;
    for (const auto& s : round.eval_sources) (labels.at(s) ? eval_faulty : eval_normal)++;
    CHECK(train_normal == 8);   // 4 folds of 2
    CHECK(train_faulty == 1);   // 1 fold of 1
    CHECK(eval_normal == 2);    // 1 fold of 2
    CHECK(eval_faulty == 4);    // 4 folds of 1
    for (const auto& s : round.eval_sources) {
      CHECK(std::find(round.train_sources.begin(), round.train_sources.end(), s) ==
            round.train_sources.end());
    }
  }
}

TEST_CASE("fold construction rejects undersized inputs") {
  Rng rng(7);
  std::vector<std::string> few{"a", "b", "c"};
  CHECK_THROWS_AS((void)make_cv_folds(few, {}, false, rng), ContractError);

  std::vector<std::string> sources;
  std::map<std::string, bool> labels;
  for (int i = 0; i < 10; ++i) {
    sources.push_back("n" + std::to_string(i));
    labels[sources.back()] = false;
  }
  sources.push_back("f0");
  labels["f0"] = true;  // only one faulty source
  CHECK_THROWS_AS((void)make_cv_folds(sources, labels, true, rng), ContractError);
}
