#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fmae/rng.hpp"
#include "fmae/schema.hpp"

namespace fmae {

/// Snippets and their labels, index-aligned.
struct Corpus {
  std::vector<Snippet> snippets;
  std::vector<LabelSet> labels;

  /// Distinct source ids in first-seen order.
  std::vector<std::string> sources() const;
  /// Indices of the snippets belonging to one source.
  std::vector<int> indices_of(const std::string& source_id) const;
};

/// Desk-scale stand-in for a real fleet: per-source capacity fade
/// trajectories, an equivalent-circuit-flavored charge curve, and optional
/// anomalous sources with widened cell-voltage spread.
struct SyntheticFleetConfig {
  int n_sources = 8;
  int snippets_per_source = 200;
  std::string kind = "ev";  // ev | bess | lab
  double anomaly_fraction = 0.0;
  int cycle_step = 5;  // cycles between consecutive snippets of a source

  double fade_rate_lo = 4e-4;   // alpha range: SOH(k) = 1 - alpha * k^beta
  double fade_rate_hi = 1.2e-3;
  double fade_exponent_lo = 0.95;  // beta range
  double fade_exponent_hi = 1.25;
  double r_growth = 5.0;  // R(k) = R0 * (1 + r_growth * (1 - SOH(k)))

  double voltage_noise = 0.004;        // [V]
  double spread_base = 0.02;           // healthy vmax-vmin [V]
  double spread_noise = 0.004;         // [V]
  double anomaly_spread_factor = 2.0;  // multiplies the spread on faulty sources

  std::uint64_t seed = 1;
};

Corpus generate_synthetic_fleet(const SyntheticFleetConfig& cfg);

/// Per-channel z-score statistics fitted over present values only, with a
/// +-6 sigma clamp on application. Absent channels stay zero.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  double clamp_sigma = 6.0;

  static Normalizer fit(const Corpus& corpus);
  Snippet apply(const Snippet& snippet) const;
  double invert(double normalized, int channel) const;
  Corpus apply_all(const Corpus& corpus) const;
};

/// Five-fold source-level split. Anomaly uses the asymmetric protocol with
/// separate normal/faulty folds.
struct FoldPlan {
  int k = 5;
  std::vector<std::vector<std::string>> folds;          // standard tasks
  std::vector<std::vector<std::string>> normal_folds;   // anomaly only
  std::vector<std::vector<std::string>> faulty_folds;   // anomaly only
  bool anomaly = false;

  struct Round {
    std::vector<std::string> train_sources;
    std::vector<std::string> eval_sources;
  };
  std::vector<Round> rounds() const;
};

/// Split sources into five folds. For the anomaly task, labels must mark
/// each source and both classes need at least k members; each round then
/// trains on 4 normal + 1 faulty folds and evaluates on the remaining
/// 1 normal + 4 faulty.
FoldPlan make_cv_folds(const std::vector<std::string>& sources,
                       const std::map<std::string, bool>& anomaly_by_source, bool anomaly_task,
                       Rng& rng, int k = 5);

struct LoadResult {
  Corpus corpus;
  std::vector<std::string> warnings;
};

/// Write / read the snippet and label CSV files. Values round-trip exactly.
void write_corpus_csv(const Corpus& corpus, const std::string& snippet_path,
                      const std::string& label_path);
LoadResult load_dataset(const std::string& snippet_path, const std::string& label_path);

}  // namespace fmae
