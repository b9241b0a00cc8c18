#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fmae/errors.hpp"

namespace fmae {

/// Canonical channel order. Every snippet that goes through the model uses
/// this layout; lab data simply leaves the system-level channels absent.
enum Channel : int {
  kVoltage = 0,
  kCurrent = 1,
  kSoc = 2,
  kMaxCellVoltage = 3,
  kMinCellVoltage = 4,
  kMaxTemperature = 5,
  kMinTemperature = 6,
  kMileage = 7,
};

constexpr int kSnippetLength = 128;  // time steps per snippet (l)
constexpr int kChannelCount = 8;     // canonical channel count (c)

/// Ordered channel layout plus the designated battery-state channels
/// (current, SoC, mileage) consumed by the decoder conditioning path.
struct ChannelSchema {
  std::vector<std::string> names;
  std::vector<std::string> units;
  std::vector<int> state_indices;

  int channel_count() const { return static_cast<int>(names.size()); }

  /// Index of a channel name, or -1 when unknown.
  int index_of(const std::string& name) const;

  /// The fixed eight-channel layout shared by all datasets.
  static const ChannelSchema& canonical();
};

/// One fixed-length multivariate charging/discharging segment.
/// `values` is row-major time x channel; absent channels are zero-filled
/// and flagged in `present`.
struct Snippet {
  int length = 0;
  int channels = 0;
  std::vector<double> values;          // length * channels, row-major
  std::vector<std::uint8_t> present;   // size channels, 1 = observed
  std::string source_id;
  std::string snippet_id;
  double cycle_or_mileage = 0.0;

  double at(int t, int ch) const {
    return values[static_cast<std::size_t>(t) * channels + ch];
  }
  double& at(int t, int ch) {
    return values[static_cast<std::size_t>(t) * channels + ch];
  }
  bool has_channel(int ch) const { return present[static_cast<std::size_t>(ch)] != 0; }

  static Snippet zeros(int length, int channels);
};

/// Raw per-channel series of arbitrary length, keyed by schema channel name.
struct RawSnippet {
  std::map<std::string, std::vector<double>> series;
  std::string source_id;
  std::string snippet_id;
  std::optional<double> cycle_or_mileage;
};

/// Ordered snippets drawn from one vehicle/cell.
struct SnippetGroup {
  std::vector<Snippet> snippets;
  std::string source_id;

  int size() const { return static_cast<int>(snippets.size()); }
};

/// Optional labels for the downstream objectives.
struct LabelSet {
  std::optional<double> soh;        // capacity / rated capacity, (0, 1.5]
  std::optional<double> ir_mohm;    // internal resistance
  std::optional<bool> anomaly;      // vehicle-level flag
  std::optional<int> rul_cycles;    // >= 0
};

/// Sampled masks for one pretraining group: the shared channel set S and
/// per-snippet patch sets.
struct MaskPlan {
  std::vector<int> channel_set;                 // sorted, no duplicates
  std::vector<std::vector<int>> patch_sets;     // one sorted set per snippet
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Linearly resample every provided series onto the canonical 128-step grid,
/// zero-fill the rest, and fill the mileage channel with the constant
/// cycle_or_mileage when that metadata is supplied.
Snippet align_to_schema(const RawSnippet& raw, const ChannelSchema& schema);

/// Report violations of the SnippetGroup invariants against an expected
/// group size. Never throws.
ValidationReport validate_group(const SnippetGroup& group, int expected_size);

}  // namespace fmae
