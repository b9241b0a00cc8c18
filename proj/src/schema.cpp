#include "fmae/schema.hpp"

#include <algorithm>
#include <cmath>

namespace fmae {

const ChannelSchema& ChannelSchema::canonical() {
  static const ChannelSchema schema{
      {"voltage", "current", "soc", "vmax", "vmin", "tmax", "tmin", "mileage"},
      {"V", "A", "fraction", "V", "V", "degC", "degC", "km_or_cycle"},
      {kCurrent, kSoc, kMileage}};
  return schema;
}

int ChannelSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Snippet Snippet::zeros(int length, int channels) {
  Snippet s;
  s.length = length;
  s.channels = channels;
  s.values.assign(static_cast<std::size_t>(length) * channels, 0.0);
  s.present.assign(static_cast<std::size_t>(channels), 0);
  return s;
}

namespace {

// Linear interpolation of `series` onto a uniform grid of `out_len` points
// spanning the same endpoints. Identity when lengths already match.
std::vector<double> resample_linear(const std::vector<double>& series, int out_len) {
  const int in_len = static_cast<int>(series.size());
  std::vector<double> out(static_cast<std::size_t>(out_len));
  if (in_len == out_len) {
    std::copy(series.begin(), series.end(), out.begin());
    return out;
  }
  const double scale = static_cast<double>(in_len - 1) / static_cast<double>(out_len - 1);
  for (int i = 0; i < out_len; ++i) {
    const double x = i * scale;
    const int lo = std::min(static_cast<int>(std::floor(x)), in_len - 2);
    const double frac = x - lo;
    out[static_cast<std::size_t>(i)] =
        series[static_cast<std::size_t>(lo)] * (1.0 - frac) +
        series[static_cast<std::size_t>(lo) + 1] * frac;
  }
  return out;
}

}  // namespace

Snippet align_to_schema(const RawSnippet& raw, const ChannelSchema& schema) {
  Snippet snip = Snippet::zeros(kSnippetLength, schema.channel_count());
  snip.source_id = raw.source_id;
  snip.snippet_id = raw.snippet_id;

  int recognized = 0;
  for (const auto& [name, series] : raw.series) {
    const int ch = schema.index_of(name);
    if (ch < 0) throw SchemaError("align_to_schema: unknown channel '" + name + "'");
    if (series.size() < 2) {
      throw DegenerateInputError("align_to_schema: channel '" + name +
                                 "' has fewer than 2 samples");
    }
    const auto resampled = resample_linear(series, kSnippetLength);
    for (int t = 0; t < kSnippetLength; ++t) {
      snip.at(t, ch) = resampled[static_cast<std::size_t>(t)];
    }
    snip.present[static_cast<std::size_t>(ch)] = 1;
    ++recognized;
  }
  if (recognized == 0) throw SchemaError("align_to_schema: no recognized channels");

  if (snip.has_channel(kMileage)) {
    snip.cycle_or_mileage = snip.at(0, kMileage);
  } else if (raw.cycle_or_mileage.has_value()) {
    snip.cycle_or_mileage = *raw.cycle_or_mileage;
    for (int t = 0; t < kSnippetLength; ++t) snip.at(t, kMileage) = snip.cycle_or_mileage;
    snip.present[kMileage] = 1;
  }
  return snip;
}

ValidationReport validate_group(const SnippetGroup& group, int expected_size) {
  ValidationReport report;
  if (group.size() != expected_size) {
    report.violations.push_back("group size: expected " + std::to_string(expected_size) +
                                ", got " + std::to_string(group.size()));
  }
  for (const auto& s : group.snippets) {
    if (s.source_id != group.source_id) {
      report.violations.push_back("mixed sources: snippet '" + s.snippet_id +
                                  "' comes from '" + s.source_id + "'");
      break;
    }
  }
  return report;
}

}  // namespace fmae
