#include <doctest.h>

#include <cmath>

#include "fmae/schema.hpp"

using namespace fmae;

namespace {

std::vector<double> ramp(int n, double lo, double hi) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return out;
}

}  // namespace

TEST_CASE("canonical schema has eight channels with the fixed state set") {
  const auto& schema = ChannelSchema::canonical();
  CHECK(schema.channel_count() == 8);
  CHECK(schema.names[0] == "voltage");
  CHECK(schema.names[7] == "mileage");
  CHECK(schema.state_indices == std::vector<int>{kCurrent, kSoc, kMileage});
  CHECK(schema.index_of("soc") == 2);
  CHECK(schema.index_of("bogus") == -1);
}

TEST_CASE("align_to_schema resamples a three-channel lab snippet") {
  RawSnippet raw;
  raw.series["voltage"] = ramp(300, 3.2, 4.1);
  raw.series["current"] = ramp(300, 2.0, 0.5);
  raw.series["soc"] = ramp(300, 0.1, 0.9);
  raw.snippet_id = "s";
  raw.source_id = "cell";

  const Snippet snip = align_to_schema(raw, ChannelSchema::canonical());
  CHECK(snip.length == 128);
  CHECK(snip.channels == 8);
  for (int ch = 0; ch < 3; ++ch) CHECK(snip.has_channel(ch));
  for (int ch = 3; ch < 8; ++ch) CHECK_FALSE(snip.has_channel(ch));
  // endpoints preserved
  CHECK(snip.at(0, kVoltage) == doctest::Approx(3.2));
  CHECK(snip.at(127, kVoltage) == doctest::Approx(4.1));
  // absent channels zero-forced
  for (int t = 0; t < snip.length; ++t) {
    for (int ch = 3; ch < 8; ++ch) CHECK(snip.at(t, ch) == 0.0);
  }
}

TEST_CASE("align_to_schema is the identity on a matching grid") {
  RawSnippet raw;
  const auto& schema = ChannelSchema::canonical();
  for (int ch = 0; ch < 8; ++ch) raw.series[schema.names[static_cast<std::size_t>(ch)]] = ramp(128, ch, ch + 1.0);
  const Snippet snip = align_to_schema(raw, schema);
  for (int t = 0; t < 128; ++t) {
    for (int ch = 0; ch < 8; ++ch) {
      CHECK(snip.at(t, ch) == raw.series.at(schema.names[static_cast<std::size_t>(ch)])[static_cast<std::size_t>(t)]);
    }
  }
}

TEST_CASE("align_to_schema voltage-only snippet keeps exactly one channel") {
  RawSnippet raw;
  raw.series["voltage"] = ramp(50, 3.0, 4.2);
  const Snippet snip = align_to_schema(raw, ChannelSchema::canonical());
  int provided = 0;
  for (int ch = 0; ch < snip.channels; ++ch) provided += snip.has_channel(ch) ? 1 : 0;
  CHECK(provided == 1);
  CHECK(snip.has_channel(kVoltage));
}

TEST_CASE("align_to_schema fills the mileage channel from metadata") {
  RawSnippet raw;
  raw.series["voltage"] = ramp(40, 3.0, 4.0);
  raw.cycle_or_mileage = 42.0;
  const Snippet snip = align_to_schema(raw, ChannelSchema::canonical());
  CHECK(snip.cycle_or_mileage == 42.0);
  CHECK(snip.has_channel(kMileage));
  for (int t = 0; t < snip.length; ++t) CHECK(snip.at(t, kMileage) == 42.0);
}

TEST_CASE("align_to_schema rejects unknown channels and degenerate series") {
  RawSnippet unknown;
  unknown.series["temperature"] = ramp(10, 0, 1);
  CHECK_THROWS_AS(align_to_schema(unknown, ChannelSchema::canonical()), SchemaError);

  RawSnippet degenerate;
  degenerate.series["voltage"] = {3.7};
  CHECK_THROWS_AS(align_to_schema(degenerate, ChannelSchema::canonical()),
                  DegenerateInputError);

  RawSnippet empty;
  CHECK_THROWS_AS(align_to_schema(empty, ChannelSchema::canonical()), SchemaError);
}

TEST_CASE("align_to_schema is idempotent on its own output") {
  RawSnippet raw;
  raw.series["voltage"] = ramp(77, 3.1, 4.0);
  raw.series["soc"] = ramp(77, 0.2, 0.9);
  const Snippet first = align_to_schema(raw, ChannelSchema::canonical());

  RawSnippet again;
  const auto& schema = ChannelSchema::canonical();
  for (int ch = 0; ch < first.channels; ++ch) {
    if (!first.has_channel(ch)) continue;
    std::vector<double> series(static_cast<std::size_t>(first.length));
    for (int t = 0; t < first.length; ++t) series[static_cast<std::size_t>(t)] = first.at(t, ch);
    again.series[schema.names[static_cast<std::size_t>(ch)]] = series;
  }
  const Snippet second = align_to_schema(again, schema);
  CHECK(second.values == first.values);
  CHECK(second.present == first.present);
}

TEST_CASE("validate_group reports size and source violations") {
  SnippetGroup good;
  good.source_id = "v1";
  for (int i = 0; i < 5; ++i) {
    Snippet s = Snippet::zeros(8, 3);
    s.source_id = "v1";
    good.snippets.push_back(s);
  }
  CHECK(validate_group(good, 5).ok());

  SnippetGroup mixed = good;
  mixed.snippets[2].source_id = "v2";
  const auto mixed_report = validate_group(mixed, 5);
  REQUIRE_FALSE(mixed_report.ok());
  CHECK(mixed_report.violations.front().find("mixed sources") != std::string::npos);

  SnippetGroup short_group = good;
  short_group.snippets.pop_back();
  const auto size_report = validate_group(short_group, 5);
  REQUIRE_FALSE(size_report.ok());
  CHECK(size_report.violations.front().find("group size") != std::string::npos);
}
