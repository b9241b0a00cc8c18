#include "fmae/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace fmae {

std::vector<std::string> Corpus::sources() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& s : snippets) {
    if (seen.insert(s.source_id).second) out.push_back(s.source_id);
  }
  return out;
}

std::vector<int> Corpus::indices_of(const std::string& source_id) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < snippets.size(); ++i) {
    if (snippets[i].source_id == source_id) out.push_back(static_cast<int>(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic fleet
// ---------------------------------------------------------------------------

namespace {

// Monotone cubic open-circuit voltage, 3.0 V at SoC 0 to 4.2 V at SoC 1.
double ocv(double soc) { return 3.0 + 1.2 * (0.75 * soc + 0.25 * soc * soc * soc); }

struct SourceTraits {
  double alpha = 0.0;
  double beta = 1.0;
  double r0 = 0.0;       // fresh internal resistance [ohm]
  double i_base = 0.0;   // charging current scale [A]
  double r_growth = 5.0;
  bool anomalous = false;

  double soh_at(double k) const { return std::max(0.55, 1.0 - alpha * std::pow(k, beta)); }
  double resistance_at(double k) const { return r0 * (1.0 + r_growth * (1.0 - soh_at(k))); }
  double eol_cycle() const { return std::pow(0.2 / alpha, 1.0 / beta); }
};

}  // namespace

Corpus generate_synthetic_fleet(const SyntheticFleetConfig& cfg) {
  if (cfg.anomaly_fraction < 0 || cfg.anomaly_fraction >= 1) {
    throw ContractError("synthetic fleet: anomaly fraction must lie in [0, 1)");
  }
  if (cfg.kind != "ev" && cfg.kind != "bess" && cfg.kind != "lab") {
    throw ContractError("synthetic fleet: kind must be ev, bess or lab");
  }
  Rng rng(cfg.seed);
  const bool lab = cfg.kind == "lab";
  const int raw_len = 160;  // generated series length before alignment

  const int n_anomalous =
      static_cast<int>(std::llround(cfg.anomaly_fraction * cfg.n_sources));
  std::vector<int> anomalous_ids =
      rng.sample_without_replacement(cfg.n_sources, n_anomalous);

  Corpus corpus;
  for (int src = 0; src < cfg.n_sources; ++src) {
    SourceTraits traits;
    traits.alpha = rng.uniform(cfg.fade_rate_lo, cfg.fade_rate_hi);
    traits.beta = rng.uniform(cfg.fade_exponent_lo, cfg.fade_exponent_hi);
    traits.r_growth = cfg.r_growth;
    traits.anomalous = std::binary_search(anomalous_ids.begin(), anomalous_ids.end(), src);
    if (cfg.kind == "ev") {
      traits.r0 = rng.uniform(2.2e-3, 2.8e-3);
      traits.i_base = rng.uniform(40.0, 50.0);
    } else if (cfg.kind == "bess") {
      traits.r0 = rng.uniform(1.0e-3, 1.6e-3);
      traits.i_base = rng.uniform(0.2, 0.4) * 189.0;
    } else {
      traits.r0 = rng.uniform(0.028, 0.032);
      traits.i_base = rng.uniform(1.8, 2.2);
    }

    char src_name[32];
    std::snprintf(src_name, sizeof(src_name), "%s%02d", cfg.kind.c_str(), src);

    for (int snip_idx = 0; snip_idx < cfg.snippets_per_source; ++snip_idx) {
      const double cycle = static_cast<double>((snip_idx + 1) * cfg.cycle_step);
      const double soh = traits.soh_at(cycle);
      const double resistance = traits.resistance_at(cycle);

      // Lab protocols cycle a fixed SoC window; field data charges from
      // whatever state the vehicle arrived in.
      const double soc0 = lab ? 0.12 + rng.normal() * 0.005 : rng.uniform(0.10, 0.30);
      const double soc1 = lab ? 0.88 + rng.normal() * 0.005 : rng.uniform(0.78, 0.92);

      RawSnippet raw;
      raw.source_id = src_name;
      char snip_name[64];
      std::snprintf(snip_name, sizeof(snip_name), "%s_s%04d", src_name, snip_idx);
      raw.snippet_id = snip_name;

      std::vector<double> v(raw_len), i_series(raw_len), soc(raw_len);
      std::vector<double> vmax(raw_len), vmin(raw_len), tmax(raw_len), tmin(raw_len);
      for (int t = 0; t < raw_len; ++t) {
        const double u = static_cast<double>(t) / (raw_len - 1);
        const double s = soc0 + (soc1 - soc0) * u;
        soc[t] = s;

        double current = traits.i_base;
        if (cfg.kind == "ev") {
          // zig-zag around the base current
          current *= (t / 8) % 2 == 0 ? 1.12 : 0.88;
        }
        if (s > 0.8) current *= std::exp(-6.0 * (s - 0.8));  // CV taper
        i_series[t] = current + rng.normal() * 0.01 * traits.i_base;

        v[t] = ocv(s) + i_series[t] * resistance + rng.normal() * cfg.voltage_noise;

        const double spread =
            (cfg.spread_base * (1.0 + 4.0 * (1.0 - soh)) +
             rng.normal() * cfg.spread_noise) *
            (traits.anomalous ? cfg.anomaly_spread_factor : 1.0);
        vmax[t] = v[t] + std::abs(spread) / 2.0;
        vmin[t] = v[t] - std::abs(spread) / 2.0;

        const double temp = 25.0 + 8.0 * i_series[t] / traits.i_base + 3.0 * u;
        const double tspread = 2.0 + 7.5 * (1.0 - soh) + rng.normal() * 0.2;
        tmax[t] = temp + std::abs(tspread) / 2.0 + rng.normal() * 0.1;
        tmin[t] = temp - std::abs(tspread) / 2.0 + rng.normal() * 0.1;
      }

      raw.series["voltage"] = std::move(v);
      raw.series["current"] = std::move(i_series);
      raw.series["soc"] = std::move(soc);
      if (!lab) {
        raw.series["vmax"] = std::move(vmax);
        raw.series["vmin"] = std::move(vmin);
        raw.series["tmax"] = std::move(tmax);
        raw.series["tmin"] = std::move(tmin);
      }
      // Lab cells carry the cycle number; vehicles carry the odometer.
      raw.cycle_or_mileage = cfg.kind == "ev" ? cycle * 15.0 : cycle;

      corpus.snippets.push_back(align_to_schema(raw, ChannelSchema::canonical()));

      LabelSet label;
      label.soh = soh;
      label.ir_mohm = resistance * 1000.0;
      label.anomaly = traits.anomalous;
      label.rul_cycles =
          static_cast<int>(std::max<long long>(0, std::llround(traits.eol_cycle() - cycle)));
      corpus.labels.push_back(label);
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Normalizer
// ---------------------------------------------------------------------------

Normalizer Normalizer::fit(const Corpus& corpus) {
  if (corpus.snippets.empty()) throw ContractError("normalizer: empty corpus");
  const int c = corpus.snippets.front().channels;
  Normalizer norm;
  norm.mean.assign(static_cast<std::size_t>(c), 0.0);
  norm.stddev.assign(static_cast<std::size_t>(c), 1.0);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (const auto& snip : corpus.snippets) {
      if (!snip.has_channel(ch)) continue;
      for (int t = 0; t < snip.length; ++t) {
        const double v = snip.at(t, ch);
        sum += v;
        sum_sq += v * v;
        ++count;
      }
    }
    if (count == 0) continue;  // absent everywhere: mean 0, sigma 1
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean);
    norm.mean[static_cast<std::size_t>(ch)] = mean;
    norm.stddev[static_cast<std::size_t>(ch)] = std::max(std::sqrt(var), 1e-6);
  }
  return norm;
}

Snippet Normalizer::apply(const Snippet& snippet) const {
  if (static_cast<std::size_t>(snippet.channels) != mean.size()) {
    throw ContractError("normalizer: channel count mismatch");
  }
  Snippet out = snippet;
  for (int ch = 0; ch < snippet.channels; ++ch) {
    if (!snippet.has_channel(ch)) continue;
    for (int t = 0; t < snippet.length; ++t) {
      double z = (snippet.at(t, ch) - mean[static_cast<std::size_t>(ch)]) /
                 stddev[static_cast<std::size_t>(ch)];
      z = std::clamp(z, -clamp_sigma, clamp_sigma);
      out.at(t, ch) = z;
    }
  }
  return out;
}

double Normalizer::invert(double normalized, int channel) const {
  return normalized * stddev.at(static_cast<std::size_t>(channel)) +
         mean.at(static_cast<std::size_t>(channel));
}

Corpus Normalizer::apply_all(const Corpus& corpus) const {
  Corpus out;
  out.labels = corpus.labels;
  out.snippets.reserve(corpus.snippets.size());
  for (const auto& s : corpus.snippets) out.snippets.push_back(apply(s));
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation folds
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> split_into_folds(std::vector<std::string> sources, int k,
                                                       Rng& rng) {
  // deterministic shuffle
  for (std::size_t i = sources.size(); i > 1; --i) {
    const auto j = rng.uniform_index(i);
    std::swap(sources[i - 1], sources[j]);
  }
  std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < sources.size(); ++i) {
    folds[i % static_cast<std::size_t>(k)].push_back(sources[i]);
  }
  return folds;
}

}  // namespace

FoldPlan make_cv_folds(const std::vector<std::string>& sources,
                       const std::map<std::string, bool>& anomaly_by_source, bool anomaly_task,
                       Rng& rng, int k) {
  FoldPlan plan;
  plan.k = k;
  plan.anomaly = anomaly_task;
  if (!anomaly_task) {
    if (static_cast<int>(sources.size()) < k) {
      throw ContractError("make_cv_folds: need at least " + std::to_string(k) + " sources");
    }
    plan.folds = split_into_folds(sources, k, rng);
    return plan;
  }
  std::vector<std::string> normal, faulty;
  for (const auto& s : sources) {
    const auto it = anomaly_by_source.find(s);
    if (it == anomaly_by_source.end()) {
      throw ContractError("make_cv_folds: source '" + s + "' has no anomaly label");
    }
    (it->second ? faulty : normal).push_back(s);
  }
  if (static_cast<int>(normal.size()) < k || static_cast<int>(faulty.size()) < k) {
    throw ContractError("make_cv_folds: anomaly split needs >= " + std::to_string(k) +
                        " normal and faulty sources");
  }
  plan.normal_folds = split_into_folds(normal, k, rng);
  plan.faulty_folds = split_into_folds(faulty, k, rng);
  return plan;
}

std::vector<FoldPlan::Round> FoldPlan::rounds() const {
  std::vector<Round> out;
  for (int r = 0; r < k; ++r) {
    Round round;
    if (!anomaly) {
      for (int f = 0; f < k; ++f) {
        const auto& fold = folds[static_cast<std::size_t>(f)];
        auto& dst = f == r ? round.eval_sources : round.train_sources;
        dst.insert(dst.end(), fold.begin(), fold.end());
      }
    } else {
      // train: 4 normal folds + 1 faulty fold; eval: 1 normal + 4 faulty
      for (int f = 0; f < k; ++f) {
        const auto& nf = normal_folds[static_cast<std::size_t>(f)];
        auto& ndst = f == r ? round.eval_sources : round.train_sources;
        ndst.insert(ndst.end(), nf.begin(), nf.end());
        const auto& ff = faulty_folds[static_cast<std::size_t>(f)];
        auto& fdst = f == r ? round.train_sources : round.eval_sources;
        fdst.insert(fdst.end(), ff.begin(), ff.end());
      }
    }
    out.push_back(std::move(round));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kSnippetHeader =
    "snippet_id,source_id,t_index,voltage,current,soc,vmax,vmin,tmax,tmin,mileage";
constexpr const char* kLabelHeader = "snippet_id,soh,ir_mohm,anomaly,rul_cycles,cycle_number";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  return out;
}

double parse_double_field(const std::string& field, const std::string& path, std::size_t line_no,
                          const std::string& column) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw IoError(path + ":" + std::to_string(line_no) + ": cannot parse '" + field +
                  "' as a number in column '" + column + "'");
  }
  return value;
}

}  // namespace

void write_corpus_csv(const Corpus& corpus, const std::string& snippet_path,
                      const std::string& label_path) {
  std::ofstream snip_file(snippet_path);
  if (!snip_file) throw IoError("cannot open '" + snippet_path + "' for writing");
  snip_file << kSnippetHeader << "\n";
  const auto& schema = ChannelSchema::canonical();
  for (const auto& snip : corpus.snippets) {
    for (int t = 0; t < snip.length; ++t) {
      snip_file << snip.snippet_id << ',' << snip.source_id << ',' << t;
      for (int ch = 0; ch < schema.channel_count(); ++ch) {
        snip_file << ',';
        if (snip.has_channel(ch)) snip_file << format_double(snip.at(t, ch));
      }
      snip_file << '\n';
    }
  }
  if (!snip_file.flush()) throw IoError("failed writing '" + snippet_path + "'");

  std::ofstream label_file(label_path);
  if (!label_file) throw IoError("cannot open '" + label_path + "' for writing");
  label_file << kLabelHeader << "\n";
  for (std::size_t i = 0; i < corpus.snippets.size(); ++i) {
    const auto& snip = corpus.snippets[i];
    const LabelSet label = i < corpus.labels.size() ? corpus.labels[i] : LabelSet{};
    label_file << snip.snippet_id << ',';
    if (label.soh) label_file << format_double(*label.soh);
    label_file << ',';
    if (label.ir_mohm) label_file << format_double(*label.ir_mohm);
    label_file << ',';
    if (label.anomaly) label_file << (*label.anomaly ? 1 : 0);
    label_file << ',';
    if (label.rul_cycles) label_file << *label.rul_cycles;
    label_file << ',' << format_double(snip.cycle_or_mileage) << '\n';
  }
  if (!label_file.flush()) throw IoError("failed writing '" + label_path + "'");
}

LoadResult load_dataset(const std::string& snippet_path, const std::string& label_path) {
  const auto& schema = ChannelSchema::canonical();
  std::ifstream snip_file(snippet_path);
  if (!snip_file) throw IoError("cannot open '" + snippet_path + "'");

  std::string line;
  if (!std::getline(snip_file, line)) throw IoError(snippet_path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "snippet_id" || header[1] != "source_id" ||
      header[2] != "t_index") {
    throw IoError(snippet_path + ":1: expected header starting with snippet_id,source_id,t_index");
  }
  std::vector<int> column_channel(header.size(), -1);
  for (std::size_t col = 3; col < header.size(); ++col) {
    const int ch = schema.index_of(header[col]);
    if (ch < 0) throw IoError(snippet_path + ":1: unknown channel column '" + header[col] + "'");
    column_channel[col] = ch;
  }

  // Accumulate raw series per snippet, in file order. t_index must increase
  // strictly within one snippet id; a restart marks a duplicated id.
  struct Accum {
    RawSnippet raw;
    double last_t = -1.0;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, Accum> by_id;
  std::size_t line_no = 1;
  while (std::getline(snip_file, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IoError(snippet_path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " fields, got " +
                    std::to_string(fields.size()));
    }
    auto it = by_id.find(fields[0]);
    if (it == by_id.end()) {
      it = by_id.emplace(fields[0], Accum{}).first;
      it->second.raw.snippet_id = fields[0];
      it->second.raw.source_id = fields[1];
      order.push_back(fields[0]);
    }
    const double t_index = parse_double_field(fields[2], snippet_path, line_no, "t_index");
    if (t_index <= it->second.last_t) {
      throw IoError(snippet_path + ":" + std::to_string(line_no) + ": duplicate snippet_id '" +
                    fields[0] + "' (t_index restarted)");
    }
    it->second.last_t = t_index;
    for (std::size_t col = 3; col < fields.size(); ++col) {
      if (fields[col].empty()) continue;  // missing channel sample
      const double v = parse_double_field(fields[col], snippet_path, line_no, header[col]);
      it->second.raw.series[schema.names[static_cast<std::size_t>(column_channel[col])]]
          .push_back(v);
    }
  }

  LoadResult result;
  for (const auto& id : order) {
    auto& accum = by_id.at(id);
    result.corpus.snippets.push_back(align_to_schema(accum.raw, schema));
    result.corpus.labels.emplace_back();
  }

  std::unordered_map<std::string, std::size_t> index_by_id;
  for (std::size_t i = 0; i < result.corpus.snippets.size(); ++i) {
    index_by_id[result.corpus.snippets[i].snippet_id] = i;
  }

  std::ifstream label_file(label_path);
  if (!label_file) throw IoError("cannot open '" + label_path + "'");
  if (!std::getline(label_file, line)) throw IoError(label_path + ": empty file");
  if (split_csv_line(line) != split_csv_line(kLabelHeader)) {
    throw IoError(label_path + ":1: unexpected label header");
  }
  line_no = 1;
  while (std::getline(label_file, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 6) {
      throw IoError(label_path + ":" + std::to_string(line_no) + ": expected 6 fields");
    }
    const auto it = index_by_id.find(fields[0]);
    if (it == index_by_id.end()) {
      result.warnings.push_back(label_path + ":" + std::to_string(line_no) +
                                ": label for unknown snippet '" + fields[0] + "'");
      continue;
    }
    LabelSet& label = result.corpus.labels[it->second];
    Snippet& snip = result.corpus.snippets[it->second];
    if (!fields[1].empty()) label.soh = parse_double_field(fields[1], label_path, line_no, "soh");
    if (!fields[2].empty()) {
      label.ir_mohm = parse_double_field(fields[2], label_path, line_no, "ir_mohm");
    }
    if (!fields[3].empty()) {
      label.anomaly = parse_double_field(fields[3], label_path, line_no, "anomaly") != 0.0;
    }
    if (!fields[4].empty()) {
      label.rul_cycles = static_cast<int>(
          std::llround(parse_double_field(fields[4], label_path, line_no, "rul_cycles")));
    }
    if (!fields[5].empty()) {
      const double cycle = parse_double_field(fields[5], label_path, line_no, "cycle_number");
      if (!snip.has_channel(kMileage)) {
        snip.cycle_or_mileage = cycle;
        for (int t = 0; t < snip.length; ++t) snip.at(t, kMileage) = cycle;
        snip.present[kMileage] = 1;
      }
    }
  }
  return result;
}

}  // namespace fmae
