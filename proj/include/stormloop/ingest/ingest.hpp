#pragma once

// External data: scripted weather forecasts and a replayed reference stream
// gauge. Both end up in the datastore as ordinary series.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/datastore/datastore.hpp"

namespace stormloop::ingest {

inline const SeriesKey kForecastProbability{"ext", "precip_prob"};
inline const SeriesKey kForecastIntensity{"ext", "precip_mmh"};

struct ForecastRecord {
  TimeMs valid_at = 0;
  double precip_probability = 0.0;
  double intensity_mmh = 0.0;
  double horizon_min = 60.0;

  bool valid() const {
    return precip_probability >= 0.0 && precip_probability <= 1.0 && intensity_mmh >= 0.0 &&
           std::isfinite(intensity_mmh);
  }
};

struct IngestResult {
  std::size_t written = 0;
  std::size_t rejected = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  return cells;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

}  // namespace detail

/// Reads `timestamp,probability,intensity_mmh`. Malformed rows are counted, not fatal.
inline std::vector<ForecastRecord> read_forecast_csv(std::istream& in, std::size_t* rejected = nullptr) {
  std::vector<ForecastRecord> out;
  std::string line;
  std::size_t bad = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (header) {
      header = false;
      if (line.rfind("timestamp", 0) == 0) continue;
    }
    const auto cells = detail::split_csv_line(line);
    ForecastRecord r;
    try {
      if (cells.size() != 3) throw ParseError(0, "column count");
      r.valid_at = parse_iso8601(cells[0]);
      if (!detail::parse_double(cells[1], r.precip_probability) || !detail::parse_double(cells[2], r.intensity_mmh)) {
        throw ParseError(0, "number");
      }
    } catch (const ParseError&) {
      ++bad;
      continue;
    }
    out.push_back(r);
  }
  if (rejected) *rejected += bad;
  return out;
}

/// Writes each valid record as two points (probability and intensity).
inline IngestResult ingest_forecast(const std::vector<ForecastRecord>& records, store::Datastore& ds) {
  IngestResult res;
  std::vector<Point> points;
  for (const auto& r : records) {
    if (!r.valid()) {
      ++res.rejected;
      continue;
    }
    points.push_back({kForecastProbability, r.valid_at, r.precip_probability});
    points.push_back({kForecastIntensity, r.valid_at, r.intensity_mmh});
  }
  res.written = ds.write_points(points).written;
  return res;
}

inline IngestResult ingest_forecast_file(const std::string& path, store::Datastore& ds) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open forecast file '" + path + "'");
  std::size_t rejected = 0;
  auto records = read_forecast_csv(in, &rejected);
  IngestResult res = ingest_forecast(records, ds);
  res.rejected += rejected;
  return res;
}

struct GaugeSample {
  TimeMs timestamp = 0;
  double flow_cms = 0.0;
};

struct ReferenceGauge {
  std::string station_id;
  std::vector<GaugeSample> samples;

  SeriesKey series() const { return {"usgs_" + station_id, "flow_cms"}; }
};

/// Reads `timestamp,flow_cms` with ISO-8601 UTC timestamps. Rows must be
/// strictly increasing in time; any bad row is an error (fixtures are curated).
inline ReferenceGauge read_gauge_csv(std::istream& in, std::string station_id) {
  ReferenceGauge g{std::move(station_id), {}};
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("timestamp", 0) == 0) continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 2) throw ParseError(lineno, "expected timestamp,flow_cms");
    GaugeSample s;
    try {
      s.timestamp = parse_iso8601(cells[0]);
    } catch (const ParseError& e) {
      throw ParseError(lineno, e.what());
    }
    if (!detail::parse_double(cells[1], s.flow_cms) || s.flow_cms < 0.0) throw ParseError(lineno, "bad flow value");
    if (!g.samples.empty() && s.timestamp <= g.samples.back().timestamp) {
      throw ParseError(lineno, "timestamps must be strictly increasing");
    }
    g.samples.push_back(s);
  }
  return g;
}

inline ReferenceGauge read_gauge_file(const std::string& path, std::string station_id) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open gauge file '" + path + "'");
  return read_gauge_csv(in, std::move(station_id));
}

inline std::string write_gauge_csv(const ReferenceGauge& g) {
  std::ostringstream out;
  out << "timestamp,flow_cms\n";
  for (const auto& s : g.samples) out << format_iso8601(s.timestamp) << ',' << telemetry::format_decimal(s.flow_cms) << '\n';
  return out.str();
}

inline std::size_t ingest_gauge(const ReferenceGauge& g, store::Datastore& ds) {
  std::vector<Point> pts;
  pts.reserve(g.samples.size());
  for (const auto& s : g.samples) pts.push_back({g.series(), s.timestamp, s.flow_cms});
  return ds.write_points(pts).written;
}

struct ValidationMetrics {
  double rmse = 0.0;
  double peak_error = 0.0;    // |sim peak - ref peak| / ref peak
  double volume_error = 0.0;  // |sim volume - ref volume| / ref volume
  std::size_t samples = 0;
};

/// Linear interpolation of (t, v) pairs sorted by t; clamps outside the range.
inline double interpolate(const std::vector<GaugeSample>& series, TimeMs t) {
  if (series.empty()) throw DomainError("interpolate: empty series");
  if (t <= series.front().timestamp) return series.front().flow_cms;
  if (t >= series.back().timestamp) return series.back().flow_cms;
  auto it = std::lower_bound(series.begin(), series.end(), t,
                             [](const GaugeSample& s, TimeMs x) { return s.timestamp < x; });
  if (it->timestamp == t) return it->flow_cms;
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double w = static_cast<double>(t - a.timestamp) / static_cast<double>(b.timestamp - a.timestamp);
  return a.flow_cms + w * (b.flow_cms - a.flow_cms);
}

/// Compares a simulated series with a reference on the reference's own
/// timestamps inside [window_start, window_end]. Volumes are trapezoidal.
inline ValidationMetrics validate_against_reference(const std::vector<GaugeSample>& simulated,
                                                    const std::vector<GaugeSample>& reference, TimeMs window_start,
                                                    TimeMs window_end) {
  std::vector<GaugeSample> ref;
  for (const auto& s : reference) {
    if (s.timestamp >= window_start && s.timestamp <= window_end) ref.push_back(s);
  }
  if (simulated.empty() || ref.empty()) throw DomainError("validate_against_reference: empty overlap");
  const TimeMs lo = std::max(window_start, simulated.front().timestamp);
  const TimeMs hi = std::min(window_end, simulated.back().timestamp);
  std::erase_if(ref, [&](const GaugeSample& s) { return s.timestamp < lo || s.timestamp > hi; });
  if (ref.empty()) throw DomainError("validate_against_reference: empty overlap");

  ValidationMetrics m;
  m.samples = ref.size();
  double sq = 0.0, ref_peak = 0.0, sim_peak = 0.0, ref_vol = 0.0, sim_vol = 0.0;
  double prev_sim = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double sim = interpolate(simulated, ref[i].timestamp);
    sq += (sim - ref[i].flow_cms) * (sim - ref[i].flow_cms);
    ref_peak = std::max(ref_peak, ref[i].flow_cms);
    sim_peak = std::max(sim_peak, sim);
    if (i > 0) {
      const double dt = ms_to_seconds(ref[i].timestamp - ref[i - 1].timestamp);
      ref_vol += 0.5 * (ref[i].flow_cms + ref[i - 1].flow_cms) * dt;
      sim_vol += 0.5 * (sim + prev_sim) * dt;
    }
    prev_sim = sim;
  }
  m.rmse = std::sqrt(sq / static_cast<double>(ref.size()));
  m.peak_error = ref_peak > 0.0 ? std::abs(sim_peak - ref_peak) / ref_peak : std::abs(sim_peak);
  m.volume_error = ref_vol > 0.0 ? std::abs(sim_vol - ref_vol) / ref_vol : std::abs(sim_vol);
  return m;
}

}  // namespace stormloop::ingest
