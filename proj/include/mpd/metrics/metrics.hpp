#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/env/dataset.hpp"
#include "mpd/env/environment.hpp"
#include "mpd/error.hpp"
#include "mpd/policy/policy.hpp"

namespace mpd::metrics {

// Central difference of the given order along the rows of `series` (one row per
// sample). Only interior rows are returned: rows 1..N-2 for orders 1 and 2,
// rows 2..N-3 for order 3.
inline Eigen::MatrixXd finite_difference(const Eigen::MatrixXd& series, int order, double dt) {
  if (order < 1 || order > 3) throw ConfigError("finite difference order must be 1, 2 or 3");
  if (!(dt > 0.0)) throw ConfigError("finite difference dt must be > 0");
  const Eigen::Index half = order == 3 ? 2 : 1;
  const Eigen::Index n = series.rows();
  if (n <= order || n < 2 * half + 1)
    throw ContractError("series of " + std::to_string(n) + " samples is too short for order " + std::to_string(order));
  const Eigen::Index m = n - 2 * half;
  auto x = [&](Eigen::Index shift) { return series.middleRows(half + shift, m); };
  switch (order) {
    case 1: return (x(1) - x(-1)) / (2.0 * dt);
    case 2: return (x(1) - 2.0 * x(0) + x(-1)) / (dt * dt);
    default: return (x(2) - 2.0 * x(1) + 2.0 * x(-1) - x(-2)) / (2.0 * dt * dt * dt);
  }
}

struct MetricsReport {
  double object_acceleration = 0.0;
  double instrument_jerk = 0.0;
  double instrument_energy = 0.0;
  double path_length = 0.0;
  double episode_length = 0.0;

  static constexpr std::array<const char*, 5> kNames{"object_acceleration", "instrument_jerk", "instrument_energy",
                                                     "path_length", "episode_length"};
  std::array<double, 5> values() const {
    return {object_acceleration, instrument_jerk, instrument_energy, path_length, episode_length};
  }
  static MetricsReport from_values(const std::array<double, 5>& v) { return {v[0], v[1], v[2], v[3], v[4]}; }
};

struct MetricsConfig {
  int point_dim = 2;            // coordinates per instrument / tracked point
  bool squared_energy = false;  // sum of squared acceleration norms instead of norms
};

namespace detail {

// Euclidean norm of every point_dim block of every row.
inline Eigen::MatrixXd point_norms(const Eigen::MatrixXd& m, int point_dim) {
  if (point_dim < 1 || m.cols() % point_dim != 0)
    throw DimensionError("columns are not a whole number of " + std::to_string(point_dim) + "-d points");
  const Eigen::Index points = m.cols() / point_dim;
  Eigen::MatrixXd out(m.rows(), points);
  for (Eigen::Index p = 0; p < points; ++p) out.col(p) = m.middleCols(p * point_dim, point_dim).rowwise().norm();
  return out;
}

}  // namespace detail

// Instrument metrics come from the commanded stream, object acceleration from
// the tracked points. Jerk and acceleration are means over interior samples and
// points; energy and path length are sums over samples and instruments.
inline MetricsReport motion_metrics(const env::ExecutionTrace& exec, double episode_length, const MetricsConfig& cfg = {}) {
  if (exec.size() == 0) throw ContractError("cannot compute metrics of an empty trace");
  if (exec.tracked.rows() != exec.size()) throw ContractError("trace command and tracked rows differ");
  MetricsReport r;
  r.episode_length = episode_length;
  const Eigen::Index n = exec.size();
  if (n >= 2)
    r.path_length = detail::point_norms(exec.commands.bottomRows(n - 1) - exec.commands.topRows(n - 1), cfg.point_dim).sum();
  if (n >= 3) {
    const Eigen::MatrixXd acc = detail::point_norms(finite_difference(exec.commands, 2, exec.dt), cfg.point_dim);
    r.instrument_energy = cfg.squared_energy ? acc.squaredNorm() : acc.sum();
    if (exec.tracked.cols() > 0)
      r.object_acceleration = detail::point_norms(finite_difference(exec.tracked, 2, exec.dt), cfg.point_dim).mean();
  }
  if (n >= 5) r.instrument_jerk = detail::point_norms(finite_difference(exec.commands, 3, exec.dt), cfg.point_dim).mean();
  return r;
}

// Metrics of the rollout as if it had stopped on reaching `threshold`; the
// episode length is that time, or max_steps * dt_low on failure.
inline MetricsReport motion_metrics(const policy::RolloutTrace& trace, double dt_low, int max_steps, double threshold,
                                    const MetricsConfig& cfg = {}) {
  const int steps = trace.steps_within(threshold);
  if (steps < 0) return motion_metrics(trace.exec, max_steps * dt_low, cfg);
  const Eigen::Index sub = std::lround(dt_low / trace.exec.dt);
  const Eigen::Index rows = std::min<Eigen::Index>(trace.exec.size(), steps * sub);
  const env::ExecutionTrace head{trace.exec.dt, trace.exec.commands.topRows(rows), trace.exec.tracked.topRows(rows)};
  return motion_metrics(head, steps * dt_low, cfg);
}

// A demonstration counts its recorded steps as the time to completion.
inline MetricsReport motion_metrics(const env::Episode& episode, const env::ExecutionTrace& exec,
                                    const MetricsConfig& cfg = {}) {
  return motion_metrics(exec, static_cast<double>(episode.actions.rows()) * episode.dt, cfg);
}

struct Aggregate {
  MetricsReport mean;
  MetricsReport min;
  MetricsReport max;
};

inline Aggregate aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractError("cannot aggregate zero metric reports");
  std::array<double, 5> sum{}, lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& r : reports) {
    const auto v = r.values();
    for (size_t i = 0; i < v.size(); ++i) {
      sum[i] += v[i];
      lo[i] = std::min(lo[i], v[i]);
      hi[i] = std::max(hi[i], v[i]);
    }
  }
  for (double& s : sum) s /= static_cast<double>(reports.size());
  return {MetricsReport::from_values(sum), MetricsReport::from_values(lo), MetricsReport::from_values(hi)};
}

// Ratio to a reference. Where the reference is zero the absolute value is
// kept and the field is flagged.
struct NormalizedReport {
  MetricsReport ratio;
  std::array<bool, 5> absolute{};
};

inline NormalizedReport normalize_report(const MetricsReport& report, const MetricsReport& reference) {
  const auto v = report.values();
  const auto ref = reference.values();
  std::array<double, 5> out{};
  NormalizedReport n;
  for (size_t i = 0; i < v.size(); ++i) {
    n.absolute[i] = ref[i] == 0.0;
    out[i] = n.absolute[i] ? std::abs(v[i]) : v[i] / ref[i];
  }
  n.ratio = MetricsReport::from_values(out);
  return n;
}

struct MetricsRow {
  std::string label;
  MetricsReport report;
  NormalizedReport normalized;
};

// Rows per rollout followed by mean/min/max rows over the per-rollout rows.
inline std::vector<MetricsRow> metrics_table(const std::vector<MetricsReport>& reports, const MetricsReport& reference,
                                             const std::string& prefix = "rollout_") {
  std::vector<MetricsRow> rows;
  for (size_t i = 0; i < reports.size(); ++i)
    rows.push_back({prefix + std::to_string(i), reports[i], normalize_report(reports[i], reference)});
  if (reports.empty()) return rows;
  const Aggregate a = aggregate(reports);
  std::vector<MetricsReport> ratios;
  for (size_t i = 0; i < reports.size(); ++i) ratios.push_back(rows[i].normalized.ratio);
  const Aggregate an = aggregate(ratios);
  const NormalizedReport flags = normalize_report(a.mean, reference);
  rows.push_back({"mean", a.mean, {an.mean, flags.absolute}});
  rows.push_back({"min", a.min, {an.min, flags.absolute}});
  rows.push_back({"max", a.max, {an.max, flags.absolute}});
  return rows;
}

inline void write_metrics_csv(const std::filesystem::path& file, const std::vector<MetricsRow>& rows) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write metrics " + file.string());
  out << "label";
  for (const char* n : MetricsReport::kNames) out << ',' << n;
  for (const char* n : MetricsReport::kNames) out << ",normalized_" << n;
  for (const char* n : MetricsReport::kNames) out << ",absolute_" << n;
  out << '\n';
  for (const auto& r : rows) {
    out << r.label;
    for (double v : r.report.values()) out << ',' << env::format_number(v);
    for (double v : r.normalized.ratio.values()) out << ',' << env::format_number(v);
    for (bool b : r.normalized.absolute) out << ',' << (b ? 1 : 0);
    out << '\n';
  }
}

}  // namespace mpd::metrics
