#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mpd/error.hpp"

namespace mpd::env {

enum class DemoMode { kA, kB };

inline const char* to_string(DemoMode m) { return m == DemoMode::kA ? "A" : "B"; }

inline DemoMode demo_mode_from_string(const std::string& s) {
  if (s == "A" || s == "a") return DemoMode::kA;
  if (s == "B" || s == "b") return DemoMode::kB;
  throw DatasetError("unknown demonstrator mode '" + s + "'");
}

// One demonstration: observations and desired positions recorded at the low rate.
struct Episode {
  std::string task;
  double dt = 0.1;
  Eigen::MatrixXd observations;  // steps x obs_dim
  Eigen::MatrixXd actions;       // steps x k
  std::uint64_t seed = 0;
  DemoMode mode = DemoMode::kA;
  bool success = false;

  Eigen::Index steps() const { return actions.rows(); }

  void validate() const {
    if (!(dt > 0.0)) throw DatasetError("episode dt must be positive");
    if (observations.rows() != actions.rows())
      throw DatasetError("episode has " + std::to_string(observations.rows()) + " observations but " +
                         std::to_string(actions.rows()) + " actions");
    if (actions.rows() == 0) throw DatasetError("episode is empty");
    if (!observations.allFinite() || !actions.allFinite()) throw DatasetError("episode values are not finite");
  }

  bool operator==(const Episode& o) const {
    return task == o.task && dt == o.dt && seed == o.seed && mode == o.mode && success == o.success &&
           observations.rows() == o.observations.rows() && observations.cols() == o.observations.cols() &&
           actions.rows() == o.actions.rows() && actions.cols() == o.actions.cols() &&
           observations == o.observations && actions == o.actions;
  }
};

struct Dataset {
  std::string task;
  double dt = 0.1;
  int dof = 0;
  int obs_dim = 0;
  std::vector<Episode> episodes;

  int size() const { return static_cast<int>(episodes.size()); }

  void validate() const {
    for (const auto& e : episodes) {
      e.validate();
      if (e.task != task || e.dt != dt || e.actions.cols() != dof || e.observations.cols() != obs_dim)
        throw DatasetError("episode does not share the dataset's task, dt or dimensions");
    }
  }

  // First `count` episodes, in stored order.
  Dataset prefix(int count) const {
    if (count < 0 || count > size()) throw DatasetError("prefix larger than dataset");
    Dataset d = *this;
    d.episodes.resize(static_cast<size_t>(count));
    return d;
  }

  Eigen::MatrixXd stacked_actions() const { return stack(&Episode::actions, dof); }
  Eigen::MatrixXd stacked_observations() const { return stack(&Episode::observations, obs_dim); }

  bool operator==(const Dataset& o) const {
    return task == o.task && dt == o.dt && dof == o.dof && obs_dim == o.obs_dim && episodes == o.episodes;
  }

 private:
  Eigen::MatrixXd stack(Eigen::MatrixXd Episode::*field, int cols) const {
    Eigen::Index rows = 0;
    for (const auto& e : episodes) rows += (e.*field).rows();
    Eigen::MatrixXd out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& e : episodes) {
      out.middleRows(r, (e.*field).rows()) = e.*field;
      r += (e.*field).rows();
    }
    return out;
  }
};

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<double> column_extreme(const Eigen::MatrixXd& m, bool want_max) {
  std::vector<double> out(static_cast<size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] = want_max ? m.col(c).maxCoeff() : m.col(c).minCoeff();
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DatasetError("bad number '" + s + "' in " + where);
  return v;
}

}  // namespace detail

inline void write_episode_csv(const std::filesystem::path& file, const Episode& e) {
  std::ofstream out(file);
  if (!out) throw DatasetError("cannot write " + file.string());
  out << "time";
  for (Eigen::Index j = 0; j < e.observations.cols(); ++j) out << ",obs_" << j;
  for (Eigen::Index j = 0; j < e.actions.cols(); ++j) out << ",act_" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < e.steps(); ++i) {
    out << format_number(static_cast<double>(i) * e.dt);
    for (Eigen::Index j = 0; j < e.observations.cols(); ++j) out << ',' << format_number(e.observations(i, j));
    for (Eigen::Index j = 0; j < e.actions.cols(); ++j) out << ',' << format_number(e.actions(i, j));
    out << '\n';
  }
  if (!out) throw DatasetError("failed writing " + file.string());
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  ds.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "mpd-dataset-1";
  manifest["task"] = ds.task;
  manifest["dt"] = ds.dt;
  manifest["dof"] = ds.dof;
  manifest["obs_dim"] = ds.obs_dim;
  nlohmann::json list = nlohmann::json::array();
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    const auto& e = ds.episodes[i];
    char name[32];
    std::snprintf(name, sizeof name, "episode_%04zu.csv", i);
    write_episode_csv(dir / name, e);
    list.push_back({{"file", name}, {"seed", e.seed}, {"mode", to_string(e.mode)}, {"success", e.success},
                    {"steps", e.steps()}});
  }
  manifest["episodes"] = list;
  manifest["episode_count"] = ds.episodes.size();
  if (!ds.episodes.empty()) {
    const Eigen::MatrixXd a = ds.stacked_actions(), o = ds.stacked_observations();
    manifest["normalization"] = {{"act_min", detail::column_extreme(a, false)},
                                 {"act_max", detail::column_extreme(a, true)},
                                 {"obs_min", detail::column_extreme(o, false)},
                                 {"obs_max", detail::column_extreme(o, true)}};
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DatasetError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

inline Episode read_episode_csv(const std::filesystem::path& file, int obs_dim, int dof) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("empty episode file " + file.string());
  const size_t width = static_cast<size_t>(1 + obs_dim + dof);
  if (detail::split_csv(line).size() != width) throw DatasetError("header width mismatch in " + file.string());
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != width) throw DatasetError("row width mismatch in " + file.string());
    for (size_t c = 1; c < width; ++c) values.push_back(detail::parse_number(cells[c], file.string()));
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(values.size() / (width - 1));
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::MatrixXd all = Eigen::Map<const RowMajor>(values.data(), rows, static_cast<Eigen::Index>(width - 1));
  Episode e;
  e.observations = all.leftCols(obs_dim);
  e.actions = all.rightCols(dof);
  return e;
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DatasetError("no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    in >> m;
    Dataset ds;
    ds.task = m.at("task").get<std::string>();
    ds.dt = m.at("dt").get<double>();
    ds.dof = m.at("dof").get<int>();
    ds.obs_dim = m.at("obs_dim").get<int>();
    for (const auto& item : m.at("episodes")) {
      Episode e = read_episode_csv(dir / item.at("file").get<std::string>(), ds.obs_dim, ds.dof);
      e.task = ds.task;
      e.dt = ds.dt;
      e.seed = item.at("seed").get<std::uint64_t>();
      e.mode = demo_mode_from_string(item.at("mode").get<std::string>());
      e.success = item.at("success").get<bool>();
      ds.episodes.push_back(std::move(e));
    }
    ds.validate();
    return ds;
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError(std::string("malformed manifest: ") + ex.what());
  }
}

}  // namespace mpd::env
