// Copyright 2026 The CBD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cbd/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <sstream>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"

namespace cbd {

namespace {
using nlohmann::json;

constexpr char kBinMagic[4] = {'C', 'B', 'D', 'B'};
constexpr std::uint32_t kFormatVersion = 1;

std::string stats_path(const std::string& path) { return path + ".stats"; }

}  // namespace

void Trajectory::validate() const {
  const int T = horizon();
  if (T <= 0) throw ValidationError("Trajectory: horizon must be positive");
  if (states.rows() != T + 1)
    throw ShapeError("Trajectory: expected " + std::to_string(T + 1) + " states, have " +
                     std::to_string(states.rows()));
  if (actions.rows() != T) throw ShapeError("Trajectory: action count != T");
  if (!states.allFinite() || !actions.allFinite() || !rewards.allFinite() || !std::isfinite(y))
    throw ValidationError("Trajectory: non-finite entries");
}

double ConditionStats::range() const { return std::max(y_max - y_min, 1e-9); }

void Dataset::validate() const {
  for (const Trajectory& t : trajectories) {
    t.validate();
    if (t.horizon() != T || t.state_dim() != D || t.action_dim() != A)
      throw ShapeError("Dataset: trajectory dims do not match dataset dims");
  }
}

const char* property_tag_name(PropertyTag tag) {
  switch (tag) {
    case PropertyTag::trajectory_return:
      return "return";
    case PropertyTag::smoothness:
      return "smoothness";
    case PropertyTag::early_spend:
      return "early_spend";
  }
  throw ValidationError("unknown property tag");
}

PropertyTag property_tag_from_name(const std::string& name) {
  if (name == "return") return PropertyTag::trajectory_return;
  if (name == "smoothness") return PropertyTag::smoothness;
  if (name == "early_spend") return PropertyTag::early_spend;
  throw ValidationError("unknown property tag: " + name);
}

Vec spend_series(const Mat& states) {
  const int T = static_cast<int>(states.rows()) - 1;
  if (T < 1) throw ShapeError("spend_series: need at least two states");
  Vec spend(T);
  for (int t = 0; t < T; ++t)
    spend[t] = states(t, kBudgetFeature) - states(t + 1, kBudgetFeature);
  return spend;
}

Vec spend_series(const Trajectory& traj) { return spend_series(traj.states); }

double spend_variance(const Mat& states) {
  const Vec spend = spend_series(states);
  const double mean = spend.mean();
  return (spend.array() - mean).square().mean();
}

double spend_variance(const Trajectory& traj) { return spend_variance(traj.states); }

double early_spend_ratio(const Mat& states) {
  const Vec spend = spend_series(states);
  const int T = static_cast<int>(spend.size());
  const int half = std::min(T / 2, T - 1);
  const double total = spend.sum();
  if (std::abs(total) < 1e-12) return 0.0;
  return spend.head(half + 1).sum() / total;
}

double compute_condition(const Trajectory& traj, const PropertyFunctional& f) {
  traj.validate();
  switch (f.tag) {
    case PropertyTag::trajectory_return: {
      const double raw = traj.rewards.sum();
      return (raw - f.stats.y_min) / f.stats.range();
    }
    case PropertyTag::smoothness:
      return spend_variance(traj);
    case PropertyTag::early_spend:
      // Cost-ratio of the first half of the period: indices 0..T/2
      // inclusive over all T intervals. Zero total cost maps to 0.
      return early_spend_ratio(traj.states);
  }
  throw ValidationError("unknown property tag");
}

FeatureStats compute_feature_stats(const Dataset& dataset) {
  if (dataset.empty()) throw ValidationError("compute_feature_stats: empty dataset");
  const int D = dataset.D;
  Vec mean = Vec::Zero(D);
  std::size_t count = 0;
  for (const Trajectory& t : dataset.trajectories) {
    for (Eigen::Index r = 0; r < t.states.rows(); ++r) mean += t.states.row(r).transpose();
    count += static_cast<std::size_t>(t.states.rows());
  }
  mean /= static_cast<double>(count);
  Vec var = Vec::Zero(D);
  for (const Trajectory& t : dataset.trajectories)
    for (Eigen::Index r = 0; r < t.states.rows(); ++r)
      var += (t.states.row(r).transpose() - mean).cwiseAbs2();
  var /= static_cast<double>(count);

  FeatureStats stats;
  stats.mean = mean;
  stats.stddev = var.cwiseSqrt();
  stats.clamped.assign(static_cast<std::size_t>(D), 0);
  for (int d = 0; d < D; ++d) {
    if (stats.stddev[d] < FeatureStats::kStdFloor) {
      stats.stddev[d] = FeatureStats::kStdFloor;
      stats.clamped[static_cast<std::size_t>(d)] = 1;
    }
  }
  return stats;
}

ConditionStats compute_condition_stats(const Dataset& dataset) {
  if (dataset.empty()) throw ValidationError("compute_condition_stats: empty dataset");
  ConditionStats cs;
  cs.y_min = std::numeric_limits<double>::infinity();
  cs.y_max = -std::numeric_limits<double>::infinity();
  for (const Trajectory& t : dataset.trajectories) {
    const double raw = t.rewards.sum();
    cs.y_min = std::min(cs.y_min, raw);
    cs.y_max = std::max(cs.y_max, raw);
  }
  return cs;
}

Mat normalize_states(const Mat& states, const FeatureStats& stats) {
  if (states.cols() != stats.dim()) throw ShapeError("normalize_states: feature dim mismatch");
  return (states.rowwise() - stats.mean.transpose()).array().rowwise() /
         stats.stddev.transpose().array();
}

Mat denormalize_states(const Mat& states, const FeatureStats& stats) {
  if (states.cols() != stats.dim()) throw ShapeError("denormalize_states: feature dim mismatch");
  return (states.array().rowwise() * stats.stddev.transpose().array()).matrix().rowwise() +
         stats.mean.transpose();
}

Vec normalize_state(const Vec& state, const FeatureStats& stats) {
  if (state.size() != stats.dim()) throw ShapeError("normalize_state: feature dim mismatch");
  return (state - stats.mean).cwiseQuotient(stats.stddev);
}

Vec denormalize_state(const Vec& state, const FeatureStats& stats) {
  if (state.size() != stats.dim()) throw ShapeError("denormalize_state: feature dim mismatch");
  return state.cwiseProduct(stats.stddev) + stats.mean;
}

Dataset normalize_states(const Dataset& dataset) {
  if (dataset.empty()) throw ValidationError("normalize_states: empty dataset");
  Dataset out = dataset;
  out.state_stats = compute_feature_stats(dataset);
  for (Trajectory& t : out.trajectories) t.states = normalize_states(t.states, out.state_stats);
  out.normalized = true;
  return out;
}

namespace {

json trajectory_to_json(const Trajectory& t) {
  json rec;
  rec["period"] = t.period;
  json states = json::array();
  for (Eigen::Index r = 0; r < t.states.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < t.states.cols(); ++c) row.push_back(t.states(r, c));
    states.push_back(std::move(row));
  }
  rec["states"] = std::move(states);
  json actions = json::array();
  for (Eigen::Index r = 0; r < t.actions.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < t.actions.cols(); ++c) row.push_back(t.actions(r, c));
    actions.push_back(std::move(row));
  }
  rec["actions"] = std::move(actions);
  rec["rewards"] = std::vector<double>(t.rewards.data(), t.rewards.data() + t.rewards.size());
  rec["y"] = t.y;
  return rec;
}

Trajectory trajectory_from_json(const json& rec, int T, int D, int A) {
  Trajectory t;
  t.period = rec.at("period").get<std::int64_t>();
  t.y = rec.at("y").get<double>();
  const auto& states = rec.at("states");
  if (static_cast<int>(states.size()) != T + 1)
    throw FormatError(FormatError::Code::malformed, "record: wrong state count");
  t.states = Mat(T + 1, D);
  for (int r = 0; r <= T; ++r) {
    const auto& row = states.at(static_cast<std::size_t>(r));
    if (static_cast<int>(row.size()) != D)
      throw FormatError(FormatError::Code::malformed, "record: wrong state dim");
    for (int c = 0; c < D; ++c) t.states(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  const auto& actions = rec.at("actions");
  if (static_cast<int>(actions.size()) != T)
    throw FormatError(FormatError::Code::malformed, "record: wrong action count");
  t.actions = Mat(T, A);
  for (int r = 0; r < T; ++r) {
    const auto& row = actions.at(static_cast<std::size_t>(r));
    if (static_cast<int>(row.size()) != A)
      throw FormatError(FormatError::Code::malformed, "record: wrong action dim");
    for (int c = 0; c < A; ++c)
      t.actions(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  const auto rewards = rec.at("rewards").get<std::vector<double>>();
  if (static_cast<int>(rewards.size()) != T)
    throw FormatError(FormatError::Code::malformed, "record: wrong reward count");
  t.rewards = Eigen::Map<const Vec>(rewards.data(), T);
  return t;
}

void save_dataset_text(const Dataset& d, const std::string& path) {
  std::ostringstream body;
  json header;
  header["magic"] = "CBDD";
  header["version"] = kFormatVersion;
  header["T"] = d.T;
  header["D"] = d.D;
  header["A"] = d.A;
  header["n"] = d.trajectories.size();
  header["normalized"] = d.normalized;
  body << header.dump() << "\n";
  for (const Trajectory& t : d.trajectories) body << trajectory_to_json(t).dump() << "\n";
  const std::string payload = body.str();
  json trailer;
  trailer["crc32"] = crc32(payload);
  write_file(path, payload + trailer.dump() + "\n");
}

Dataset load_dataset_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(FormatError::Code::truncated, "dataset: empty file");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Code::malformed, std::string("dataset header: ") + e.what());
  }
  if (header.value("magic", "") != std::string("CBDD"))
    throw FormatError(FormatError::Code::bad_magic, "dataset: bad magic");
  if (header.at("version").get<std::uint32_t>() != kFormatVersion)
    throw FormatError(FormatError::Code::version_mismatch, "dataset: unsupported version");
  Dataset d;
  d.T = header.at("T").get<int>();
  d.D = header.at("D").get<int>();
  d.A = header.at("A").get<int>();
  d.normalized = header.at("normalized").get<bool>();
  const std::size_t n = header.at("n").get<std::size_t>();

  std::string payload = line + "\n";
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line))
      throw FormatError(FormatError::Code::truncated, "dataset: missing records");
    payload += line + "\n";
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(FormatError::Code::malformed, std::string("dataset record: ") + e.what());
    }
    d.trajectories.push_back(trajectory_from_json(rec, d.T, d.D, d.A));
  }
  if (!std::getline(in, line))
    throw FormatError(FormatError::Code::truncated, "dataset: missing trailer");
  json trailer;
  try {
    trailer = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Code::malformed, std::string("dataset trailer: ") + e.what());
  }
  if (trailer.at("crc32").get<std::uint32_t>() != crc32(payload))
    throw FormatError(FormatError::Code::checksum, "dataset: checksum mismatch");
  return d;
}

void save_dataset_binary(const Dataset& d, const std::string& path) {
  std::ostringstream body;
  write_u32(body, kFormatVersion);
  write_u32(body, d.normalized ? 1u : 0u);
  write_u32(body, static_cast<std::uint32_t>(d.T));
  write_u32(body, static_cast<std::uint32_t>(d.D));
  write_u32(body, static_cast<std::uint32_t>(d.A));
  write_u64(body, d.trajectories.size());
  for (const Trajectory& t : d.trajectories) {
    write_u64(body, static_cast<std::uint64_t>(t.period));
    write_f64(body, t.y);
    for (Eigen::Index r = 0; r < t.states.rows(); ++r)
      for (Eigen::Index c = 0; c < t.states.cols(); ++c) write_f64(body, t.states(r, c));
    for (Eigen::Index r = 0; r < t.actions.rows(); ++r)
      for (Eigen::Index c = 0; c < t.actions.cols(); ++c) write_f64(body, t.actions(r, c));
    for (Eigen::Index r = 0; r < t.rewards.size(); ++r) write_f64(body, t.rewards[r]);
  }
  const std::string payload = body.str();
  std::ostringstream out;
  out.write(kBinMagic, 4);
  out << payload;
  write_u32(out, crc32(payload));
  write_file(path, out.str());
}

Dataset load_dataset_binary(const std::string& text) {
  if (text.size() < 8 || std::memcmp(text.data(), kBinMagic, 4) != 0)
    throw FormatError(FormatError::Code::bad_magic, "dataset: bad magic");
  const std::string payload = text.substr(4, text.size() - 8);
  std::istringstream tail(text.substr(text.size() - 4));
  if (read_u32(tail) != crc32(payload))
    throw FormatError(FormatError::Code::checksum, "dataset: checksum mismatch");
  std::istringstream in(payload);
  if (read_u32(in) != kFormatVersion)
    throw FormatError(FormatError::Code::version_mismatch, "dataset: unsupported version");
  Dataset d;
  d.normalized = read_u32(in) != 0;
  d.T = static_cast<int>(read_u32(in));
  d.D = static_cast<int>(read_u32(in));
  d.A = static_cast<int>(read_u32(in));
  const std::uint64_t n = read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    Trajectory t;
    t.period = static_cast<std::int64_t>(read_u64(in));
    t.y = read_f64(in);
    t.states = Mat(d.T + 1, d.D);
    for (int r = 0; r <= d.T; ++r)
      for (int c = 0; c < d.D; ++c) t.states(r, c) = read_f64(in);
    t.actions = Mat(d.T, d.A);
    for (int r = 0; r < d.T; ++r)
      for (int c = 0; c < d.A; ++c) t.actions(r, c) = read_f64(in);
    t.rewards = Vec(d.T);
    for (int r = 0; r < d.T; ++r) t.rewards[r] = read_f64(in);
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

}  // namespace

void save_stats_file(const std::string& path, const FeatureStats& fs, const ConditionStats& cs) {
  json j;
  j["mean"] = std::vector<double>(fs.mean.data(), fs.mean.data() + fs.mean.size());
  j["std"] = std::vector<double>(fs.stddev.data(), fs.stddev.data() + fs.stddev.size());
  j["clamped"] = fs.clamped;
  j["y_min"] = cs.y_min;
  j["y_max"] = cs.y_max;
  write_file(path, j.dump(2) + "\n");
}

std::pair<FeatureStats, ConditionStats> load_stats_file(const std::string& path) {
  FeatureStats fs;
  ConditionStats cs;
  try {
    const json j = json::parse(read_file(path));
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto stddev = j.at("std").get<std::vector<double>>();
    fs.mean = Eigen::Map<const Vec>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    fs.stddev = Eigen::Map<const Vec>(stddev.data(), static_cast<Eigen::Index>(stddev.size()));
    fs.clamped = j.at("clamped").get<std::vector<std::uint8_t>>();
    cs.y_min = j.at("y_min").get<double>();
    cs.y_max = j.at("y_max").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Code::malformed, std::string("stats sidecar: ") + e.what());
  }
  return {fs, cs};
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".bin")
    save_dataset_binary(dataset, path);
  else
    save_dataset_text(dataset, path);
  save_stats_file(stats_path(path), dataset.state_stats, dataset.condition_stats);
}

Dataset load_dataset(const std::string& path) {
  const std::string text = read_file(path);
  Dataset d;
  if (text.size() >= 4 && std::memcmp(text.data(), kBinMagic, 4) == 0)
    d = load_dataset_binary(text);
  else
    d = load_dataset_text(text);
  std::tie(d.state_stats, d.condition_stats) = load_stats_file(stats_path(path));
  d.validate();
  return d;
}

}  // namespace cbd
