#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "vtlab/domain.hpp"
#include "vtlab/io_util.hpp"
#include "vtlab/rollout.hpp"

namespace vtlab {

inline constexpr const char* kDatasetHeader = "VTLAB-DATA v1";

// header line, then JSON lines: first the dataset metadata, then one session
// per line
inline void save_dataset(std::ostream& os, const Dataset& ds) {
  os << kDatasetHeader << "\n";
  nlohmann::json meta;
  meta["meta"]["logging_policy"] = ds.meta.logging_policy_id;
  meta["meta"]["time_slice"] = ds.meta.time_slice;
  meta["meta"]["seed"] = ds.meta.seed;
  os << meta.dump() << "\n";
  for (const Session& s : ds.sessions) {
    nlohmann::json j;
    j["profile"]["cat"] = s.profile.query_category;
    j["profile"]["power"] = s.profile.purchase_power;
    j["profile"]["high"] = s.profile.high_level;
    j["profile"]["request"] = s.profile.request;
    nlohmann::json steps = nlohmann::json::array();
    for (const StepRecord& r : s.steps) {
      nlohmann::json step = nlohmann::json::array();
      step.push_back(r.action.weights);
      step.push_back(r.page);
      step.push_back(to_string(r.customer_action));
      step.push_back(r.reward);
      if (r.price >= 0.0) step.push_back(r.price);
      steps.push_back(std::move(step));
    }
    j["steps"] = std::move(steps);
    os << j.dump() << "\n";
  }
  if (!os) throw std::runtime_error("dataset: write failed");
}

inline Dataset load_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetHeader)
    throw std::runtime_error("dataset: bad header line");
  Dataset ds;
  bool meta_seen = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (!meta_seen) {
      if (!j.contains("meta")) throw std::runtime_error("dataset: missing metadata line");
      ds.meta.logging_policy_id = j["meta"]["logging_policy"].get<std::string>();
      ds.meta.time_slice = j["meta"]["time_slice"].get<std::int64_t>();
      ds.meta.seed = j["meta"]["seed"].get<std::uint64_t>();
      meta_seen = true;
      continue;
    }
    Session s;
    s.profile.query_category = j["profile"]["cat"].get<int>();
    s.profile.purchase_power = j["profile"]["power"].get<int>();
    s.profile.high_level = j["profile"]["high"].get<bool>();
    s.profile.request = j["profile"]["request"].get<std::vector<double>>();
    for (const auto& step : j["steps"]) {
      StepRecord r;
      r.action.weights = step.at(0).get<std::vector<double>>();
      r.page = step.at(1).get<int>();
      r.customer_action = customer_action_from_string(step.at(2).get<std::string>());
      r.reward = step.at(3).get<int>();
      if (step.size() > 4) r.price = step.at(4).get<double>();
      s.steps.push_back(std::move(r));
    }
    ds.sessions.push_back(std::move(s));
  }
  if (!meta_seen) throw std::runtime_error("dataset: missing metadata line");
  return ds;
}

inline void save_dataset_file(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot open for write: " + path);
  save_dataset(os, ds);
}

inline Dataset load_dataset_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open: " + path);
  return load_dataset(is);
}

inline std::string metrics_csv(const Metrics& m) {
  CsvWriter csv("metric,value");
  csv.row({"r2p", fmt_double(m.r2p)});
  csv.row({"tt", fmt_double(m.tt)});
  csv.row({"tv", fmt_double(m.tv)});
  csv.row({"mean_session_length", fmt_double(m.mean_session_length)});
  csv.row({"mean_action_norm", fmt_double(m.mean_action_norm)});
  csv.row({"max_action_norm", fmt_double(m.max_action_norm)});
  csv.row({"records", std::to_string(m.records)});
  csv.row({"purchases", std::to_string(m.purchases)});
  return csv.str();
}

}  // namespace vtlab
