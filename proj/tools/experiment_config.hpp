#pragma once

// Experiment configuration: one self-describing JSON file per experiment,
// hashed into the artifacts it produces.

#include <json.hpp>

#include "vvc/controller.hpp"
#include "vvc/grid.hpp"
#include "vvc/learn.hpp"
#include "vvc/profiles.hpp"
#include "vvc/sim.hpp"

#include <string>
#include <vector>

namespace vvc::cli {

struct ExperimentConfig {
  std::string network_path = "data/ucsd49.net";
  std::vector<double> q_lim_mvar;
  double epsilon = 0.1;
  std::vector<int> hidden = {64, 64};
  double beta = 10.0;
  double input_scale = 0.05;
  // comm: one of none | full | cliques | edges
  std::string comm_mode = "none";
  std::vector<std::vector<int>> comm_cliques;
  std::vector<std::pair<int, int>> comm_edges;
  std::vector<std::vector<int>> partition;  // empty: cover_cliques(comm)
  TrainConfig train;
  SimConfig sim;
  SynthOptions profiles;
  int profile_days = 6;
  std::uint64_t profile_seed = 7;

  std::string hash;  // of the raw config file bytes
};

inline ExperimentConfig load_experiment_config(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  ExperimentConfig cfg;
  cfg.hash = content_hash(text);
  try {
    if (j.contains("network")) cfg.network_path = j["network"].get<std::string>();
    if (j.contains("q_lim_mvar")) cfg.q_lim_mvar = j["q_lim_mvar"].get<std::vector<double>>();
    if (j.contains("epsilon")) cfg.epsilon = j["epsilon"].get<double>();
    if (j.contains("hidden")) cfg.hidden = j["hidden"].get<std::vector<int>>();
    if (j.contains("beta")) cfg.beta = j["beta"].get<double>();
    if (j.contains("input_scale")) cfg.input_scale = j["input_scale"].get<double>();
    if (j.contains("comm")) {
      const auto& c = j["comm"];
      cfg.comm_mode = c.at("mode").get<std::string>();
      if (cfg.comm_mode == "cliques") {
        cfg.comm_cliques = c.at("cliques").get<std::vector<std::vector<int>>>();
      } else if (cfg.comm_mode == "edges") {
        for (const auto& e : c.at("edges")) {
          cfg.comm_edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
        }
      } else if (cfg.comm_mode != "none" && cfg.comm_mode != "full") {
        throw ParseError(path + ": comm.mode must be none|full|cliques|edges");
      }
    }
    if (j.contains("partition")) {
      cfg.partition = j["partition"].get<std::vector<std::vector<int>>>();
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      auto get = [&](const char* k, auto& field) {
        if (t.contains(k)) field = t[k].get<std::decay_t<decltype(field)>>();
      };
      get("learning_rate", cfg.train.learning_rate);
      get("lr_decay", cfg.train.lr_decay);
      get("momentum", cfg.train.momentum);
      get("epochs", cfg.train.epochs);
      get("batch_size", cfg.train.batch_size);
      get("seed", cfg.train.seed);
      get("augmentation_noise", cfg.train.augmentation_noise);
      get("augmentation_factor", cfg.train.augmentation_factor);
      get("weight_decay", cfg.train.weight_decay);
      get("validation_days", cfg.train.validation_days);
      get("points_per_day", cfg.train.points_per_day);
      get("nonlinear_refine_passes", cfg.train.nonlinear_refine_passes);
      get("lipschitz_cap", cfg.train.lipschitz_cap);
    }
    if (j.contains("sim")) {
      const auto& s = j["sim"];
      if (s.contains("steps")) cfg.sim.steps = s["steps"].get<int>();
      if (s.contains("pf_model")) {
        const auto m = s["pf_model"].get<std::string>();
        if (m == "linear") {
          cfg.sim.pf = PfModel::linear;
        } else if (m == "nonlinear") {
          cfg.sim.pf = PfModel::nonlinear;
        } else {
          throw ParseError(path + ": sim.pf_model must be linear|nonlinear");
        }
      }
      if (s.contains("noise_dv")) cfg.sim.noise.d_v = s["noise_dv"].get<double>();
      if (s.contains("noise_dq")) cfg.sim.noise.d_q = s["noise_dq"].get<double>();
      if (s.contains("seed")) cfg.sim.seed = s["seed"].get<std::uint64_t>();
      if (s.contains("accumulate")) {
        const auto a = s["accumulate"].get<std::string>();
        cfg.sim.accumulate_per_step = (a == "per_step");
        if (a != "per_step" && a != "terminal") {
          throw ParseError(path + ": sim.accumulate must be terminal|per_step");
        }
      }
    }
    if (j.contains("profiles")) {
      const auto& p = j["profiles"];
      if (p.contains("days")) cfg.profile_days = p["days"].get<int>();
      if (p.contains("seed")) cfg.profile_seed = p["seed"].get<std::uint64_t>();
      if (p.contains("points_per_day")) cfg.profiles.points_per_day = p["points_per_day"].get<int>();
      if (p.contains("load_peak_mw")) cfg.profiles.load_peak_mw = p["load_peak_mw"].get<double>();
      if (p.contains("pv_peak_mw")) cfg.profiles.pv_peak_mw = p["pv_peak_mw"].get<double>();
      if (p.contains("power_factor")) cfg.profiles.power_factor = p["power_factor"].get<double>();
      if (p.contains("point_jitter")) cfg.profiles.point_jitter = p["point_jitter"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  cfg.sim.epsilon = cfg.epsilon;
  cfg.train.points_per_day = cfg.profiles.points_per_day;
  return cfg;
}

inline ReactiveBox config_box(const ExperimentConfig& cfg, const GridNetwork& net) {
  VectorXd lim(net.controllable.size());
  if (cfg.q_lim_mvar.empty()) {
    lim.setConstant(2.0);
  } else if (cfg.q_lim_mvar.size() == net.controllable.size()) {
    for (std::size_t i = 0; i < cfg.q_lim_mvar.size(); ++i) lim[i] = cfg.q_lim_mvar[i];
  } else {
    throw StructureError("q_lim_mvar length does not match the controllable set");
  }
  return ReactiveBox::symmetric(lim / net.base_mva);
}

inline CommGraph config_comm(const ExperimentConfig& cfg, const GridNetwork& net) {
  if (cfg.comm_mode == "full") return CommGraph::full(net.controllable);
  if (cfg.comm_mode == "none") return CommGraph::none(net.controllable);
  if (cfg.comm_mode == "cliques") {
    return CommGraph::from_cliques(net.controllable, cfg.comm_cliques);
  }
  CommGraph g;
  g.nodes = net.controllable;
  g.edges = cfg.comm_edges;
  g.validate();
  return g;
}

inline Partition config_partition(const ExperimentConfig& cfg, const CommGraph& comm) {
  if (!cfg.partition.empty()) {
    Partition p;
    p.subgraphs = cfg.partition;
    for (auto& sub : p.subgraphs) std::sort(sub.begin(), sub.end());
    validate_partition(p, comm);
    return p;
  }
  return cover_cliques(comm);
}

}  // namespace vvc::cli
