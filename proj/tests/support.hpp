#pragma once

// Shared fixtures for the test suites.

#include "vvc/grid.hpp"

#include <string>

#ifndef VVC_DATA_DIR
#define VVC_DATA_DIR "data"
#endif

namespace vvc::testing {

inline std::string data_path(const std::string& name) {
  return std::string(VVC_DATA_DIR) + "/" + name;
}

inline GridNetwork ucsd49() { return load_network(data_path("ucsd49.net")); }

// line 0-1 with r = x = z_base ohms, so R = X = [[1]] in p.u.
inline GridNetwork one_line_net() {
  GridNetwork net;
  net.bus_count = 2;
  net.base_kv = 1.0;
  net.base_mva = 1.0;  // z_base = 1
  net.lines = {{0, 1, 1.0, 1.0}};
  net.controllable = {1};
  return net;
}

// chain 0-1-2, x = 0.1 / 0.2 p.u., r = 0; X = [[0.1, 0.1], [0.1, 0.3]]
inline GridNetwork chain_net(std::vector<int> controllable = {1, 2}) {
  GridNetwork net;
  net.bus_count = 3;
  net.base_kv = 1.0;
  net.base_mva = 1.0;
  net.lines = {{0, 1, 0.0, 0.1}, {1, 2, 0.0, 0.2}};
  net.controllable = std::move(controllable);
  return net;
}

// Random tree on `buses`+1 nodes with impedances in a moderate range.
inline GridNetwork random_tree(int buses, Rng& rng, int n_controllable = -1) {
  GridNetwork net;
  net.bus_count = buses + 1;
  net.base_kv = 1.0;
  net.base_mva = 1.0;
  for (int b = 1; b <= buses; ++b) {
    const int parent = static_cast<int>(rng.uniform_index(b));  // any earlier bus
    net.lines.push_back({parent, b, rng.uniform(0.0, 0.05), rng.uniform(0.01, 0.1)});
  }
  if (n_controllable < 0) n_controllable = buses;
  std::vector<int> ids;
  for (int b = 1; b <= buses; ++b) ids.push_back(b);
  rng.shuffle(ids);
  ids.resize(n_controllable);
  std::sort(ids.begin(), ids.end());
  net.controllable = ids;
  return net;
}

inline PowerScenario zero_scenario(const GridNetwork& net) {
  const IndexMap map = IndexMap::build(net);
  PowerScenario s;
  s.p = VectorXd::Zero(net.n());
  s.q_uncontrolled = VectorXd::Zero(map.u_buses.size());
  s.label = "zero";
  return s;
}

inline PowerScenario random_scenario(const GridNetwork& net, Rng& rng, double mag = 0.1) {
  PowerScenario s = zero_scenario(net);
  for (int i = 0; i < s.p.size(); ++i) s.p[i] = rng.symmetric(mag);
  for (int i = 0; i < s.q_uncontrolled.size(); ++i) s.q_uncontrolled[i] = rng.symmetric(mag);
  s.label = "random";
  return s;
}

}  // namespace vvc::testing
