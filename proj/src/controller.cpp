#include "vvc/controller.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "vvc/parallel.hpp"

namespace vvc {

void CommGraph::validate() const {
  std::set<int> known(nodes.begin(), nodes.end());
  if (known.size() != nodes.size()) throw StructureError("duplicate nodes in communication graph");
  for (auto [a, b] : edges) {
    if (a == b) throw StructureError("self-loop at bus " + std::to_string(a));
    if (!known.count(a) || !known.count(b)) {
      throw StructureError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                           ") touches a non-controllable bus");
    }
  }
}

bool CommGraph::adjacent(int a, int b) const {
  for (auto [u, v] : edges) {
    if ((u == a && v == b) || (u == b && v == a)) return true;
  }
  return false;
}

CommGraph CommGraph::full(std::span<const int> nodes) {
  CommGraph g;
  g.nodes.assign(nodes.begin(), nodes.end());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < g.nodes.size(); ++j) {
      g.edges.push_back({g.nodes[i], g.nodes[j]});
    }
  }
  return g;
}

CommGraph CommGraph::none(std::span<const int> nodes) {
  CommGraph g;
  g.nodes.assign(nodes.begin(), nodes.end());
  return g;
}

CommGraph CommGraph::from_cliques(std::span<const int> nodes,
                                  std::span<const std::vector<int>> cliques) {
  CommGraph g;
  g.nodes.assign(nodes.begin(), nodes.end());
  std::set<std::pair<int, int>> seen;
  for (const auto& clique : cliques) {
    for (std::size_t i = 0; i < clique.size(); ++i) {
      for (std::size_t j = i + 1; j < clique.size(); ++j) {
        auto e = std::minmax(clique[i], clique[j]);
        if (seen.insert({e.first, e.second}).second) {
          g.edges.push_back({e.first, e.second});
        }
      }
    }
  }
  g.validate();
  return g;
}

Partition cover_cliques(const CommGraph& g) {
  g.validate();
  std::vector<int> nodes = g.nodes;
  std::sort(nodes.begin(), nodes.end());

  std::set<std::pair<int, int>> adj;
  std::map<int, int> degree;
  for (int n : nodes) degree[n] = 0;
  for (auto [a, b] : g.edges) {
    auto e = std::minmax(a, b);
    if (adj.insert({e.first, e.second}).second) {
      ++degree[a];
      ++degree[b];
    }
  }
  auto connected = [&](int a, int b) {
    auto e = std::minmax(a, b);
    return adj.count({e.first, e.second}) > 0;
  };

  std::set<int> uncovered(nodes.begin(), nodes.end());
  Partition part;
  while (!uncovered.empty()) {
    // seed: highest degree among uncovered, smallest id on ties
    int seed = -1;
    for (int n : uncovered) {
      if (seed < 0 || degree[n] > degree[seed]) seed = n;
    }
    std::vector<int> clique{seed};
    // candidates may include covered nodes; overlap between subgraphs is fine
    std::vector<int> cands;
    for (int n : nodes) {
      if (n != seed && connected(seed, n)) cands.push_back(n);
    }
    while (true) {
      int pick = -1;
      for (int n : cands) {
        const bool all = std::all_of(clique.begin(), clique.end(),
                                     [&](int m) { return connected(n, m); });
        if (all && (pick < 0 || degree[n] > degree[pick])) pick = n;
      }
      if (pick < 0) break;
      clique.push_back(pick);
      std::erase(cands, pick);
    }
    std::sort(clique.begin(), clique.end());
    for (int n : clique) uncovered.erase(n);
    part.subgraphs.push_back(std::move(clique));
  }
  return part;
}

void validate_partition(const Partition& p, const CommGraph& g) {
  std::set<int> covered;
  for (const auto& sub : p.subgraphs) {
    if (sub.empty()) throw StructureError("empty subgraph in partition");
    for (std::size_t i = 0; i < sub.size(); ++i) {
      if (std::find(g.nodes.begin(), g.nodes.end(), sub[i]) == g.nodes.end()) {
        throw StructureError("partition names unknown bus " + std::to_string(sub[i]));
      }
      for (std::size_t j = i + 1; j < sub.size(); ++j) {
        if (!g.adjacent(sub[i], sub[j])) {
          throw StructureError("subgraph is not a clique: buses " + std::to_string(sub[i]) +
                               " and " + std::to_string(sub[j]) + " do not communicate");
        }
      }
      covered.insert(sub[i]);
    }
  }
  for (int n : g.nodes) {
    if (!covered.count(n)) {
      throw StructureError("bus " + std::to_string(n) + " is not covered by the partition");
    }
  }
}

void ReactiveBox::validate() const {
  if (q_min.size() != q_max.size()) throw StructureError("reactive box size mismatch");
  for (int i = 0; i < q_min.size(); ++i) {
    if (!(q_min[i] <= q_max[i])) {
      throw StructureError("reactive box empty at coordinate " + std::to_string(i));
    }
  }
}

bool ReactiveBox::contains(const VectorXd& q, double tol) const {
  if (q.size() != q_min.size()) return false;
  for (int i = 0; i < q.size(); ++i) {
    if (q[i] < q_min[i] - tol || q[i] > q_max[i] + tol) return false;
  }
  return true;
}

VectorXd ReactiveBox::project(const VectorXd& q) const {
  return clamp_box(q, q_min, q_max);
}

ReactiveBox ReactiveBox::symmetric(const VectorXd& q_lim) {
  ReactiveBox box;
  box.q_min = -q_lim;
  box.q_max = q_lim;
  box.validate();
  return box;
}

void ControllerBundle::rebuild_slots() {
  std::map<int, int> pos;
  for (int i = 0; i < dim(); ++i) pos[bus_ids[i]] = i;
  slots.clear();
  for (const auto& sub : partition.subgraphs) {
    std::vector<int> s;
    for (int bus : sub) {
      auto it = pos.find(bus);
      if (it == pos.end()) {
        throw StructureError("subgraph bus " + std::to_string(bus) + " is not controllable");
      }
      s.push_back(it->second);
    }
    slots.push_back(std::move(s));
  }
}

void ControllerBundle::validate() const {
  if (!std::is_sorted(bus_ids.begin(), bus_ids.end())) {
    throw StructureError("bundle bus ids must be sorted");
  }
  if (models.size() != partition.subgraphs.size()) {
    throw StructureError("bundle needs one model per subgraph");
  }
  if (slots.size() != models.size()) throw StructureError("bundle slots are stale");
  for (std::size_t l = 0; l < models.size(); ++l) {
    models[l].validate();
    if (models[l].input_dim != static_cast<int>(partition.subgraphs[l].size())) {
      throw StructureError("model " + std::to_string(l) + " input dim does not match its subgraph");
    }
  }
  box.validate();
  if (box.q_min.size() != dim()) throw StructureError("box dimension mismatch");
  if (epsilon < 0.0 || epsilon > 1.0) throw StructureError("epsilon outside [0, 1]");
  // covering the controllable set
  std::set<int> covered;
  for (const auto& sub : partition.subgraphs) covered.insert(sub.begin(), sub.end());
  for (int b : bus_ids) {
    if (!covered.count(b)) throw StructureError("bus " + std::to_string(b) + " has no subgraph");
  }
}

ControllerBundle make_bundle(std::span<const int> bus_ids, const Partition& partition,
                             const ReactiveBox& box, double epsilon,
                             std::span<const int> hidden, double beta, Rng& rng,
                             double input_scale) {
  ControllerBundle b;
  b.bus_ids.assign(bus_ids.begin(), bus_ids.end());
  b.partition = partition;
  b.box = box;
  b.epsilon = epsilon;
  for (const auto& sub : partition.subgraphs) {
    b.models.push_back(make_icnn(static_cast<int>(sub.size()), hidden, beta, rng,
                                 true, input_scale));
  }
  b.rebuild_slots();
  b.validate();
  return b;
}

VectorXd phi_raw(const ControllerBundle& b, const VectorXd& v_c) {
  if (v_c.size() != b.dim()) throw StructureError("phi input dimension mismatch");
  VectorXd out = VectorXd::Zero(b.dim());
  for (std::size_t l = 0; l < b.models.size(); ++l) {
    const auto& slot = b.slots[l];
    VectorXd v_sub(slot.size());
    for (std::size_t i = 0; i < slot.size(); ++i) v_sub[i] = v_c[slot[i]];
    const VectorXd grad = icnn_input_gradient(b.models[l], v_sub);
    for (std::size_t i = 0; i < slot.size(); ++i) out[slot[i]] -= grad[i];
  }
  return out;
}

VectorXd phi(const ControllerBundle& b, const VectorXd& v_c) {
  return b.box.project(phi_raw(b, v_c));
}

PhiFn phi_fn(const ControllerBundle& b) {
  return [&b](const VectorXd& v) { return phi(b, v); };
}

PhiFn phi_raw_fn(const ControllerBundle& b) {
  return [&b](const VectorXd& v) { return phi_raw(b, v); };
}

VectorXd control_step_core(const VectorXd& q_c, const VectorXd& phi_v, double epsilon) {
  return q_c + epsilon * (phi_v - q_c);
}

VectorXd control_step(const ControllerBundle& b, const VectorXd& q_c, const VectorXd& v_c) {
  if (!b.box.contains(q_c)) {
    throw StructureError("control_step precondition: q outside the reactive box");
  }
  return control_step_core(q_c, phi(b, v_c), b.epsilon);
}

std::vector<int> overlap_components(const Partition& p) {
  const int n = static_cast<int>(p.subgraphs.size());
  std::vector<int> comp(n);
  std::iota(comp.begin(), comp.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (comp[a] != a) a = comp[a] = comp[comp[a]];
    return a;
  };
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool share = std::any_of(
          p.subgraphs[i].begin(), p.subgraphs[i].end(), [&](int bus) {
            return std::find(p.subgraphs[j].begin(), p.subgraphs[j].end(), bus) !=
                   p.subgraphs[j].end();
          });
      if (share) comp[find(i)] = find(j);
    }
  }
  for (int i = 0; i < n; ++i) comp[i] = find(i);
  return comp;
}

double bundle_lipschitz_bound(const ControllerBundle& b, bool fast) {
  const auto comp = overlap_components(b.partition);
  std::map<int, double> per_comp;
  for (std::size_t l = 0; l < b.models.size(); ++l) {
    per_comp[comp[l]] += icnn_gradient_lipschitz_bound(b.models[l], fast);
  }
  double bound = 0.0;
  for (const auto& [id, sum] : per_comp) bound = std::max(bound, sum);
  return bound;
}

namespace {

LipschitzEstimate lipschitz_impl(const ControllerBundle& b, const VectorXd& v_lo,
                                 const VectorXd& v_hi, int n_samples, std::uint64_t seed,
                                 int threads, bool serial) {
  LipschitzEstimate est;
  est.analytic = bundle_lipschitz_bound(b);

  std::vector<double> quot(n_samples, 0.0);
  auto body = [&](std::int64_t i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    VectorXd x(b.dim()), y(b.dim());
    for (int k = 0; k < b.dim(); ++k) x[k] = rng.uniform(v_lo[k], v_hi[k]);
    for (int k = 0; k < b.dim(); ++k) y[k] = rng.uniform(v_lo[k], v_hi[k]);
    const double d = (x - y).norm();
    if (d < 1e-12) return;
    quot[i] = (phi_raw(b, x) - phi_raw(b, y)).norm() / d;
  };
  if (serial) {
    for (std::int64_t i = 0; i < n_samples; ++i) body(i);
  } else {
    parallel_for(n_samples, threads, body);
  }
  for (double q : quot) est.sampled = std::max(est.sampled, q);
  return est;
}

}  // namespace

LipschitzEstimate estimate_lipschitz(const ControllerBundle& b, const VectorXd& v_lo,
                                     const VectorXd& v_hi, int n_samples,
                                     std::uint64_t seed, int threads) {
  return lipschitz_impl(b, v_lo, v_hi, n_samples, seed, threads, false);
}

LipschitzEstimate estimate_lipschitz_serial(const ControllerBundle& b, const VectorXd& v_lo,
                                            const VectorXd& v_hi, int n_samples,
                                            std::uint64_t seed) {
  return lipschitz_impl(b, v_lo, v_hi, n_samples, seed, 1, true);
}

double max_stable_stepsize(double lipschitz, double x_norm) {
  return std::min(1.0, 2.0 / (1.0 + lipschitz * lipschitz * x_norm * x_norm));
}

// --- manifest ------------------------------------------------------------

namespace {

using nlohmann::json;

json vector_to_json(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

VectorXd vector_from_json(const json& a) {
  VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a.at(i).get<double>();
  return v;
}

}  // namespace

void save_bundle(const ControllerBundle& b, const std::string& dir, double base_mva,
                 const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json j;
  j["format"] = "vvc-bundle";
  j["version"] = 1;
  j["base_mva"] = base_mva;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["bus_ids"] = b.bus_ids;
  json subs = json::array();
  for (const auto& sub : b.partition.subgraphs) subs.push_back(sub);
  j["partition"] = std::move(subs);
  json ckpts = json::array();
  for (std::size_t l = 0; l < b.models.size(); ++l) {
    const std::string name = "icnn_" + std::to_string(l) + ".json";
    save_icnn(b.models[l], (fs::path(dir) / name).string());
    ckpts.push_back(name);
  }
  j["checkpoints"] = std::move(ckpts);
  j["q_min_mvar"] = vector_to_json(b.box.q_min * base_mva);
  j["q_max_mvar"] = vector_to_json(b.box.q_max * base_mva);
  j["epsilon"] = b.epsilon;
  j["lipschitz"] = b.lipschitz;
  j["certified"] = b.certified;
  if (b.certification.present) {
    json c;
    c["ok"] = b.certification.ok;
    c["l_analytic"] = b.certification.l_analytic;
    c["l_sampled"] = b.certification.l_sampled;
    c["eps_bound"] = b.certification.eps_bound;
    c["eps_used"] = b.certification.eps_used;
    c["monotonicity_pairs"] = b.certification.mono_pairs;
    c["monotonicity_violations"] = b.certification.mono_violations;
    c["monotonicity_worst"] = b.certification.mono_worst;
    c["reasons"] = b.certification.reasons;
    j["certification"] = std::move(c);
  }
  write_file((fs::path(dir) / "manifest.json").string(), j.dump(1));
}

ControllerBundle load_bundle(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(manifest_path).parent_path();
  json j;
  try {
    j = json::parse(read_file(manifest_path));
    if (j.at("format").get<std::string>() != "vvc-bundle" || j.at("version").get<int>() != 1) {
      throw ParseError("bundle manifest: unsupported format/version");
    }
    ControllerBundle b;
    const double base_mva = j.at("base_mva").get<double>();
    b.bus_ids = j.at("bus_ids").get<std::vector<int>>();
    for (const auto& sub : j.at("partition")) {
      b.partition.subgraphs.push_back(sub.get<std::vector<int>>());
    }
    for (const auto& name : j.at("checkpoints")) {
      b.models.push_back(load_icnn((dir / name.get<std::string>()).string()));
    }
    b.box.q_min = vector_from_json(j.at("q_min_mvar")) / base_mva;
    b.box.q_max = vector_from_json(j.at("q_max_mvar")) / base_mva;
    b.epsilon = j.at("epsilon").get<double>();
    b.lipschitz = j.at("lipschitz").get<double>();
    b.certified = j.at("certified").get<bool>();
    if (j.contains("certification")) {
      const auto& c = j.at("certification");
      b.certification.present = true;
      b.certification.ok = c.at("ok").get<bool>();
      b.certification.l_analytic = c.at("l_analytic").get<double>();
      b.certification.l_sampled = c.at("l_sampled").get<double>();
      b.certification.eps_bound = c.at("eps_bound").get<double>();
      b.certification.eps_used = c.at("eps_used").get<double>();
      b.certification.mono_pairs = c.at("monotonicity_pairs").get<long>();
      b.certification.mono_violations = c.at("monotonicity_violations").get<long>();
      b.certification.mono_worst = c.at("monotonicity_worst").get<double>();
      b.certification.reasons = c.at("reasons").get<std::vector<std::string>>();
    }
    b.rebuild_slots();
    b.validate();
    return b;
  } catch (const json::exception& e) {
    throw ParseError("bundle manifest " + manifest_path + ": " + e.what());
  }
}

}  // namespace vvc
