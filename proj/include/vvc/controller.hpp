#pragma once

#include "vvc/common.hpp"
#include "vvc/icnn.hpp"

#include <functional>

namespace vvc {

// Undirected communication graph between controllable buses. It can differ
// from the physical network and need not be connected.
struct CommGraph {
  std::vector<int> nodes;                  // sorted controllable bus ids
  std::vector<std::pair<int, int>> edges;  // unordered pairs of node ids

  void validate() const;  // edges between known nodes only, no self-loops
  bool adjacent(int a, int b) const;

  static CommGraph full(std::span<const int> nodes);
  static CommGraph none(std::span<const int> nodes);
  // Union of the given cliques (the way the reference partitions are drawn).
  static CommGraph from_cliques(std::span<const int> nodes,
                                std::span<const std::vector<int>> cliques);
};

// Subgraphs covering the controllable set; one bus may appear in several.
struct Partition {
  std::vector<std::vector<int>> subgraphs;  // bus ids, each sorted
};

// Greedy cover: grow a maximal clique from the highest-degree uncovered
// node (ties to the smallest id) until every node is covered. Isolated
// nodes end up as singletons. Deterministic.
Partition cover_cliques(const CommGraph& g);

// Every subgraph must induce a clique and their union must cover all nodes.
void validate_partition(const Partition& p, const CommGraph& g);

struct ReactiveBox {
  VectorXd q_min, q_max;  // p.u., over the controllable set

  void validate() const;
  bool contains(const VectorXd& q, double tol = 0.0) const;
  VectorXd project(const VectorXd& q) const;
  static ReactiveBox symmetric(const VectorXd& q_lim);
};

// Result of the stability checks, persisted in the bundle manifest.
struct BundleCertification {
  bool present = false;
  bool ok = false;
  double l_analytic = 0.0;
  double l_sampled = 0.0;
  double eps_bound = 0.0;
  double eps_used = 0.0;
  long mono_pairs = 0;
  long mono_violations = 0;
  double mono_worst = 0.0;
  std::vector<std::string> reasons;  // populated when not ok
};

// The assembled equilibrium function: per-subgraph ICNNs whose negated
// input gradients scatter-add into the network-wide map phi.
struct ControllerBundle {
  std::vector<int> bus_ids;  // controllable set, sorted; defines v_c order
  Partition partition;
  std::vector<IcnnModel> models;  // one per subgraph, input_dim = |M_l|
  ReactiveBox box;
  double epsilon = 0.1;
  double lipschitz = 0.0;  // cached analytic bound on phi_raw
  bool certified = false;
  BundleCertification certification;

  // positions of each subgraph's buses inside bus_ids (derived, cached)
  std::vector<std::vector<int>> slots;

  int dim() const { return static_cast<int>(bus_ids.size()); }
  void rebuild_slots();
  void validate() const;
};

// input_scale normalizes the voltage inputs (deviations from 1 p.u. are a
// few percent); it is an affine precompose and keeps convexity intact.
ControllerBundle make_bundle(std::span<const int> bus_ids, const Partition& partition,
                             const ReactiveBox& box, double epsilon,
                             std::span<const int> hidden, double beta, Rng& rng,
                             double input_scale = 0.05);

// phi(v) = -sum_l grad g_l(v restricted to M_l), scattered back; buses in
// several subgraphs accumulate contributions.
VectorXd phi_raw(const ControllerBundle& b, const VectorXd& v_c);
// Deployed controller output: phi_raw clamped into the reactive box.
VectorXd phi(const ControllerBundle& b, const VectorXd& v_c);

// Generic map used by simulation/verification so synthetic surrogates can
// stand in for ICNN bundles in tests.
using PhiFn = std::function<VectorXd(const VectorXd&)>;
PhiFn phi_fn(const ControllerBundle& b);      // deployed (clamped)
PhiFn phi_raw_fn(const ControllerBundle& b);  // unclamped

// q <- q + eps (phi_v - q); stays in the box for eps in [0,1] when q starts
// inside it. Throws StructureError when q violates the box precondition.
VectorXd control_step(const ControllerBundle& b, const VectorXd& q_c, const VectorXd& v_c);
VectorXd control_step_core(const VectorXd& q_c, const VectorXd& phi_v, double epsilon);

// Component id per subgraph; subgraphs sharing a bus land in the same
// component. Disjoint components act on disjoint coordinates, so their
// curvatures never add up.
std::vector<int> overlap_components(const Partition& p);

// Analytic Lipschitz bound of phi_raw: per-model bounds summed within each
// overlap component, maximum across components.
double bundle_lipschitz_bound(const ControllerBundle& b, bool fast = false);

struct LipschitzEstimate {
  double sampled = 0.0;   // max difference quotient over sampled pairs
  double analytic = 0.0;  // sum of per-model layer-norm bounds
  double certified_value() const { return std::max(sampled, analytic); }
};

LipschitzEstimate estimate_lipschitz(const ControllerBundle& b, const VectorXd& v_lo,
                                     const VectorXd& v_hi, int n_samples,
                                     std::uint64_t seed, int threads = 0);
// Reference implementation kept for testing the parallel kernel.
LipschitzEstimate estimate_lipschitz_serial(const ControllerBundle& b, const VectorXd& v_lo,
                                            const VectorXd& v_hi, int n_samples,
                                            std::uint64_t seed);

// min{1, 2 / (1 + L^2 |X|^2)}
double max_stable_stepsize(double lipschitz, double x_norm);

// --- manifest ----------------------------------------------------------

// Writes manifest.json plus one ICNN checkpoint per subgraph into `dir`.
// The box is stored in MVar; `base_mva` converts from the p.u. values.
void save_bundle(const ControllerBundle& b, const std::string& dir, double base_mva,
                 const std::string& config_hash = "");
ControllerBundle load_bundle(const std::string& manifest_path);

}  // namespace vvc
