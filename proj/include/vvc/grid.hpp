#pragma once

#include "vvc/common.hpp"

namespace vvc {

struct Line {
  int from = 0;
  int to = 0;
  double r_ohm = 0.0;
  double x_ohm = 0.0;
};

// Radial network rooted at the substation (bus 0, held at 1 p.u.).
struct GridNetwork {
  int bus_count = 0;  // N+1 including the substation
  std::vector<Line> lines;
  double base_kv = 12.47;
  double base_mva = 10.0;
  std::vector<int> controllable;  // sorted bus ids, subset of 1..N

  int n() const { return bus_count - 1; }
  double z_base() const { return base_kv * base_kv / base_mva; }

  // Spanning tree rooted at 0, r >= 0, x > 0, controllable within 1..N.
  // Throws StructureError naming the offending line or bus.
  void validate() const;
};

// Explicit bus <-> row bookkeeping for the controllable/uncontrolled split.
struct IndexMap {
  std::vector<int> c_buses;  // sorted controllable ids
  std::vector<int> u_buses;  // sorted uncontrolled ids
  std::vector<int> c_pos;    // bus id -> index into c_buses, -1 otherwise

  static IndexMap build(const GridNetwork& net);
  int row(int bus) const { return bus - 1; }  // full matrices use bus order 1..N
  std::vector<int> c_rows() const;
  std::vector<int> u_rows() const;
};

struct SensitivityMatrices {
  MatrixXd R;     // N x N, p.u.
  MatrixXd X;     // N x N, p.u.
  MatrixXd X_cc;  // |C| x |C| principal submatrix of X
  double x_norm = 0.0;  // spectral norm of X_cc
  IndexMap map;

  int n() const { return static_cast<int>(X.rows()); }
  int n_c() const { return static_cast<int>(X_cc.rows()); }
};

// One operating point. Injection-positive sign convention, p.u. values.
struct PowerScenario {
  VectorXd p;               // N entries, bus order 1..N
  VectorXd q_uncontrolled;  // |U| entries, order of IndexMap::u_buses
  std::string label;
};

// R = M^{-T} D_r M^{-1}, X likewise, built from the reduced incidence matrix
// of the tree with impedances in per-unit. X_cc norm by power iteration.
SensitivityMatrices build_matrices(const GridNetwork& net);

// Full reactive vector from the U-part of the scenario plus the C setpoints.
VectorXd assemble_q(const IndexMap& map, const VectorXd& q_u, const VectorXd& q_c);

// v = R p + X q + 1
VectorXd solve_lindistflow(const SensitivityMatrices& mat, const PowerScenario& scen,
                           const VectorXd& q_c);

struct DistFlowOptions {
  double tol = 1e-8;       // max |dv| between sweeps, p.u.
  int max_sweeps = 200;
  double v_collapse = 0.5;  // p.u.
};

// Nonlinear DistFlow by backward-forward sweep from a flat start.
// Throws ConvergenceError past the sweep cap, NumericError on collapse.
VectorXd solve_distflow(const GridNetwork& net, const PowerScenario& scen,
                        const VectorXd& q_c, const DistFlowOptions& opt = {});

struct ControlPartition {
  MatrixXd x_cc;
  VectorXd tilde_v;  // v_C = X_cc q_C + tilde_v
};

ControlPartition partition_controllable(const SensitivityMatrices& mat,
                                        const PowerScenario& scen);

// Largest eigenvalue of a symmetric positive semidefinite matrix by power
// iteration; converges for matrices with a positive leading eigenvector
// (holds for tree-network X blocks, which are entrywise positive).
double spectral_norm_spd(const MatrixXd& m, double rel_tol = 1e-10);

// --- files -----------------------------------------------------------------

// Key-value header plus one `line <from> <to> <r_ohm> <x_ohm>` row per line.
GridNetwork load_network(const std::string& path);
void save_network(const GridNetwork& net, const std::string& path);

// CSV in MW/MVar: timestamp, p_bus1..p_busN, q_bus<u> for uncontrolled buses.
// Values are converted to per-unit on load.
std::vector<PowerScenario> load_scenarios(const std::string& path, const GridNetwork& net);
void save_scenarios(std::span<const PowerScenario> scenarios, const GridNetwork& net,
                    const std::string& path);

}  // namespace vvc
