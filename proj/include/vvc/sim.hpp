#pragma once

#include "vvc/common.hpp"
#include "vvc/controller.hpp"
#include "vvc/grid.hpp"
#include "vvc/opf.hpp"

#include <limits>
#include <optional>

namespace vvc {

enum class PfModel { linear, nonlinear };

struct NoiseConfig {
  double d_q = 0.0;  // additive setpoint disturbance magnitude, p.u.
  double d_v = 0.0;  // multiplicative voltage measurement noise fraction
  void validate() const;
};

struct SimConfig {
  int steps = 30;
  double epsilon = 0.1;
  PfModel pf = PfModel::linear;
  NoiseConfig noise;
  std::uint64_t seed = 0;
  // Day cost accounting: terminal states by default, per-step on request.
  bool accumulate_per_step = false;

  void validate() const;
};

// Closed-loop record. Row t holds the state after t control updates; row 0
// is the initial state, so a finished trace has steps+1 rows. Voltages are
// ground truth; measurement noise only corrupts what the controller sees.
struct SimTrace {
  MatrixXd v;          // rows x N
  MatrixXd q_c;        // rows x |C|
  VectorXd lyapunov;   // NaN when no equilibrium is attached
  VectorXd volt_cost;
  VectorXd loss_cost;
  double terminal_residual = std::numeric_limits<double>::quiet_NaN();
  int steps_completed = 0;
  bool diverged = false;
  std::string error;
};

struct Equilibrium {
  VectorXd v_c;
  VectorXd q;
  double residual = 0.0;
  int iterations = 0;
};

// Damped fixed-point iteration q <- q + eps (phi(X q + tilde_v) - q) on the
// linear model until |phi(v) - q|_inf < tol. Throws ConvergenceError when
// the cap is reached (an uncertified or broken controller).
Equilibrium find_equilibrium_phi(const MatrixXd& x_cc, const VectorXd& tilde_v,
                                 const PhiFn& fn, double eps, const VectorXd& q0,
                                 double tol = 1e-10, int max_iters = 100000);

// Bundle flavour: starts from q = 0, steps with 0.9x the certified bound.
// Requires a monotone-certified bundle.
Equilibrium find_equilibrium(const SensitivityMatrices& mat, const ControllerBundle& bundle,
                             const PowerScenario& scen);

// One episode of the incremental control law against the configured power
// flow; p is held constant inside the episode. A power-flow failure mid-run
// truncates the trace and sets the error flag instead of throwing.
SimTrace run_episode(const GridNetwork& net, const SensitivityMatrices& mat,
                     const ControllerBundle& bundle, const PowerScenario& scen,
                     const VectorXd& q0, const SimConfig& cfg, const CostWeights& w,
                     const Equilibrium* eq = nullptr);

// Abstract linear closed loop for surrogate controllers: v = X q + tilde_v,
// no cost accounting. Used by the stepsize-law and stability experiments.
SimTrace run_episode_phi(const MatrixXd& x_cc, const VectorXd& tilde_v, const PhiFn& fn,
                         const ReactiveBox& box, const VectorXd& q0, const SimConfig& cfg,
                         const Equilibrium* eq = nullptr);

struct DayPoint {
  int index = 0;
  std::string label;
  CostTerms ctrl;
  CostTerms noctrl;
  std::optional<CostTerms> opf;
  double residual = 0.0;   // terminal fixed-point residual
  double lyapunov_end = std::numeric_limits<double>::quiet_NaN();
};

struct DayReport {
  CostTerms ctrl_total;
  CostTerms noctrl_total;
  std::optional<CostTerms> opf_total;
  double improvement_pct = 0.0;  // of the controller over no control
  std::vector<DayPoint> points;
  MatrixXd terminal_v;      // points x N, controlled episode endpoints
  std::string config_hash;  // provenance echo, set by callers
};

// Chains episodes across the day's points with q carried over, accumulating
// Eq.-(22) costs at episode-terminal states (or per step when configured),
// alongside the no-control baseline and optionally a fresh OPF reference.
using TraceSink = std::function<void(int point, const SimTrace&)>;
DayReport run_day(const GridNetwork& net, const SensitivityMatrices& mat,
                  const ControllerBundle& bundle, std::span<const PowerScenario> profiles,
                  const SimConfig& cfg, const CostWeights& w, bool opf_reference = true,
                  const TraceSink& on_trace = {});

void save_trace_csv(const SimTrace& trace, std::span<const int> bus_ids,
                    const std::string& path);
std::string day_report_json(const DayReport& report, const SimConfig& cfg);
void save_day_report(const DayReport& report, const SimConfig& cfg, const std::string& path);

}  // namespace vvc
