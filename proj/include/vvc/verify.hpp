#pragma once

#include "vvc/common.hpp"
#include "vvc/controller.hpp"
#include "vvc/grid.hpp"
#include "vvc/sim.hpp"

#include <limits>

namespace vvc {

// Sampled collective-monotonicity statistics. `violations` counts pairs with
// (phi(v) - phi(v'))^T (v - v') above tolerance; the budget fields track the
// per-bus terms b_i, which may go positive for communicating controllers as
// long as every pair's sum stays nonpositive.
struct MonotonicityReport {
  long pairs = 0;
  long violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  long positive_budget_terms = 0;
  long pairs_with_positive_budget = 0;
  double max_budget = -std::numeric_limits<double>::infinity();
  double tol = 1e-9;
};

struct VerifyOptions {
  long n_pairs = 100000;
  std::uint64_t seed = 1;
  double v_lo = 0.9;  // sampling box, p.u.
  double v_hi = 1.1;
  double tol = 1e-9;
  int threads = 0;
};

MonotonicityReport check_monotonicity(const PhiFn& phi_raw_map, int dim,
                                      const VerifyOptions& opt = {});
MonotonicityReport check_monotonicity(const ControllerBundle& bundle,
                                      const VerifyOptions& opt = {});
// Reference implementation kept for testing the parallel kernel.
MonotonicityReport check_monotonicity_serial(const PhiFn& phi_raw_map, int dim,
                                             const VerifyOptions& opt = {});

struct CertifyOptions {
  VerifyOptions mono;
  int lipschitz_samples = 2000;
  double safety = 0.9;  // absorbs Lipschitz-estimation slack
};

// Zero monotonicity violations plus the stepsize rule eps <= safety * bound
// with the larger (analytic) Lipschitz bound. Updates bundle.certified,
// bundle.lipschitz and the manifest certification block.
BundleCertification certify_bundle(ControllerBundle& bundle, const SensitivityMatrices& mat,
                                   const CertifyOptions& opt = {});

// Audit of the Lyapunov column of a trace: strict decrease while above
// tolerance. Not applicable when the trace carries no equilibrium.
struct LyapunovAudit {
  bool applicable = false;
  bool monotone = false;
  int first_increase_step = -1;
  double final_value = std::numeric_limits<double>::quiet_NaN();
  double tol = 1e-12;
};

LyapunovAudit lyapunov_audit(const SimTrace& trace, double tol = 1e-12);

std::string lyapunov_audit_json(const LyapunovAudit& audit);
std::string monotonicity_report_json(const MonotonicityReport& report);

}  // namespace vvc
