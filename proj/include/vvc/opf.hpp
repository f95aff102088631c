#pragma once

#include "vvc/common.hpp"
#include "vvc/controller.hpp"
#include "vvc/grid.hpp"

namespace vvc {

// Objective pieces: weighted voltage deviation plus the R-form loss proxy.
struct CostWeights {
  double voltage_weight = 100.0;
  MatrixXd loss_matrix;  // the network R matrix, p.u.

  static CostWeights from_matrices(const SensitivityMatrices& mat,
                                   double voltage_weight = 100.0);
};

struct CostTerms {
  double volt = 0.0;
  double loss = 0.0;
  double total() const { return volt + loss; }
};

// volt = w |v - 1|^2, loss = q^T R q with the full reactive vector.
CostTerms cost_at(const VectorXd& v, const VectorXd& q_full, const CostWeights& w);
// Same, with v from the linearized power flow.
CostTerms cost(const SensitivityMatrices& mat, const PowerScenario& scen,
               const VectorXd& q_c, const CostWeights& w);

struct OpfOptions {
  double tol = 1e-8;      // projected-gradient residual, infinity norm
  int max_iters = 50000;
  int refine_passes = 0;  // sequential linearizations around the nonlinear solution
  VectorXd start;         // empty: the zero vector projected into the box
  bool record_history = false;
};

struct OpfResult {
  VectorXd q_star;      // optimal controllable setpoints, p.u.
  VectorXd v_star;      // full network voltage at the optimum, p.u.
  double kkt_residual = 0.0;
  int iterations = 0;
  double objective = 0.0;
  std::vector<double> history;  // per-iteration objective when recorded
};

// Box-constrained convex QP in q_C under the linearized model, solved by
// projected gradient with fixed step 1/Lambda (Lambda = curvature bound).
// Throws ConvergenceError when the residual is still above tolerance at the
// iteration cap.
OpfResult solve_opf(const SensitivityMatrices& mat, const PowerScenario& scen,
                    const ReactiveBox& box, const CostWeights& w,
                    const OpfOptions& opt = {});

// Same oracle with opt.refine_passes sequential re-linearizations of the
// nonlinear power flow around the previous optimum.
OpfResult solve_opf_refined(const GridNetwork& net, const SensitivityMatrices& mat,
                            const PowerScenario& scen, const ReactiveBox& box,
                            const CostWeights& w, const OpfOptions& opt);

}  // namespace vvc
