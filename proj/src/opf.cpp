#include "vvc/opf.hpp"

#include <cmath>

namespace vvc {

CostWeights CostWeights::from_matrices(const SensitivityMatrices& mat, double voltage_weight) {
  if (!(voltage_weight > 0)) throw StructureError("voltage weight must be positive");
  CostWeights w;
  w.voltage_weight = voltage_weight;
  w.loss_matrix = mat.R;
  return w;
}

CostTerms cost_at(const VectorXd& v, const VectorXd& q_full, const CostWeights& w) {
  if (v.size() != q_full.size() || q_full.size() != w.loss_matrix.rows()) {
    throw StructureError("cost dimension mismatch");
  }
  CostTerms c;
  c.volt = w.voltage_weight * (v - VectorXd::Ones(v.size())).squaredNorm();
  c.loss = q_full.dot(w.loss_matrix * q_full);
  return c;
}

CostTerms cost(const SensitivityMatrices& mat, const PowerScenario& scen,
               const VectorXd& q_c, const CostWeights& w) {
  const VectorXd v = solve_lindistflow(mat, scen, q_c);
  return cost_at(v, assemble_q(mat.map, scen.q_uncontrolled, q_c), w);
}

namespace {

struct Quadratic {
  // f(q) = w |A q + m|^2 + q^T Rcc q + 2 d^T q   (+ constant)
  // A maps controllable injections to all N voltages, so the voltage term
  // covers the whole network as in the experiment cost, not just C.
  MatrixXd A;   // N x |C|
  VectorXd m;   // v - 1 at q_C = 0
  MatrixXd Rcc;
  VectorXd d;
  double w;
  double curvature;  // spectral norm of the Hessian

  VectorXd grad(const VectorXd& q) const {
    return 2.0 * w * (A.transpose() * (A * q + m)) + 2.0 * (Rcc * q) + 2.0 * d;
  }
  double value(const VectorXd& q) const {
    return w * (A * q + m).squaredNorm() + q.dot(Rcc * q) + 2.0 * d.dot(q);
  }
  void set_curvature() {
    const MatrixXd H = 2.0 * w * (A.transpose() * A) + 2.0 * Rcc;
    curvature = spectral_norm_spd(H) + 1e-12;
  }
};

struct PgResult {
  VectorXd q;
  double residual;
  int iterations;
  std::vector<double> history;
};

PgResult projected_gradient(const Quadratic& f, const ReactiveBox& box,
                            const OpfOptions& opt) {
  VectorXd q = opt.start.size() > 0 ? box.project(opt.start)
                                    : box.project(VectorXd::Zero(box.q_min.size()));
  const double step = 1.0 / f.curvature;
  double residual = 0.0;
  PgResult out;
  for (int it = 1; it <= opt.max_iters; ++it) {
    if (opt.record_history) out.history.push_back(f.value(q));
    const VectorXd g = f.grad(q);
    residual = (q - box.project(q - g)).cwiseAbs().maxCoeff();
    if (residual < opt.tol) {
      out.q = q;
      out.residual = residual;
      out.iterations = it;
      return out;
    }
    q = box.project(q - step * g);
  }
  throw ConvergenceError("opf projected gradient stalled at residual " + fmt_double(residual));
}

}  // namespace

namespace {

// all-bus voltage response to the controllable injections
MatrixXd voltage_response(const SensitivityMatrices& mat) {
  const auto c_rows = mat.map.c_rows();
  MatrixXd A(mat.n(), c_rows.size());
  for (std::size_t j = 0; j < c_rows.size(); ++j) A.col(j) = mat.X.col(c_rows[j]);
  return A;
}

}  // namespace

OpfResult solve_opf(const SensitivityMatrices& mat, const PowerScenario& scen,
                    const ReactiveBox& box, const CostWeights& w, const OpfOptions& opt) {
  box.validate();
  if (mat.map.c_buses.empty()) throw StructureError("no controllable buses");
  const auto c_rows = mat.map.c_rows();
  const auto u_rows = mat.map.u_rows();

  Quadratic f;
  f.A = voltage_response(mat);
  // v - 1 with the controllable injections off
  f.m = solve_lindistflow(mat, scen, VectorXd::Zero(mat.n_c())) - VectorXd::Ones(mat.n());
  f.Rcc = submatrix(mat.R, c_rows, c_rows);
  f.d = submatrix(mat.R, c_rows, u_rows) * scen.q_uncontrolled;
  f.w = w.voltage_weight;
  f.set_curvature();

  PgResult pg = projected_gradient(f, box, opt);
  OpfResult out;
  out.q_star = pg.q;
  out.kkt_residual = pg.residual;
  out.iterations = pg.iterations;
  out.history = std::move(pg.history);
  out.v_star = solve_lindistflow(mat, scen, pg.q);
  out.objective = cost_at(out.v_star, assemble_q(mat.map, scen.q_uncontrolled, pg.q), w).total();
  return out;
}

OpfResult solve_opf_refined(const GridNetwork& net, const SensitivityMatrices& mat,
                            const PowerScenario& scen, const ReactiveBox& box,
                            const CostWeights& w, const OpfOptions& opt) {
  OpfResult res = solve_opf(mat, scen, box, w, opt);
  if (opt.refine_passes <= 0) return res;

  const auto c_rows = mat.map.c_rows();
  const auto u_rows = mat.map.u_rows();

  Quadratic f;
  f.A = voltage_response(mat);
  f.Rcc = submatrix(mat.R, c_rows, c_rows);
  f.d = submatrix(mat.R, c_rows, u_rows) * scen.q_uncontrolled;
  f.w = w.voltage_weight;
  f.set_curvature();

  for (int pass = 0; pass < opt.refine_passes; ++pass) {
    const VectorXd v_nl = solve_distflow(net, scen, res.q_star);
    // linearize around the current optimum: v(q) ~ v_nl + A (q - q*)
    f.m = v_nl - f.A * res.q_star - VectorXd::Ones(mat.n());
    const PgResult pg = projected_gradient(f, box, opt);
    res.q_star = pg.q;
    res.kkt_residual = pg.residual;
    res.iterations = pg.iterations;
  }
  res.v_star = solve_distflow(net, scen, res.q_star);
  res.objective =
      cost_at(res.v_star, assemble_q(mat.map, scen.q_uncontrolled, res.q_star), w).total();
  return res;
}

}  // namespace vvc
