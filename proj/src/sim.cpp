#include "vvc/sim.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>

namespace vvc {

void NoiseConfig::validate() const {
  if (d_q < 0 || d_v < 0) throw StructureError("noise magnitudes must be nonnegative");
}

void SimConfig::validate() const {
  if (steps < 1) throw StructureError("steps must be >= 1");
  if (epsilon < 0 || epsilon > 1) throw StructureError("epsilon outside [0, 1]");
  noise.validate();
}

Equilibrium find_equilibrium_phi(const MatrixXd& x_cc, const VectorXd& tilde_v,
                                 const PhiFn& fn, double eps, const VectorXd& q0,
                                 double tol, int max_iters) {
  if (!(eps > 0) || eps > 1) throw StructureError("fixed-point stepsize outside (0, 1]");
  Equilibrium out;
  VectorXd q = q0;
  for (int it = 1; it <= max_iters; ++it) {
    const VectorXd v = x_cc * q + tilde_v;
    const VectorXd target = fn(v);
    const double residual = (target - q).cwiseAbs().maxCoeff();
    if (residual < tol) {
      out.v_c = v;
      out.q = q;
      out.residual = residual;
      out.iterations = it;
      return out;
    }
    q += eps * (target - q);
  }
  throw ConvergenceError("equilibrium iteration did not reach " + fmt_double(tol) +
                         " in " + std::to_string(max_iters) + " steps");
}

Equilibrium find_equilibrium(const SensitivityMatrices& mat, const ControllerBundle& bundle,
                             const PowerScenario& scen) {
  if (!bundle.certified) {
    throw StructureError("find_equilibrium needs a monotone-certified bundle");
  }
  const auto part = partition_controllable(mat, scen);
  const double eps = 0.9 * max_stable_stepsize(bundle.lipschitz, mat.x_norm);
  const VectorXd q0 = bundle.box.project(VectorXd::Zero(bundle.dim()));
  return find_equilibrium_phi(part.x_cc, part.tilde_v, phi_fn(bundle), eps, q0);
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct TraceBuilder {
  SimTrace t;
  int rows = 0;

  TraceBuilder(int max_rows, int n, int nc) {
    t.v.setZero(max_rows, n);
    t.q_c.setZero(max_rows, nc);
    t.lyapunov.setConstant(max_rows, kNaN);
    t.volt_cost.setConstant(max_rows, kNaN);
    t.loss_cost.setConstant(max_rows, kNaN);
  }
  void push(const VectorXd& v, const VectorXd& q, double d, double vc, double lc) {
    t.v.row(rows) = v.transpose();
    t.q_c.row(rows) = q.transpose();
    t.lyapunov[rows] = d;
    t.volt_cost[rows] = vc;
    t.loss_cost[rows] = lc;
    ++rows;
  }
  SimTrace finish() {
    t.v.conservativeResize(rows, Eigen::NoChange);
    t.q_c.conservativeResize(rows, Eigen::NoChange);
    t.lyapunov.conservativeResize(rows);
    t.volt_cost.conservativeResize(rows);
    t.loss_cost.conservativeResize(rows);
    t.steps_completed = rows - 1;
    return std::move(t);
  }
};

// D(t) = (v_C - v*_C)^T X_cc^{-1} (v_C - v*_C), the paper's contraction metric.
double lyapunov_value(const Eigen::LLT<MatrixXd>& llt, const VectorXd& v_c,
                      const VectorXd& v_star) {
  const VectorXd d = v_c - v_star;
  return d.dot(llt.solve(d));
}

}  // namespace

SimTrace run_episode(const GridNetwork& net, const SensitivityMatrices& mat,
                     const ControllerBundle& bundle, const PowerScenario& scen,
                     const VectorXd& q0, const SimConfig& cfg, const CostWeights& w,
                     const Equilibrium* eq) {
  cfg.validate();
  if (!bundle.box.contains(q0, 1e-12)) {
    throw StructureError("episode start q0 violates the reactive box");
  }
  const auto c_rows = mat.map.c_rows();
  const int nc = bundle.dim();

  Eigen::LLT<MatrixXd> llt;
  if (eq) llt.compute(mat.X_cc);

  auto power_flow = [&](const VectorXd& q_c) -> VectorXd {
    if (cfg.pf == PfModel::linear) return solve_lindistflow(mat, scen, q_c);
    return solve_distflow(net, scen, q_c);
  };
  auto gather_c = [&](const VectorXd& v_full) {
    VectorXd v_c(nc);
    for (int i = 0; i < nc; ++i) v_c[i] = v_full[c_rows[i]];
    return v_c;
  };

  TraceBuilder tb(cfg.steps + 1, mat.n(), nc);
  Rng rng(Rng::stream(cfg.seed, 0x51));
  VectorXd q = q0;
  SimTrace partial;
  try {
    VectorXd v_full = power_flow(q);
    auto record = [&]() {
      const CostTerms c = cost_at(v_full, assemble_q(mat.map, scen.q_uncontrolled, q), w);
      const double d = eq ? lyapunov_value(llt, gather_c(v_full), eq->v_c) : kNaN;
      tb.push(v_full, q, d, c.volt, c.loss);
    };
    record();
    for (int t = 0; t < cfg.steps; ++t) {
      // the same unit draws serve every noise level, so traces are
      // comparable across d_v/d_q sweeps under a fixed seed
      VectorXd u_v(nc), u_q(nc);
      for (int i = 0; i < nc; ++i) u_v[i] = rng.symmetric(1.0);
      for (int i = 0; i < nc; ++i) u_q[i] = rng.symmetric(1.0);

      const VectorXd v_c = gather_c(v_full);
      const VectorXd v_meas = v_c.cwiseProduct(VectorXd::Ones(nc) + cfg.noise.d_v * u_v);
      VectorXd q_next = control_step_core(q, phi(bundle, v_meas), cfg.epsilon);
      q_next += cfg.noise.d_q * u_q;
      // the inverter hardware cannot leave its capability box
      q = bundle.box.project(q_next);
      v_full = power_flow(q);
      record();
    }
    SimTrace trace = tb.finish();
    trace.terminal_residual = (phi(bundle, gather_c(v_full)) - q).norm();
    return trace;
  } catch (const Error& e) {
    SimTrace trace = tb.finish();
    trace.diverged = true;
    trace.error = e.what();
    return trace;
  }
}

SimTrace run_episode_phi(const MatrixXd& x_cc, const VectorXd& tilde_v, const PhiFn& fn,
                         const ReactiveBox& box, const VectorXd& q0, const SimConfig& cfg,
                         const Equilibrium* eq) {
  cfg.validate();
  const int nc = static_cast<int>(x_cc.rows());
  Eigen::LLT<MatrixXd> llt;
  if (eq) llt.compute(x_cc);

  TraceBuilder tb(cfg.steps + 1, nc, nc);
  Rng rng(Rng::stream(cfg.seed, 0x51));
  VectorXd q = box.project(q0);
  VectorXd v = x_cc * q + tilde_v;
  auto record = [&]() {
    tb.push(v, q, eq ? lyapunov_value(llt, v, eq->v_c) : kNaN, kNaN, kNaN);
  };
  record();
  for (int t = 0; t < cfg.steps; ++t) {
    VectorXd u_v(nc), u_q(nc);
    for (int i = 0; i < nc; ++i) u_v[i] = rng.symmetric(1.0);
    for (int i = 0; i < nc; ++i) u_q[i] = rng.symmetric(1.0);
    const VectorXd v_meas = v.cwiseProduct(VectorXd::Ones(nc) + cfg.noise.d_v * u_v);
    q = box.project(control_step_core(q, fn(v_meas), cfg.epsilon) + cfg.noise.d_q * u_q);
    v = x_cc * q + tilde_v;
    record();
  }
  SimTrace trace = tb.finish();
  trace.terminal_residual = (fn(v) - q).norm();
  return trace;
}

DayReport run_day(const GridNetwork& net, const SensitivityMatrices& mat,
                  const ControllerBundle& bundle, std::span<const PowerScenario> profiles,
                  const SimConfig& cfg, const CostWeights& w, bool opf_reference,
                  const TraceSink& on_trace) {
  cfg.validate();
  if (profiles.empty()) throw StructureError("run_day needs at least one scenario");
  DayReport report;
  report.terminal_v.setZero(profiles.size(), mat.n());
  if (opf_reference) report.opf_total = CostTerms{};

  VectorXd q = bundle.box.project(VectorXd::Zero(bundle.dim()));
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    const PowerScenario& scen = profiles[k];
    std::optional<Equilibrium> eq;
    if (cfg.pf == PfModel::linear && bundle.certified) {
      try {
        eq = find_equilibrium(mat, bundle, scen);
      } catch (const ConvergenceError&) {
        // Lyapunov column stays empty for this point
      }
    }
    const SimTrace trace =
        run_episode(net, mat, bundle, scen, q, cfg, w, eq ? &*eq : nullptr);
    if (trace.diverged) {
      throw ConvergenceError("power flow failed at point " + std::to_string(k) + " (" +
                             scen.label + "): " + trace.error);
    }
    if (on_trace) on_trace(static_cast<int>(k), trace);
    DayPoint point;
    point.index = static_cast<int>(k);
    point.label = scen.label;
    point.residual = trace.terminal_residual;
    const int last = trace.steps_completed;
    report.terminal_v.row(k) = trace.v.row(last);
    point.lyapunov_end = trace.lyapunov[last];
    if (cfg.accumulate_per_step) {
      for (int t = 1; t <= last; ++t) {
        point.ctrl.volt += trace.volt_cost[t];
        point.ctrl.loss += trace.loss_cost[t];
      }
    } else {
      point.ctrl.volt = trace.volt_cost[last];
      point.ctrl.loss = trace.loss_cost[last];
    }
    q = trace.q_c.row(last).transpose();  // carry over to the next point

    // no-control baseline at the same operating point
    {
      const VectorXd q0 = VectorXd::Zero(bundle.dim());
      const VectorXd v = cfg.pf == PfModel::linear ? solve_lindistflow(mat, scen, q0)
                                                   : solve_distflow(net, scen, q0);
      const CostTerms c = cost_at(v, assemble_q(mat.map, scen.q_uncontrolled, q0), w);
      point.noctrl = c;
      const double mult = cfg.accumulate_per_step ? static_cast<double>(last) : 1.0;
      point.noctrl.volt *= mult;
      point.noctrl.loss *= mult;
    }
    if (opf_reference) {
      const OpfResult res = solve_opf(mat, scen, bundle.box, w);
      const VectorXd v = cfg.pf == PfModel::linear
                             ? res.v_star
                             : solve_distflow(net, scen, res.q_star);
      CostTerms c = cost_at(v, assemble_q(mat.map, scen.q_uncontrolled, res.q_star), w);
      const double mult = cfg.accumulate_per_step ? static_cast<double>(last) : 1.0;
      c.volt *= mult;
      c.loss *= mult;
      point.opf = c;
      report.opf_total->volt += c.volt;
      report.opf_total->loss += c.loss;
    }
    report.ctrl_total.volt += point.ctrl.volt;
    report.ctrl_total.loss += point.ctrl.loss;
    report.noctrl_total.volt += point.noctrl.volt;
    report.noctrl_total.loss += point.noctrl.loss;
    report.points.push_back(std::move(point));
  }
  if (report.noctrl_total.total() > 0) {
    report.improvement_pct =
        100.0 * (report.noctrl_total.total() - report.ctrl_total.total()) /
        report.noctrl_total.total();
  }
  return report;
}

// --- files -----------------------------------------------------------------

void save_trace_csv(const SimTrace& trace, std::span<const int> bus_ids,
                    const std::string& path) {
  std::ostringstream out;
  out << "step";
  for (int b = 1; b <= trace.v.cols(); ++b) out << ",v_bus" << b;
  for (int b : bus_ids) out << ",q_bus" << b;
  out << ",lyapunov,volt_cost,loss_cost\n";
  for (int t = 0; t < trace.v.rows(); ++t) {
    out << t;
    for (int i = 0; i < trace.v.cols(); ++i) out << "," << fmt_double(trace.v(t, i));
    for (int i = 0; i < trace.q_c.cols(); ++i) out << "," << fmt_double(trace.q_c(t, i));
    out << "," << (std::isnan(trace.lyapunov[t]) ? "" : fmt_double(trace.lyapunov[t]));
    out << "," << fmt_double(trace.volt_cost[t]) << "," << fmt_double(trace.loss_cost[t]);
    out << "\n";
  }
  out << "# terminal_residual=" << fmt_double(trace.terminal_residual) << "\n";
  if (trace.diverged) out << "# diverged: " << trace.error << "\n";
  write_file(path, out.str());
}

namespace {

nlohmann::json cost_json(const CostTerms& c) {
  return {{"volt", c.volt}, {"loss", c.loss}, {"total", c.total()}};
}

}  // namespace

std::string day_report_json(const DayReport& report, const SimConfig& cfg) {
  nlohmann::json j;
  j["format"] = "vvc-day-report";
  j["version"] = 1;
  j["config_hash"] = report.config_hash;
  j["pf_model"] = cfg.pf == PfModel::linear ? "linear" : "nonlinear";
  j["steps"] = cfg.steps;
  j["epsilon"] = cfg.epsilon;
  j["noise"] = {{"d_q", cfg.noise.d_q}, {"d_v", cfg.noise.d_v}};
  j["accumulation"] = cfg.accumulate_per_step ? "per_step" : "terminal";
  nlohmann::json totals;
  totals["controller"] = cost_json(report.ctrl_total);
  totals["no_control"] = cost_json(report.noctrl_total);
  if (report.opf_total) totals["opf"] = cost_json(*report.opf_total);
  totals["improvement_pct"] = report.improvement_pct;
  j["totals"] = std::move(totals);
  nlohmann::json points = nlohmann::json::array();
  for (const DayPoint& p : report.points) {
    nlohmann::json pj;
    pj["index"] = p.index;
    pj["label"] = p.label;
    pj["ctrl"] = cost_json(p.ctrl);
    pj["noctrl"] = cost_json(p.noctrl);
    if (p.opf) pj["opf"] = cost_json(*p.opf);
    pj["residual"] = p.residual;
    if (!std::isnan(p.lyapunov_end)) pj["lyapunov_end"] = p.lyapunov_end;
    points.push_back(std::move(pj));
  }
  j["points"] = std::move(points);
  return j.dump(1);
}

void save_day_report(const DayReport& report, const SimConfig& cfg, const std::string& path) {
  write_file(path, day_report_json(report, cfg));
}

}  // namespace vvc
