#include "vvc/verify.hpp"

#include <json.hpp>

#include <cmath>

#include "vvc/parallel.hpp"

namespace vvc {

namespace {

struct PairSample {
  double s = 0.0;        // collective term
  double max_b = -std::numeric_limits<double>::infinity();
  int positive_b = 0;    // buses with b_i > tol in this pair
};

MonotonicityReport mono_impl(const PhiFn& fn, int dim, const VerifyOptions& opt,
                             bool serial) {
  if (dim <= 0) throw StructureError("monotonicity check needs a positive dimension");
  std::vector<PairSample> samples(opt.n_pairs);
  auto body = [&](std::int64_t i) {
    Rng rng = Rng::stream(opt.seed, static_cast<std::uint64_t>(i));
    const VectorXd v = rng.vector(dim, opt.v_lo, opt.v_hi);
    const VectorXd vp = rng.vector(dim, opt.v_lo, opt.v_hi);
    const VectorXd dphi = fn(v) - fn(vp);
    const VectorXd dv = v - vp;
    PairSample ps;
    for (int k = 0; k < dim; ++k) {
      const double b = dphi[k] * dv[k];
      ps.s += b;
      ps.max_b = std::max(ps.max_b, b);
      if (b > opt.tol) ++ps.positive_b;
    }
    samples[i] = ps;
  };
  if (serial) {
    for (std::int64_t i = 0; i < opt.n_pairs; ++i) body(i);
  } else {
    parallel_for(opt.n_pairs, opt.threads, body);
  }

  MonotonicityReport rep;
  rep.pairs = opt.n_pairs;
  rep.tol = opt.tol;
  for (const PairSample& ps : samples) {
    rep.worst = std::max(rep.worst, ps.s);
    if (ps.s > opt.tol) ++rep.violations;
    rep.positive_budget_terms += ps.positive_b;
    if (ps.positive_b > 0) ++rep.pairs_with_positive_budget;
    rep.max_budget = std::max(rep.max_budget, ps.max_b);
  }
  return rep;
}

}  // namespace

MonotonicityReport check_monotonicity(const PhiFn& phi_raw_map, int dim,
                                      const VerifyOptions& opt) {
  return mono_impl(phi_raw_map, dim, opt, false);
}

MonotonicityReport check_monotonicity(const ControllerBundle& bundle,
                                      const VerifyOptions& opt) {
  return mono_impl(phi_raw_fn(bundle), bundle.dim(), opt, false);
}

MonotonicityReport check_monotonicity_serial(const PhiFn& phi_raw_map, int dim,
                                             const VerifyOptions& opt) {
  return mono_impl(phi_raw_map, dim, opt, true);
}

BundleCertification certify_bundle(ControllerBundle& bundle, const SensitivityMatrices& mat,
                                   const CertifyOptions& opt) {
  // no up-front structural validation: the sampled checks themselves must
  // catch broken bundles (fault-injection sensitivity is part of the suite)
  BundleCertification cert;
  cert.present = true;
  cert.eps_used = bundle.epsilon;

  const MonotonicityReport mono = check_monotonicity(bundle, opt.mono);
  cert.mono_pairs = mono.pairs;
  cert.mono_violations = mono.violations;
  cert.mono_worst = mono.worst;
  if (mono.violations > 0) {
    cert.reasons.push_back("monotonicity violated on " + std::to_string(mono.violations) +
                           " of " + std::to_string(mono.pairs) + " pairs (worst " +
                           fmt_double(mono.worst) + ")");
  }

  const VectorXd lo = VectorXd::Constant(bundle.dim(), opt.mono.v_lo);
  const VectorXd hi = VectorXd::Constant(bundle.dim(), opt.mono.v_hi);
  const LipschitzEstimate lip =
      estimate_lipschitz(bundle, lo, hi, opt.lipschitz_samples, opt.mono.seed + 1,
                         opt.mono.threads);
  cert.l_analytic = lip.analytic;
  cert.l_sampled = lip.sampled;
  cert.eps_bound = max_stable_stepsize(lip.certified_value(), mat.x_norm);
  if (!(bundle.epsilon <= opt.safety * cert.eps_bound)) {
    cert.reasons.push_back("epsilon " + fmt_double(bundle.epsilon) + " exceeds " +
                           fmt_double(opt.safety) + " x bound " + fmt_double(cert.eps_bound));
  }

  cert.ok = cert.reasons.empty();
  bundle.certified = cert.ok;
  bundle.lipschitz = lip.certified_value();
  bundle.certification = cert;
  return cert;
}

LyapunovAudit lyapunov_audit(const SimTrace& trace, double tol) {
  LyapunovAudit audit;
  audit.tol = tol;
  const int rows = static_cast<int>(trace.lyapunov.size());
  if (rows == 0 || trace.lyapunov.hasNaN()) return audit;  // not applicable
  audit.applicable = true;
  audit.monotone = true;
  audit.final_value = trace.lyapunov[rows - 1];
  for (int t = 0; t + 1 < rows; ++t) {
    const double now = trace.lyapunov[t];
    if (now <= tol) continue;  // converged; no constraint below tolerance
    if (!(trace.lyapunov[t + 1] < now)) {
      audit.monotone = false;
      audit.first_increase_step = t;
      break;
    }
  }
  return audit;
}

std::string lyapunov_audit_json(const LyapunovAudit& audit) {
  nlohmann::json j;
  j["applicable"] = audit.applicable;
  j["monotone"] = audit.monotone;
  j["first_increase_step"] = audit.first_increase_step;
  if (!std::isnan(audit.final_value)) j["final_value"] = audit.final_value;
  j["tol"] = audit.tol;
  return j.dump(1);
}

std::string monotonicity_report_json(const MonotonicityReport& report) {
  nlohmann::json j;
  j["pairs"] = report.pairs;
  j["violations"] = report.violations;
  j["worst"] = report.worst;
  j["positive_budget_terms"] = report.positive_budget_terms;
  j["pairs_with_positive_budget"] = report.pairs_with_positive_budget;
  j["max_budget"] = report.max_budget;
  j["tol"] = report.tol;
  return j.dump(1);
}

}  // namespace vvc
