#include "vvc/profiles.hpp"

#include <cmath>

namespace vvc {

namespace {

double bump(double t, double center, double width) {
  const double z = (t - center) / width;
  return std::exp(-z * z);
}

// Demand archetypes: working-hours plateau, evening peak, flat base load.
double shape_office(double t) { return bump(t, 0.45, 0.16); }
double shape_evening(double t) { return bump(t, 0.82, 0.10); }
double shape_base(double) { return 0.55; }

// Solar bell between roughly 06:30 and 17:30, with a per-bus phase shift.
double pv_shape(double t, double shift) {
  const double s = t - shift;
  if (s < 0.27 || s > 0.73) return 0.0;
  const double v = std::sin(M_PI * (s - 0.27) / 0.46);
  return v * v;
}

}  // namespace

std::vector<PowerScenario> synth_profiles(const GridNetwork& net, int days,
                                          std::uint64_t seed, const SynthOptions& opt) {
  net.validate();
  const IndexMap map = IndexMap::build(net);
  const int N = net.n();

  // static per-bus character: demand size, archetype mixture, power factor,
  // PV size and panel orientation. Heterogeneous on purpose, so one bus's
  // voltage does not determine the rest of the network.
  Rng alloc(Rng::stream(seed, 0));
  VectorXd load_share(N), mix_office(N), mix_evening(N), mix_base(N), tan_phi(N);
  for (int i = 0; i < N; ++i) {
    load_share[i] = alloc.uniform(0.4, 1.6);
    double w1 = alloc.uniform(0.05, 1.0);
    double w2 = alloc.uniform(0.05, 1.0);
    double w3 = alloc.uniform(0.05, 1.0);
    const double ws = w1 + w2 + w3;
    mix_office[i] = w1 / ws;
    mix_evening[i] = w2 / ws;
    mix_base[i] = w3 / ws;
    tan_phi[i] = std::tan(std::acos(alloc.uniform(0.85, 0.95)));
  }
  load_share /= load_share.sum();
  VectorXd pv_share = VectorXd::Zero(N), pv_shift = VectorXd::Zero(N);
  for (int b : net.controllable) {
    pv_share[b - 1] = alloc.uniform(0.6, 1.4);
    pv_shift[b - 1] = alloc.uniform(-0.05, 0.05);
  }
  if (pv_share.sum() > 0) pv_share /= pv_share.sum();

  // normalize the mixed shapes so the network-wide demand peak hits the
  // configured level on an average day
  double peak_total = 0.0;
  for (int k = 0; k < opt.points_per_day; ++k) {
    const double t = (k + 0.5) / opt.points_per_day;
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
      total += load_share[i] * (mix_office[i] * shape_office(t) +
                                mix_evening[i] * shape_evening(t) + mix_base[i] * shape_base(t));
    }
    peak_total = std::max(peak_total, total);
  }
  const double load_scale = opt.load_peak_mw / peak_total;

  std::vector<PowerScenario> out;
  out.reserve(static_cast<std::size_t>(days) * opt.points_per_day);
  for (int day = 0; day < days; ++day) {
    Rng rng(Rng::stream(seed, 1000 + static_cast<std::uint64_t>(day)));
    const double day_load = 1.0 + rng.symmetric(opt.day_load_spread);
    const double day_pv = 1.0 + rng.symmetric(opt.day_pv_spread);
    for (int k = 0; k < opt.points_per_day; ++k) {
      const double t = (k + 0.5) / opt.points_per_day;
      PowerScenario s;
      s.p = VectorXd::Zero(N);
      s.q_uncontrolled = VectorXd::Zero(map.u_buses.size());
      VectorXd p_load_pu = VectorXd::Zero(N);
      for (int i = 0; i < N; ++i) {
        const double shape = mix_office[i] * shape_office(t) +
                             mix_evening[i] * shape_evening(t) + mix_base[i] * shape_base(t);
        const double jl = 1.0 + rng.symmetric(opt.point_jitter);
        p_load_pu[i] = -load_scale * day_load * load_share[i] * shape * jl / net.base_mva;
        s.p[i] = p_load_pu[i];
        if (pv_share[i] > 0) {
          // independent per-bus cloud passage on top of the day's cloudiness
          const double cloud = 1.0 + rng.symmetric(4.0 * opt.point_jitter);
          s.p[i] += opt.pv_peak_mw * day_pv * pv_share[i] *
                    pv_shape(t, pv_shift[i]) * std::max(0.0, cloud) / net.base_mva;
        }
      }
      for (std::size_t i = 0; i < map.u_buses.size(); ++i) {
        const int row = map.u_buses[i] - 1;
        s.q_uncontrolled[i] = p_load_pu[row] * tan_phi[row];
      }
      const int minutes = static_cast<int>(std::round(t * 24.0 * 60.0));
      char label[32];
      std::snprintf(label, sizeof(label), "d%02d %02d:%02d", day, minutes / 60, minutes % 60);
      s.label = label;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace vvc
