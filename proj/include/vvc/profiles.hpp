#pragma once

#include "vvc/grid.hpp"

namespace vvc {

// Synthetic day profiles standing in for the unpublished campus data: a
// double-peak load shape with a midday PV bell on the controllable buses,
// scaled so busy hours sag and sunny hours overshoot the nominal voltage.
struct SynthOptions {
  int points_per_day = 96;
  double load_peak_mw = 40.0;     // network-wide demand peak
  double pv_peak_mw = 45.0;       // network-wide PV peak
  double power_factor = 0.90;     // lagging, for the reactive load profiles
  double point_jitter = 0.05;     // per-point multiplicative noise
  double day_load_spread = 0.12;  // day-to-day load factor, +-
  double day_pv_spread = 0.25;    // day-to-day cloudiness factor, +-
};

std::vector<PowerScenario> synth_profiles(const GridNetwork& net, int days,
                                          std::uint64_t seed, const SynthOptions& opt = {});

}  // namespace vvc
