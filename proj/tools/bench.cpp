// Serial reference vs OpenMP kernels: wall time, speedup, and a bit-exact
// equality check (the parallel paths must not perturb any result).

#include <chrono>
#include <iomanip>
#include <iostream>

#include "vvc/learn.hpp"
#include "vvc/parallel.hpp"
#include "vvc/profiles.hpp"
#include "vvc/verify.hpp"

using namespace vvc;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void row(const std::string& name, double serial_ms, double parallel_ms, bool identical) {
  std::cout << std::left << std::setw(26) << name << std::right << std::fixed
            << std::setprecision(1) << std::setw(12) << serial_ms << std::setw(12)
            << parallel_ms << std::setw(10) << std::setprecision(2)
            << serial_ms / parallel_ms << std::setw(12) << (identical ? "yes" : "NO")
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : hardware_threads();
  std::cout << "threads: " << threads << " (hardware " << hardware_threads() << ")\n\n";
  std::cout << std::left << std::setw(26) << "kernel" << std::right << std::setw(12)
            << "serial ms" << std::setw(12) << "omp ms" << std::setw(10) << "speedup"
            << std::setw(12) << "identical\n";

  const auto net = load_network("data/ucsd49.net");
  const auto mat = build_matrices(net);
  const auto w = CostWeights::from_matrices(mat);
  VectorXd qlim(13);
  qlim << 2, 2, 2, 2, 2, 5, 2, 5, 5, 5, 5, 5, 5;
  const auto box = ReactiveBox::symmetric(qlim / net.base_mva);
  Partition part;
  part.subgraphs = {net.controllable};
  Rng rng(1);
  const auto bundle =
      make_bundle(net.controllable, part, box, 0.1, std::vector<int>{64, 64}, 10.0, rng);

  {
    VerifyOptions opt;
    opt.n_pairs = 20000;
    opt.threads = threads;
    auto t0 = Clock::now();
    const auto serial = check_monotonicity_serial(phi_raw_fn(bundle), bundle.dim(), opt);
    const double ts = ms_since(t0);
    t0 = Clock::now();
    const auto parallel = check_monotonicity(bundle, opt);
    const double tp = ms_since(t0);
    row("monotonicity sampling", ts, tp,
        serial.worst == parallel.worst && serial.violations == parallel.violations &&
            serial.positive_budget_terms == parallel.positive_budget_terms);
  }
  {
    const VectorXd lo = VectorXd::Constant(13, 0.9), hi = VectorXd::Constant(13, 1.1);
    auto t0 = Clock::now();
    const auto serial = estimate_lipschitz_serial(bundle, lo, hi, 5000, 2);
    const double ts = ms_since(t0);
    t0 = Clock::now();
    const auto parallel = estimate_lipschitz(bundle, lo, hi, 5000, 2, threads);
    const double tp = ms_since(t0);
    row("lipschitz sampling", ts, tp, serial.sampled == parallel.sampled);
  }
  {
    const auto profiles = synth_profiles(net, 1, 3);
    const std::span<const PowerScenario> slice(profiles.data(), 48);
    TrainConfig cfg;
    cfg.augmentation_factor = 1;
    auto t0 = Clock::now();
    const auto serial = generate_dataset_serial(net, mat, slice, box, w, cfg);
    const double ts = ms_since(t0);
    t0 = Clock::now();
    const auto parallel = generate_dataset(net, mat, slice, box, w, cfg, threads);
    const double tp = ms_since(t0);
    bool same = serial.samples.size() == parallel.samples.size();
    for (std::size_t i = 0; same && i < serial.samples.size(); ++i) {
      same = serial.samples[i].q_star == parallel.samples[i].q_star &&
             serial.samples[i].v_c == parallel.samples[i].v_c;
    }
    row("opf label generation", ts, tp, same);
  }
  {
    LabeledDataset data;
    Rng drng(4);
    std::vector<int> idx;
    for (int i = 0; i < 20000; ++i) {
      LabeledSample s;
      s.v_c = drng.vector(13, 0.9, 1.1);
      s.q_star = drng.vector(13, -0.3, 0.3);
      data.samples.push_back(std::move(s));
      idx.push_back(i);
    }
    auto t0 = Clock::now();
    const auto serial = evaluate_serial(bundle, data, idx);
    const double ts = ms_since(t0);
    t0 = Clock::now();
    const auto parallel = evaluate(bundle, data, idx, threads);
    const double tp = ms_since(t0);
    row("dataset evaluation", ts, tp,
        serial.mse == parallel.mse &&
            (serial.per_bus_mse - parallel.per_bus_mse).cwiseAbs().maxCoeff() == 0.0);
  }
  return 0;
}
