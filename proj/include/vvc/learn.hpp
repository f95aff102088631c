#pragma once

#include "vvc/common.hpp"
#include "vvc/controller.hpp"
#include "vvc/grid.hpp"
#include "vvc/opf.hpp"

namespace vvc {

struct LabeledSample {
  VectorXd v_c;     // voltage at the OPF optimum over C, p.u.
  VectorXd q_star;  // optimal setpoints, p.u.
  int day = 0;
  int base_index = 0;  // profile row the sample came from
};

struct LabeledDataset {
  std::vector<LabeledSample> samples;
  std::vector<int> train_idx;
  std::vector<int> val_idx;
  std::string provenance;   // generator config hash
  int skipped = 0;          // OPF failures, logged not fatal
  std::string solver_note;  // tolerance / model variant, echoed in the CSV
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // multiplicative, per epoch
  double momentum = 0.9;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double augmentation_noise = 0.10;  // multiplicative uniform, +-fraction
  int augmentation_factor = 3;       // noisy copies per base point
  double weight_decay = 0.0;
  int validation_days = 1;           // trailing days held out
  int points_per_day = 96;           // 15-minute sampling
  int nonlinear_refine_passes = 0;   // OPF label refinement passes
  // Bundle-level budget for the analytic curvature bound; 0 disables.
  // Models whose bound overruns their share get their output layer scaled
  // back after the step, like the nonnegativity projection.
  double lipschitz_cap = 0.0;

  void validate() const;
};

// Augments every profile point with noisy copies, solves the OPF oracle per
// point and collects (v_C at the optimum, q*_C). Sample order depends only
// on (profiles, cfg), never on the thread count.
LabeledDataset generate_dataset(const GridNetwork& net, const SensitivityMatrices& mat,
                                std::span<const PowerScenario> profiles,
                                const ReactiveBox& box, const CostWeights& w,
                                const TrainConfig& cfg, int threads = 0);
// Reference implementation kept for testing the parallel kernel.
LabeledDataset generate_dataset_serial(const GridNetwork& net, const SensitivityMatrices& mat,
                                       std::span<const PowerScenario> profiles,
                                       const ReactiveBox& box, const CostWeights& w,
                                       const TrainConfig& cfg);

struct TrainResult {
  std::vector<double> train_loss;  // per epoch, phi_raw MSE on the train split
  std::vector<double> val_loss;
};

// Mini-batch gradient descent with momentum on the squared fitting error of
// phi_raw; every step re-projects Wz onto the nonnegative orthant so each
// checkpoint keeps the convexity invariant. Deterministic given cfg.seed;
// batch-internal fan-out reduces in fixed chunk order.
TrainResult train(ControllerBundle& bundle, const LabeledDataset& data,
                  const TrainConfig& cfg, int threads = 1);

struct EvalResult {
  double mse = 0.0;
  VectorXd per_bus_mse;
};

// Deployed (clamped) phi against the labels.
EvalResult evaluate(const ControllerBundle& bundle, const LabeledDataset& data,
                    std::span<const int> indices, int threads = 0);
EvalResult evaluate(const ControllerBundle& bundle, const LabeledDataset& data,
                    int threads = 0);
EvalResult evaluate_phi(const PhiFn& fn, const LabeledDataset& data,
                        std::span<const int> indices);
EvalResult evaluate_serial(const ControllerBundle& bundle, const LabeledDataset& data,
                           std::span<const int> indices);

// Label file: CSV with v_C in p.u. and q*_C in MVar plus a JSON sidecar
// (<path>.meta.json) carrying generator config, seed and the split.
void save_dataset(const LabeledDataset& data, std::span<const int> bus_ids,
                  double base_mva, const TrainConfig& cfg, const std::string& path,
                  const std::string& config_hash = "");
LabeledDataset load_dataset(const std::string& path, std::span<const int> bus_ids,
                            double base_mva);

void save_loss_history(const TrainResult& result, const std::string& path);

}  // namespace vvc
