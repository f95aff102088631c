#pragma once

#include "vvc/common.hpp"

namespace vvc {

// One layer of an input convex network. Wz carries the propagated convex
// state and must stay entrywise nonnegative; Wx is the unconstrained skip
// path from the input. The first layer has an empty Wz.
struct IcnnLayer {
  MatrixXd Wz;
  MatrixXd Wx;
  VectorXd b;
};

// Scalar-output network, convex in its input: hidden layers apply a
// softplus with sharpness beta, the output layer is affine. Inputs are
// centered by `input_center` and divided by `input_scale` before the first
// layer; voltages sit near 1 and deviate by a few percent, so the scale
// keeps the network's working range O(1). The affine precompose preserves
// convexity.
struct IcnnModel {
  int input_dim = 0;
  double beta = 10.0;
  bool skip_links = true;
  double input_center = 1.0;
  double input_scale = 1.0;
  std::vector<IcnnLayer> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  // Shape chain, Wz >= 0, scalar output. Throws StructureError.
  void validate() const;
};

// Fresh model: Wx and b uniform in +-1/sqrt(input_dim), Wz entries
// |uniform| / fan_in so the initial map is convex with O(1) gradients.
IcnnModel make_icnn(int input_dim, std::span<const int> hidden, double beta, Rng& rng,
                    bool skip_links = true, double input_scale = 1.0);

double icnn_forward(const IcnnModel& m, const VectorXd& x);

// Exact gradient of the scalar output w.r.t. the input, by reverse
// accumulation through the layer recurrence.
VectorXd icnn_input_gradient(const IcnnModel& m, const VectorXd& x);

// Parameter-shaped buffer (gradients, momentum, ...).
struct IcnnGradients {
  std::vector<IcnnLayer> layers;
};

IcnnGradients zero_gradients(const IcnnModel& m);
void accumulate(IcnnGradients& acc, const IcnnGradients& g, double scale = 1.0);

// Upstream sensitivities for the two outputs an evaluation exposes: the
// scalar value g(x) and the input gradient grad g(x). The gradient head is
// the second-order path (forward-over-reverse through the recurrence); the
// training loss needs it because it depends on grad g, not g.
struct IcnnUpstream {
  double on_value = 0.0;
  VectorXd on_gradient;  // size 0 disables the second-order path
};

IcnnGradients icnn_param_gradient(const IcnnModel& m, const VectorXd& x,
                                  const IcnnUpstream& up);

// Clamp every Wz entry to max(entry, 0); everything else untouched.
void project_params_nonneg(IcnnModel& m);

// Analytic upper bound on the Lipschitz constant of x -> grad g(x), from
// layer operator norms and the softplus curvature beta/4. `fast` swaps the
// SVD norms for power-iteration estimates (training-loop budget checks);
// certification uses the exact norms.
double icnn_gradient_lipschitz_bound(const IcnnModel& m, bool fast = false);

// Checkpoint format: JSON with explicit shapes and a format-version field.
// Serialization round-trips bit-exactly (write -> read -> write identical).
std::string icnn_to_json(const IcnnModel& m);
IcnnModel icnn_from_json(const std::string& text);
void save_icnn(const IcnnModel& m, const std::string& path);
IcnnModel load_icnn(const std::string& path);

}  // namespace vvc
