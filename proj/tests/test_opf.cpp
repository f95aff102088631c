#include "vvc/opf.hpp"

#include <doctest.h>

#include "support.hpp"

using namespace vvc;
using vvc::testing::chain_net;
using vvc::testing::random_scenario;
using vvc::testing::random_tree;
using vvc::testing::ucsd49;
using vvc::testing::zero_scenario;

TEST_CASE("cost terms") {
  const auto net = ucsd49();
  const auto mat = build_matrices(net);
  const auto w = CostWeights::from_matrices(mat);
  CHECK(w.voltage_weight == 100.0);

  SUBCASE("flat voltage, zero reactive gives zero cost") {
    const auto c = cost(mat, zero_scenario(net), VectorXd::Zero(13), w);
    CHECK(c.volt == 0.0);
    CHECK(c.loss == 0.0);
  }
  SUBCASE("two-bus hand case") {
    VectorXd v(2);
    v << 1.01, 0.99;
    CostWeights w2;
    w2.voltage_weight = 100.0;
    w2.loss_matrix = MatrixXd::Identity(2, 2);
    const auto c = cost_at(v, VectorXd::Zero(2), w2);
    CHECK(c.volt == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(c.loss == 0.0);
  }
}

TEST_CASE("solve_opf") {
  SUBCASE("singleton feasible set returns its only point") {
    const auto net = ucsd49();
    const auto mat = build_matrices(net);
    const auto w = CostWeights::from_matrices(mat);
    Rng rng(1);
    const auto scen = random_scenario(net, rng, 0.3);
    ReactiveBox box;
    box.q_min = VectorXd::Zero(13);
    box.q_max = VectorXd::Zero(13);
    const auto res = solve_opf(mat, scen, box, w);
    CHECK(res.q_star.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("scalar case matches the closed form") {
    // min 100 (x q + vt - 1)^2 + r q^2  ->  q* = -100 x (vt-1) / (100 x^2 + r)
    GridNetwork net;
    net.bus_count = 2;
    net.base_kv = 1.0;
    net.base_mva = 1.0;
    net.lines = {{0, 1, 0.05, 0.2}};
    net.controllable = {1};
    const auto mat = build_matrices(net);
    const auto w = CostWeights::from_matrices(mat);
    PowerScenario scen = zero_scenario(net);
    scen.p = VectorXd::Constant(1, -0.4);  // sag: vt = 1 + R p

    const double x = mat.X(0, 0), r = mat.R(0, 0);
    const double vt = 1.0 + r * (-0.4);
    const double q_closed = -100.0 * x * (vt - 1.0) / (100.0 * x * x + r);
    // wide box keeps the optimum interior
    const auto box = ReactiveBox::symmetric(VectorXd::Constant(1, 10.0));
    const auto res = solve_opf(mat, scen, box, w);
    CHECK(res.q_star[0] == doctest::Approx(q_closed).epsilon(1e-8));
    CHECK(res.kkt_residual < 1e-8);
  }

  SUBCASE("random small instances: suboptimality, KKT, multi-start, complementarity") {
    Rng rng(2);
    for (int trial = 0; trial < 4; ++trial) {
      const auto net = random_tree(5, rng, 3);
      const auto mat = build_matrices(net);
      const auto w = CostWeights::from_matrices(mat);
      const auto scen = random_scenario(net, rng, 0.5);
      const auto box = ReactiveBox::symmetric(rng.vector(3, 0.05, 0.4));
      const auto res = solve_opf(mat, scen, box, w);
      CHECK(res.kkt_residual < 1e-8);

      // never beaten by random feasible points
      for (int i = 0; i < 10000; ++i) {
        VectorXd q(3);
        for (int k = 0; k < 3; ++k) q[k] = rng.uniform(box.q_min[k], box.q_max[k]);
        CHECK(cost(mat, scen, q, w).total() >= res.objective - 1e-10);
      }

      // restarts agree (unique minimum of a strictly convex QP)
      for (int s = 0; s < 5; ++s) {
        OpfOptions opt;
        VectorXd q0(3);
        for (int k = 0; k < 3; ++k) q0[k] = rng.uniform(box.q_min[k], box.q_max[k]);
        opt.start = q0;
        const auto res2 = solve_opf(mat, scen, box, w, opt);
        CHECK((res2.q_star - res.q_star).cwiseAbs().maxCoeff() <= 1e-6);
      }

      // complementarity with correctly-signed gradients on the bounds
      const auto c_rows = mat.map.c_rows();
      const auto u_rows = mat.map.u_rows();
      MatrixXd A(mat.n(), c_rows.size());
      for (std::size_t j = 0; j < c_rows.size(); ++j) A.col(j) = mat.X.col(c_rows[j]);
      const VectorXd v0 = solve_lindistflow(mat, scen, VectorXd::Zero(3));
      const VectorXd grad =
          200.0 * (A.transpose() * (A * res.q_star + v0 - VectorXd::Ones(mat.n()))) +
          2.0 * (submatrix(mat.R, c_rows, c_rows) * res.q_star) +
          2.0 * (submatrix(mat.R, c_rows, u_rows) * scen.q_uncontrolled);
      for (int k = 0; k < 3; ++k) {
        const bool at_lo = res.q_star[k] <= box.q_min[k] + 1e-9;
        const bool at_hi = res.q_star[k] >= box.q_max[k] - 1e-9;
        if (at_lo) {
          CHECK(grad[k] >= -1e-7);
        } else if (at_hi) {
          CHECK(grad[k] <= 1e-7);
        } else {
          CHECK(std::abs(grad[k]) <= 1e-7);
        }
      }
    }
  }

  SUBCASE("projected-gradient objective is nonincreasing") {
    Rng rng(3);
    const auto net = random_tree(6, rng, 4);
    const auto mat = build_matrices(net);
    const auto w = CostWeights::from_matrices(mat);
    const auto scen = random_scenario(net, rng, 0.5);
    const auto box = ReactiveBox::symmetric(rng.vector(4, 0.05, 0.3));
    OpfOptions opt;
    opt.record_history = true;
    const auto res = solve_opf(mat, scen, box, w, opt);
    REQUIRE(res.history.size() >= 2);
    for (std::size_t i = 1; i < res.history.size(); ++i) {
      CHECK(res.history[i] <= res.history[i - 1] + 1e-12);
    }
  }

  SUBCASE("iteration cap reports non-convergence") {
    const auto net = ucsd49();
    const auto mat = build_matrices(net);
    const auto w = CostWeights::from_matrices(mat);
    Rng rng(4);
    const auto scen = random_scenario(net, rng, 0.3);
    const auto box = ReactiveBox::symmetric(VectorXd::Constant(13, 0.5));
    OpfOptions opt;
    opt.max_iters = 2;
    CHECK_THROWS_AS(solve_opf(mat, scen, box, w, opt), ConvergenceError);
  }
}

TEST_CASE("refined labels stay close to the linear oracle at small loading") {
  const auto net = ucsd49();
  const auto mat = build_matrices(net);
  const auto w = CostWeights::from_matrices(mat);
  Rng rng(5);
  const auto scen = random_scenario(net, rng, 0.05);
  const auto box = ReactiveBox::symmetric(VectorXd::Constant(13, 0.3));
  OpfOptions opt;
  opt.refine_passes = 5;
  const auto lin = solve_opf(mat, scen, box, w);
  const auto ref = solve_opf_refined(net, mat, scen, box, w, opt);
  CHECK((lin.q_star - ref.q_star).cwiseAbs().maxCoeff() < 5e-2);
  CHECK(ref.kkt_residual < 1e-8);
}
