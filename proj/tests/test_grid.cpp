#include "vvc/grid.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace vvc;
using vvc::testing::chain_net;
using vvc::testing::one_line_net;
using vvc::testing::random_scenario;
using vvc::testing::random_tree;
using vvc::testing::ucsd49;
using vvc::testing::zero_scenario;

namespace {

// X_ij as the shared-root-path reactance sum, brute force over parent chains.
double common_path_x(const GridNetwork& net, int i, int j) {
  std::vector<int> parent(net.bus_count, -1);
  std::vector<double> edge_x(net.bus_count, 0.0);  // reactance to parent, p.u.
  std::vector<std::vector<int>> adj(net.bus_count);
  for (int e = 0; e < static_cast<int>(net.lines.size()); ++e) {
    adj[net.lines[e].from].push_back(e);
    adj[net.lines[e].to].push_back(e);
  }
  std::vector<int> stack{0};
  std::vector<char> seen(net.bus_count, 0);
  seen[0] = 1;
  while (!stack.empty()) {
    int b = stack.back();
    stack.pop_back();
    for (int e : adj[b]) {
      int other = net.lines[e].from == b ? net.lines[e].to : net.lines[e].from;
      if (seen[other]) continue;
      seen[other] = 1;
      parent[other] = b;
      edge_x[other] = net.lines[e].x_ohm / net.z_base();
      stack.push_back(other);
    }
  }
  auto ancestors = [&](int b) {
    std::vector<int> out;
    for (; b != 0; b = parent[b]) out.push_back(b);
    return out;
  };
  const auto anc_i = ancestors(i);
  double sum = 0.0;
  for (int b : ancestors(j)) {
    if (std::find(anc_i.begin(), anc_i.end(), b) != anc_i.end()) sum += edge_x[b];
  }
  return sum;
}

}  // namespace

TEST_CASE("one-line network gives identity sensitivities") {
  const auto mat = build_matrices(one_line_net());
  REQUIRE(mat.R.rows() == 1);
  CHECK(mat.R(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mat.X(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mat.x_norm == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("chain network X matches the explicit incidence-matrix product") {
  const auto mat = build_matrices(chain_net());
  CHECK(mat.X(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(mat.X(0, 1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(mat.X(1, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(mat.X(1, 1) == doctest::Approx(0.3).epsilon(1e-12));

  // independent route: build M by hand and invert
  MatrixXd M(2, 2);
  M << -1, 1, 0, -1;
  VectorXd dx(2);
  dx << 0.1, 0.2;
  const MatrixXd Minv = M.inverse();
  const MatrixXd X_ref = Minv.transpose() * dx.asDiagonal() * Minv;
  CHECK((mat.X - X_ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("ucsd49 line (0,1) lands in the diagonal scaling") {
  const auto net = ucsd49();
  CHECK(net.bus_count == 49);
  CHECK(net.controllable.size() == 13);
  const double zb = net.z_base();
  CHECK(zb == doctest::Approx(12.47 * 12.47 / 10.0));
  const auto mat = build_matrices(net);
  // bus 1's root path is exactly line (0,1)
  CHECK(mat.R(0, 0) == doctest::Approx(0.0174 / zb).epsilon(1e-12));
  CHECK(mat.X(0, 0) == doctest::Approx(0.0002 / zb).epsilon(1e-12));
}

TEST_CASE("X is symmetric positive definite and matches shared-path sums") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = random_tree(2 + static_cast<int>(rng.uniform_index(9)), rng);
    const auto mat = build_matrices(net);
    CHECK((mat.X - mat.X.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(mat.X);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
    for (int i = 1; i <= net.n(); ++i) {
      for (int j = 1; j <= net.n(); ++j) {
        CHECK(mat.X(i - 1, j - 1) ==
              doctest::Approx(common_path_x(net, i, j)).epsilon(1e-10));
      }
    }
    // power iteration agrees with a dense eigensolver
    CHECK(mat.x_norm ==
          doctest::Approx(Eigen::SelfAdjointEigenSolver<MatrixXd>(mat.X_cc)
                              .eigenvalues()
                              .maxCoeff())
              .epsilon(1e-9));
  }
}

TEST_CASE("lindistflow: zero injections give flat voltage") {
  const auto net = ucsd49();
  const auto mat = build_matrices(net);
  const auto scen = zero_scenario(net);
  const VectorXd v = solve_lindistflow(mat, scen, VectorXd::Zero(13));
  CHECK((v - VectorXd::Ones(48)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lindistflow chain example") {
  const auto net = chain_net({1, 2});
  const auto mat = build_matrices(net);
  auto scen = zero_scenario(net);
  VectorXd q_c(2);
  q_c << 0.0, -0.1;
  const VectorXd v = solve_lindistflow(mat, scen, q_c);
  CHECK(v[0] == doctest::Approx(0.99).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.97).epsilon(1e-12));
}

TEST_CASE("lindistflow superposition in q") {
  Rng rng(7);
  const auto net = ucsd49();
  const auto mat = build_matrices(net);
  const auto scen = random_scenario(net, rng, 0.2);
  const VectorXd q0 = rng.vector(13, -0.3, 0.3);
  const VectorXd dq = rng.vector(13, -0.2, 0.2);
  const VectorXd v0 = solve_lindistflow(mat, scen, q0);
  const VectorXd v1 = solve_lindistflow(mat, scen, q0 + dq);
  const VectorXd pred = submatrix(mat.X, mat.map.c_rows(), mat.map.c_rows()) * dq;
  // v changes on controllable rows by X_cc dq
  const auto c_rows = mat.map.c_rows();
  for (std::size_t i = 0; i < c_rows.size(); ++i) {
    CHECK((v1 - v0)[c_rows[i]] == doctest::Approx(pred[i]).epsilon(1e-10));
  }
}

TEST_CASE("distflow: zero injections is the exact flat solution") {
  const auto net = ucsd49();
  const auto scen = zero_scenario(net);
  const VectorXd v = solve_distflow(net, scen, VectorXd::Zero(13));
  CHECK((v - VectorXd::Ones(48)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("distflow single line matches the closed-form quadratic root") {
  // one line, r = 0, x = 0.1 p.u., q_1 = -0.1:
  //   Q = -q + x Q^2  =>  x Q^2 - Q - q = 0, take the small root
  GridNetwork net;
  net.bus_count = 2;
  net.base_kv = 1.0;
  net.base_mva = 1.0;
  net.lines = {{0, 1, 0.0, 0.1}};
  net.controllable = {1};
  auto scen = zero_scenario(net);
  VectorXd q_c(1);
  q_c << -0.1;
  const VectorXd v = solve_distflow(net, scen, q_c, {1e-12, 500, 0.5});

  const double x = 0.1, q = -0.1;
  const double Q = (1.0 - std::sqrt(1.0 + 4.0 * x * q)) / (2.0 * x);
  const double v2 = 1.0 - 2.0 * x * Q + x * x * Q * Q;
  CHECK(v[0] == doctest::Approx(std::sqrt(v2)).epsilon(1e-10));
}

TEST_CASE("distflow tracks lindistflow to first order on ucsd49") {
  Rng rng(11);
  const auto net = ucsd49();
  const auto mat = build_matrices(net);
  auto scen = random_scenario(net, rng, 0.05);
  const VectorXd q_c = rng.vector(13, -0.05, 0.05);

  SUBCASE("regression bound for small injections") {
    const VectorXd vd = solve_distflow(net, scen, q_c);
    const VectorXd vl = solve_lindistflow(mat, scen, q_c);
    CHECK((vd - vl).cwiseAbs().maxCoeff() <= 5e-3);
  }

  SUBCASE("gap shrinks quadratically under injection scaling") {
    auto gap_at = [&](double alpha) {
      PowerScenario s = scen;
      s.p *= alpha;
      s.q_uncontrolled *= alpha;
      const VectorXd vd = solve_distflow(net, s, alpha * q_c, {1e-12, 500, 0.5});
      const VectorXd vl = solve_lindistflow(mat, s, alpha * q_c);
      return (vd - vl).cwiseAbs().maxCoeff();
    };
    // use a larger base so the quarter-scale gap stays well above roundoff
    scen.p *= 3.0;
    scen.q_uncontrolled *= 3.0;
    const double g1 = gap_at(1.0), g2 = gap_at(0.5), g4 = gap_at(0.25);
    REQUIRE(g4 > 1e-10);
    CHECK(g1 / g2 >= 3.5);
    CHECK(g1 / g2 <= 4.5);
    CHECK(g2 / g4 >= 3.5);
    CHECK(g2 / g4 <= 4.5);
  }
}

TEST_CASE("distflow error paths") {
  GridNetwork net;
  net.bus_count = 2;
  net.base_kv = 1.0;
  net.base_mva = 1.0;
  net.lines = {{0, 1, 0.0, 0.1}};
  net.controllable = {1};
  const auto scen = zero_scenario(net);

  SUBCASE("infeasible loading collapses") {
    VectorXd q_c(1);
    q_c << -2.6;  // past the loadability limit of the one-line feeder
    CHECK_THROWS_AS(solve_distflow(net, scen, q_c), NumericError);
  }
  SUBCASE("sweep cap reports divergence") {
    VectorXd q_c(1);
    q_c << -0.5;
    DistFlowOptions opt;
    opt.tol = 1e-14;
    opt.max_sweeps = 2;
    CHECK_THROWS_AS(solve_distflow(net, scen, q_c, opt), ConvergenceError);
  }
}

TEST_CASE("partition_controllable") {
  SUBCASE("full control reduces to v_hat") {
    Rng rng(3);
    auto net = chain_net({1, 2});
    const auto mat = build_matrices(net);
    const auto scen = random_scenario(net, rng, 0.3);
    const auto part = partition_controllable(mat, scen);
    const VectorXd v_hat = mat.R * scen.p + VectorXd::Ones(2);
    CHECK((part.tilde_v - v_hat).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("chain with C={2} extracts the right submatrix") {
    const auto mat = build_matrices(chain_net({2}));
    REQUIRE(mat.X_cc.rows() == 1);
    CHECK(mat.X_cc(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
  }
  SUBCASE("reconstruction agrees with lindistflow") {
    Rng rng(17);
    const auto net = ucsd49();
    const auto mat = build_matrices(net);
    for (int trial = 0; trial < 10; ++trial) {
      const auto scen = random_scenario(net, rng, 0.3);
      const VectorXd q_c = rng.vector(13, -0.5, 0.5);
      const auto part = partition_controllable(mat, scen);
      const VectorXd v_c = part.x_cc * q_c + part.tilde_v;
      const VectorXd v = solve_lindistflow(mat, scen, q_c);
      const auto c_rows = mat.map.c_rows();
      for (std::size_t i = 0; i < c_rows.size(); ++i) {
        CHECK(std::abs(v_c[i] - v[c_rows[i]]) <= 1e-12);
      }
    }
  }
  SUBCASE("empty controllable set is rejected") {
    const auto mat = build_matrices(chain_net({}));
    CHECK_THROWS_AS(partition_controllable(mat, zero_scenario(chain_net({}))),
                    StructureError);
  }
}

TEST_CASE("network validation rejects broken topologies") {
  GridNetwork net;
  net.base_kv = 1.0;
  net.base_mva = 1.0;

  SUBCASE("cycle names the offending line") {
    net.bus_count = 3;
    net.lines = {{0, 1, 0.0, 0.1}, {1, 2, 0.0, 0.1}, {2, 0, 0.0, 0.1}};
    try {
      net.validate();
      FAIL("expected StructureError");
    } catch (const StructureError& e) {
      CHECK(std::string(e.what()).find("(2, 0)") != std::string::npos);
    }
  }
  SUBCASE("disconnected bus") {
    net.bus_count = 4;
    net.lines = {{0, 1, 0.0, 0.1}, {0, 1, 0.0, 0.2}, {2, 3, 0.0, 0.1}};
    CHECK_THROWS_AS(net.validate(), StructureError);
  }
  SUBCASE("zero reactance") {
    net.bus_count = 2;
    net.lines = {{0, 1, 0.1, 0.0}};
    CHECK_THROWS_AS(net.validate(), StructureError);
  }
  SUBCASE("controllable out of range") {
    net.bus_count = 2;
    net.lines = {{0, 1, 0.0, 0.1}};
    net.controllable = {5};
    CHECK_THROWS_AS(net.validate(), StructureError);
  }
}

TEST_CASE("network and scenario files round-trip") {
  namespace fs = std::filesystem;
  const fs::path tmp = fs::temp_directory_path() / "vvc_grid_io_test";
  fs::create_directories(tmp);

  const auto net = ucsd49();
  const std::string net_path = (tmp / "net.net").string();
  save_network(net, net_path);
  const auto net2 = load_network(net_path);
  CHECK(net2.bus_count == net.bus_count);
  CHECK(net2.controllable == net.controllable);
  CHECK(net2.lines.size() == net.lines.size());
  for (std::size_t i = 0; i < net.lines.size(); ++i) {
    CHECK(net2.lines[i].r_ohm == net.lines[i].r_ohm);
    CHECK(net2.lines[i].x_ohm == net.lines[i].x_ohm);
  }

  Rng rng(5);
  std::vector<PowerScenario> scen;
  for (int i = 0; i < 4; ++i) {
    auto s = random_scenario(net, rng, 0.2);
    s.label = "t" + std::to_string(i);
    scen.push_back(s);
  }
  const std::string csv_path = (tmp / "scen.csv").string();
  save_scenarios(scen, net, csv_path);
  const auto scen2 = load_scenarios(csv_path, net);
  REQUIRE(scen2.size() == scen.size());
  for (std::size_t i = 0; i < scen.size(); ++i) {
    CHECK(scen2[i].label == scen[i].label);
    CHECK((scen2[i].p - scen[i].p).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((scen2[i].q_uncontrolled - scen[i].q_uncontrolled).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("scenario parser reports bad rows and columns") {
  namespace fs = std::filesystem;
  const fs::path tmp = fs::temp_directory_path() / "vvc_grid_io_test";
  fs::create_directories(tmp);
  const auto net = chain_net({2});  // C = {2}, U = {1}

  SUBCASE("short row is named") {
    const std::string path = (tmp / "bad_row.csv").string();
    write_file(path, "timestamp,p_bus1,p_bus2,q_bus1\nt0,0.1,0.2,0.0\nt1,0.1,0.2\n");
    try {
      load_scenarios(path, net);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
  }
  SUBCASE("reactive column for a controllable bus is rejected") {
    const std::string path = (tmp / "bad_col.csv").string();
    write_file(path, "timestamp,p_bus1,p_bus2,q_bus1,q_bus2\nt0,0,0,0,0\n");
    CHECK_THROWS_AS(load_scenarios(path, net), ParseError);
  }
  SUBCASE("missing p column is rejected") {
    const std::string path = (tmp / "missing.csv").string();
    write_file(path, "timestamp,p_bus1,q_bus1\nt0,0,0\n");
    CHECK_THROWS_AS(load_scenarios(path, net), ParseError);
  }
}
