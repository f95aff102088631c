#include "vvc/controller.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

#include "support.hpp"

using namespace vvc;

namespace {

const std::vector<int> kUcsdC = {14, 15, 17, 19, 20, 27, 29, 30, 32, 34, 38, 39, 41};

ReactiveBox unit_box(int dim, double lim = 1.0) {
  return ReactiveBox::symmetric(VectorXd::Constant(dim, lim));
}

ControllerBundle fresh_bundle(const Partition& part, std::uint64_t seed = 1,
                              double eps = 0.1, double box_lim = 1.0) {
  std::set<int> ids;
  for (const auto& sub : part.subgraphs) ids.insert(sub.begin(), sub.end());
  std::vector<int> bus_ids(ids.begin(), ids.end());
  Rng rng(seed);
  return make_bundle(bus_ids, part, unit_box(static_cast<int>(bus_ids.size()), box_lim),
                     eps, std::vector<int>{8, 8}, 10.0, rng);
}

void zero_models(ControllerBundle& b) {
  for (auto& m : b.models) {
    for (auto& ly : m.layers) {
      ly.Wz.setZero();
      ly.Wx.setZero();
      ly.b.setZero();
    }
  }
}

}  // namespace

TEST_CASE("clique cover: edgeless graph gives singletons") {
  const auto part = cover_cliques(CommGraph::none(kUcsdC));
  REQUIRE(part.subgraphs.size() == 13);
  for (std::size_t i = 0; i < part.subgraphs.size(); ++i) {
    CHECK(part.subgraphs[i].size() == 1);
  }
  std::set<int> covered;
  for (const auto& s : part.subgraphs) covered.insert(s.begin(), s.end());
  CHECK(covered == std::set<int>(kUcsdC.begin(), kUcsdC.end()));
}

TEST_CASE("clique cover: complete graph gives one subgraph") {
  const auto part = cover_cliques(CommGraph::full(kUcsdC));
  REQUIRE(part.subgraphs.size() == 1);
  CHECK(part.subgraphs[0] == kUcsdC);
}

TEST_CASE("clique cover recovers the distributed reference partitions") {
  SUBCASE("five-subgraph topology") {
    const std::vector<std::vector<int>> cliques = {
        {14, 15, 17, 20}, {19, 32, 34}, {27, 30, 38, 39}, {29}, {41}};
    const auto g = CommGraph::from_cliques(kUcsdC, cliques);
    const auto part = cover_cliques(g);
    validate_partition(part, g);
    REQUIRE(part.subgraphs.size() == 5);
    std::set<std::vector<int>> got(part.subgraphs.begin(), part.subgraphs.end());
    std::set<std::vector<int>> want(cliques.begin(), cliques.end());
    CHECK(got == want);
    // the hand-specified partition is also accepted verbatim
    Partition manual;
    manual.subgraphs = cliques;
    validate_partition(manual, g);
  }
  SUBCASE("two-subgraph topology with overlap") {
    const std::vector<std::vector<int>> cliques = {
        {14, 15, 17, 19, 20, 27, 29, 30, 32, 34, 38, 39}, {27, 30, 38, 39, 41}};
    const auto g = CommGraph::from_cliques(kUcsdC, cliques);
    const auto part = cover_cliques(g);
    validate_partition(part, g);
    REQUIRE(part.subgraphs.size() == 2);
    std::set<std::vector<int>> got(part.subgraphs.begin(), part.subgraphs.end());
    std::set<std::vector<int>> want(cliques.begin(), cliques.end());
    CHECK(got == want);
  }
}

TEST_CASE("partition validation catches non-cliques and gaps") {
  const std::vector<std::vector<int>> cliques = {{14, 15}, {17}};
  const auto g = CommGraph::from_cliques(std::vector<int>{14, 15, 17}, cliques);
  Partition bad;
  bad.subgraphs = {{14, 17}, {15}};  // 14-17 do not communicate
  CHECK_THROWS_AS(validate_partition(bad, g), StructureError);
  Partition gap;
  gap.subgraphs = {{14, 15}};
  CHECK_THROWS_AS(validate_partition(gap, g), StructureError);
}

TEST_CASE("phi_raw") {
  Partition part;
  part.subgraphs = {{14, 15, 17}, {17, 19}};  // overlapping on 17
  auto bundle = fresh_bundle(part, 3);

  SUBCASE("zero models give zero output") {
    zero_models(bundle);
    Rng rng(4);
    const VectorXd v = rng.vector(bundle.dim(), 0.9, 1.1);
    CHECK(phi_raw(bundle, v).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("overlapping subgraphs scatter-add") {
    Rng rng(5);
    const VectorXd v = rng.vector(bundle.dim(), 0.95, 1.05);
    // recompute by hand from the two models
    VectorXd expect = VectorXd::Zero(4);  // bus order 14,15,17,19
    {
      VectorXd v0(3);
      v0 << v[0], v[1], v[2];
      const VectorXd g0 = icnn_input_gradient(bundle.models[0], v0);
      expect[0] -= g0[0];
      expect[1] -= g0[1];
      expect[2] -= g0[2];
      VectorXd v1(2);
      v1 << v[2], v[3];
      const VectorXd g1 = icnn_input_gradient(bundle.models[1], v1);
      expect[2] -= g1[0];
      expect[3] -= g1[1];
    }
    CHECK((phi_raw(bundle, v) - expect).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("sampled collective monotonicity") {
    Rng rng(6);
    for (int i = 0; i < 10000; ++i) {
      const VectorXd v = rng.vector(bundle.dim(), 0.9, 1.1);
      const VectorXd vp = rng.vector(bundle.dim(), 0.9, 1.1);
      CHECK((phi_raw(bundle, v) - phi_raw(bundle, vp)).dot(v - vp) <= 1e-9);
    }
  }
}

TEST_CASE("quadratic surrogate gradient field") {
  // g(v) = 0.5 |v - 1|^2 has gradient v - 1, so phi_raw = -(v - 1);
  // the surrogate stands in for a bundle through the generic map
  const int dim = 4;
  PhiFn raw = [](const VectorXd& v) -> VectorXd {
    return -(v - VectorXd::Ones(v.size()));
  };
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const VectorXd v = rng.vector(dim, 0.9, 1.1);
    CHECK((raw(v) + (v - VectorXd::Ones(dim))).cwiseAbs().maxCoeff() <= 1e-6);
  }
  // difference quotient is exactly 1
  double max_quot = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const VectorXd a = rng.vector(dim, 0.9, 1.1);
    const VectorXd b = rng.vector(dim, 0.9, 1.1);
    if ((a - b).norm() < 1e-12) continue;
    max_quot = std::max(max_quot, (raw(a) - raw(b)).norm() / (a - b).norm());
  }
  CHECK(max_quot == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("phi clamps into the reactive box") {
  Partition part;
  part.subgraphs = {{14}, {15}};
  auto bundle = fresh_bundle(part, 8, 0.1, 0.05);  // tight box
  Rng rng(9);
  for (int i = 0; i < 100000; ++i) {
    const VectorXd v = rng.vector(2, 0.8, 1.2);
    const VectorXd out = phi(bundle, v);
    CHECK(bundle.box.contains(out));
  }
  SUBCASE("inside the box raw output is untouched") {
    zero_models(bundle);
    const VectorXd v = rng.vector(2, 0.9, 1.1);
    CHECK((phi(bundle, v) - phi_raw(bundle, v)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("oversized component lands on the bound") {
    ReactiveBox box;
    box.q_min = VectorXd::Constant(1, -0.5);
    box.q_max = VectorXd::Constant(1, 0.5);
    VectorXd big(1);
    big << 9.9;
    CHECK(box.project(big)[0] == 0.5);
  }
}

TEST_CASE("estimate_lipschitz") {
  SUBCASE("zero bundle has L = 0") {
    Partition part;
    part.subgraphs = {{14, 15}};
    auto bundle = fresh_bundle(part, 10);
    zero_models(bundle);
    const auto est = estimate_lipschitz(bundle, VectorXd::Constant(2, 0.9),
                                        VectorXd::Constant(2, 1.1), 500, 1);
    CHECK(est.sampled == 0.0);
    CHECK(est.analytic == 0.0);
  }
  SUBCASE("sampled never exceeds analytic and parallel matches serial") {
    Partition part;
    part.subgraphs = {{14, 15, 17}, {19, 20}};
    const auto bundle = fresh_bundle(part, 11);
    const VectorXd lo = VectorXd::Constant(5, 0.9), hi = VectorXd::Constant(5, 1.1);
    const auto est = estimate_lipschitz(bundle, lo, hi, 2000, 42, 4);
    const auto ref = estimate_lipschitz_serial(bundle, lo, hi, 2000, 42);
    CHECK(est.sampled == ref.sampled);
    CHECK(est.analytic == ref.analytic);
    CHECK(est.sampled <= est.analytic * (1.0 + 1e-12));
    CHECK(est.sampled > 0.0);
  }
}

TEST_CASE("max_stable_stepsize arithmetic") {
  CHECK(max_stable_stepsize(0.0, 1.0) == 1.0);
  CHECK(max_stable_stepsize(2.0, 1.0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(max_stable_stepsize(1.0, 1.0) == 1.0);  // min{1, 2/2}
}

TEST_CASE("control_step") {
  Partition part;
  part.subgraphs = {{14}};
  auto bundle = fresh_bundle(part, 12, 0.1, 1.0);

  SUBCASE("fixed point stays put") {
    // zero models make phi == 0; start at q = 0
    zero_models(bundle);
    const VectorXd q = VectorXd::Zero(1);
    const VectorXd v = VectorXd::Constant(1, 1.02);
    CHECK(control_step(bundle, q, v)[0] == 0.0);
  }
  SUBCASE("eps = 1 jumps to phi") {
    bundle.epsilon = 1.0;
    const VectorXd q = VectorXd::Constant(1, 0.3);
    const VectorXd v = VectorXd::Constant(1, 1.0);
    CHECK(control_step(bundle, q, v)[0] == doctest::Approx(phi(bundle, v)[0]));
  }
  SUBCASE("arithmetic example") {
    CHECK(control_step_core(VectorXd::Zero(1), VectorXd::Ones(1), 0.1)[0] ==
          doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("box invariance for every eps in [0,1]") {
    Rng rng(13);
    for (double eps : {0.0, 0.1, 0.5, 0.9, 1.0}) {
      bundle.epsilon = eps;
      for (int i = 0; i < 200; ++i) {
        const VectorXd q = rng.vector(1, -1.0, 1.0);
        const VectorXd v = rng.vector(1, 0.8, 1.2);
        CHECK(bundle.box.contains(control_step(bundle, q, v), 0.0));
      }
    }
  }
  SUBCASE("precondition violation throws") {
    const VectorXd q = VectorXd::Constant(1, 1.5);  // outside [-1, 1]
    CHECK_THROWS_AS(control_step(bundle, q, VectorXd::Ones(1)), StructureError);
  }
}

TEST_CASE("per-bus budget terms can go positive while the sum stays nonpositive") {
  // communicating bundle: one 3-bus subgraph
  Partition part;
  part.subgraphs = {{14, 15, 17}};
  const auto bundle = fresh_bundle(part, 14);
  Rng rng(15);
  long positive_terms = 0;
  for (int i = 0; i < 20000; ++i) {
    const VectorXd v = rng.vector(3, 0.9, 1.1);
    const VectorXd vp = rng.vector(3, 0.9, 1.1);
    const VectorXd dphi = phi_raw(bundle, v) - phi_raw(bundle, vp);
    const VectorXd dv = v - vp;
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double b = dphi[k] * dv[k];
      s += b;
      if (b > 1e-9) ++positive_terms;
    }
    CHECK(s <= 1e-9);
  }
  CHECK(positive_terms > 0);

  // decentralized special case: per-bus monotonicity holds coordinatewise
  Partition singles;
  singles.subgraphs = {{14}, {15}, {17}};
  const auto nc = fresh_bundle(singles, 16);
  for (int i = 0; i < 20000; ++i) {
    VectorXd v = rng.vector(3, 0.9, 1.1);
    VectorXd vp = v;
    const int k = static_cast<int>(rng.uniform_index(3));
    vp[k] = rng.uniform(0.9, 1.1);
    const VectorXd dphi = phi_raw(nc, v) - phi_raw(nc, vp);
    CHECK(dphi[k] * (v[k] - vp[k]) <= 1e-9);
  }
}

TEST_CASE("bundle manifest round-trips") {
  namespace fs = std::filesystem;
  Partition part;
  part.subgraphs = {{14, 15, 17, 20}, {19, 32, 34}, {27, 30, 38, 39}, {29}, {41}};
  auto bundle = fresh_bundle(part, 17, 0.1, 0.3);
  bundle.lipschitz = 2.5;
  bundle.certified = true;
  bundle.certification.present = true;
  bundle.certification.ok = true;
  bundle.certification.l_analytic = 2.5;
  bundle.certification.eps_bound = 0.8;
  bundle.certification.eps_used = 0.1;
  bundle.certification.mono_pairs = 1000;

  const std::string dir = (fs::temp_directory_path() / "vvc_bundle_test").string();
  save_bundle(bundle, dir, 10.0);
  const auto loaded = load_bundle(dir + "/manifest.json");
  CHECK(loaded.bus_ids == bundle.bus_ids);
  CHECK(loaded.partition.subgraphs == bundle.partition.subgraphs);
  CHECK(loaded.epsilon == bundle.epsilon);
  CHECK(loaded.lipschitz == bundle.lipschitz);
  CHECK(loaded.certified == bundle.certified);
  CHECK(loaded.certification.present);
  CHECK(loaded.certification.mono_pairs == 1000);
  CHECK((loaded.box.q_min - bundle.box.q_min).cwiseAbs().maxCoeff() < 1e-15);
  REQUIRE(loaded.models.size() == bundle.models.size());
  for (std::size_t l = 0; l < loaded.models.size(); ++l) {
    CHECK(icnn_to_json(loaded.models[l]) == icnn_to_json(bundle.models[l]));
  }
  // behaviour is identical after the round trip
  Rng rng(18);
  const VectorXd v = rng.vector(bundle.dim(), 0.9, 1.1);
  CHECK((phi_raw(bundle, v) - phi_raw(loaded, v)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("comm graph validation") {
  CommGraph g;
  g.nodes = {14, 15};
  g.edges = {{14, 14}};
  CHECK_THROWS_AS(g.validate(), StructureError);
  g.edges = {{14, 99}};
  CHECK_THROWS_AS(g.validate(), StructureError);
}
