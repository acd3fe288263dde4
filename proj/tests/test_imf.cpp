#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "imf/errors.hpp"
#include "imf/imf.hpp"
#include "imf/oracle.hpp"
#include "imf/theory.hpp"

using namespace imf;

namespace {

struct Setup {
  JointDistribution q;
  BridgeConditional bridge;
  MarginalPair marginals;
  JointDistribution p0;
  JointDistribution opt;
};

Setup setup(int K, int N, std::uint64_t seed) {
  const Instance inst = generate_instance({K, N, 1.0, 1e-3, seed});
  JointDistribution q = build_markov_joint(inst.reference);
  BridgeConditional bridge = bridge_conditional(q);
  JointDistribution p0 = init_p0(bridge, independent_coupling(inst.marginals));
  JointDistribution opt = solve_oracle(q, bridge, inst.marginals).lifted;
  return {q, bridge, inst.marginals, p0, opt};
}

JointDistribution random_joint(const StateSpace& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return JointDistribution::from_values(
      s, oracle::random_simplex(rng, static_cast<Eigen::Index>(s.cell_count())));
}

}  // namespace

TEST_CASE("markov projection") {
  const StateSpace s(2, 1);
  const auto u = JointDistribution::uniform(s);
  CHECK((markov_projection(u).values() - u.values()).cwiseAbs().maxCoeff() < 1e-15);

  const auto q = build_markov_joint(generate_instance({3, 2, 1.0, 1e-3, 4}).reference);
  CHECK((markov_projection(q).values() - q.values()).cwiseAbs().maxCoeff() < 1e-13);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_joint(s, seed);
    const auto m = markov_projection(p);
    CHECK((m.values() - oracle::markov_product(p.values(), 2, 3)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(markov_defect(m) < 1e-12);
    for (int n = 0; n < 2; ++n)
      CHECK((marginal(m, {n, n + 1}).values - marginal(p, {n, n + 1}).values).cwiseAbs().maxCoeff() <
            1e-15);
    CHECK((markov_projection(m).values() - m.values()).cwiseAbs().maxCoeff() < 1e-13);
  }

  // No mass at x_1 = 0 leaves p(x_2 | x_1 = 0) undefined.
  Eigen::VectorXd v = random_joint(s, 9).values();
  for (std::size_t i = 0; i < 8; ++i)
    if (oracle::decode(i, 2, 3)[1] == 0) v[static_cast<Eigen::Index>(i)] = 0.0;
  CHECK_THROWS_AS(markov_projection(JointDistribution::normalized(s, v)), SingularConditioningError);
}

TEST_CASE("reciprocal projection") {
  const Setup st = setup(3, 2, 5);
  CHECK((reciprocal_projection(st.p0, st.bridge).values() - st.p0.values()).cwiseAbs().maxCoeff() <
        1e-13);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_joint(st.q.space(), 50 + seed);
    const auto r = reciprocal_projection(p, st.bridge);
    CHECK((endpoint_coupling(r) - endpoint_coupling(p)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(reciprocal_defect(r, st.bridge) < 1e-13);
    // Cellwise: r(x) = bridge(x_0, x_3, path) p(x_0, x_3).
    const Eigen::VectorXd ends = oracle::marginal(p.values(), 3, 4, {0, 3});
    double worst = 0.0;
    for (std::size_t i = 0; i < 81; ++i) {
      const auto x = oracle::decode(i, 3, 4);
      worst = std::max(worst, std::abs(r[i] - st.bridge.at(x[0], x[3], static_cast<std::size_t>(x[1] * 3 + x[2])) *
                                                  ends[x[0] * 3 + x[3]]));
    }
    CHECK(worst < 1e-15);
    CHECK((reciprocal_projection(r, st.bridge).values() - r.values()).cwiseAbs().maxCoeff() < 1e-15);
  }
  CHECK_THROWS_AS(reciprocal_projection(JointDistribution::uniform(StateSpace(3, 1)), st.bridge),
                  DomainError);
}

TEST_CASE("run_imf fixed points") {
  const Setup st = setup(2, 1, 3);
  const ImfResult at_opt = run_imf(st.opt, st.bridge, st.opt, {});
  CHECK(at_opt.trace.iterations == 0);
  CHECK(at_opt.trace.reached_stop_kl);
  CHECK(at_opt.trace.steps.size() == 1);
  CHECK(at_opt.trace.steps[0].kl_to_opt < 1e-14);

  // Marginals and coupling of q itself: q is already the bridge.
  const auto qm = MarginalPair::create(marginal(st.q, {0}).values, marginal(st.q, {2}).values);
  const auto p0 = init_p0(st.bridge, Coupling::create(endpoint_coupling(st.q), qm));
  const auto opt = solve_oracle(st.q, st.bridge, qm).lifted;
  const ImfResult r = run_imf(p0, st.bridge, opt, {});
  CHECK(r.trace.steps[0].kl_to_opt < 1e-14);

  ImfConfig bad;
  bad.max_iterations = 0;
  CHECK_THROWS_AS(run_imf(st.p0, st.bridge, st.opt, bad), DomainError);
}

TEST_CASE("run_imf seed 42: strictly decreasing and under the rate bound") {
  const Setup st = setup(2, 1, 42);
  ImfConfig cfg;
  cfg.stop_kl = 0.0;
  cfg.max_iterations = 12;
  const ImfResult r = run_imf(st.p0, st.bridge, st.opt, cfg);
  const RateConstants c = compute_constants(st.bridge, st.marginals);
  const auto& steps = r.trace.steps;
  REQUIRE(steps.size() == 25);
  const double kl0 = steps[0].kl_to_opt;
  for (std::size_t i = 1; i < steps.size(); ++i) {
    CHECK(steps[i].half_index == static_cast<int>(i));
    CHECK(steps[i].kl_to_opt < steps[i - 1].kl_to_opt);
    CHECK(steps[i].kl_to_opt == doctest::Approx(oracle::kl(r.trace.iterates[i].values(), st.opt.values())).epsilon(1e-9));
    if (steps[i].integer_step())
      CHECK(steps[i].kl_to_opt <= c.bound(static_cast<int>(i / 2), kl0) + 1e-12);
  }
  CHECK(r.final_iterate.values() == r.trace.iterates.back().values());
}

TEST_CASE("property: iterates keep the endpoint marginals") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Setup st = setup(2 + static_cast<int>(seed % 2), 1 + static_cast<int>(seed / 2 % 2), seed);
    ImfConfig cfg;
    cfg.max_iterations = 30;
    const ImfResult r = run_imf(st.p0, st.bridge, st.opt, cfg);
    const int last = st.q.space().last_time();
    for (std::size_t i = 0; i < r.trace.iterates.size(); ++i) {
      const auto& p = r.trace.iterates[i];
      CHECK((marginal(p, {0}).values - st.marginals.mu).cwiseAbs().maxCoeff() < 1e-11);
      CHECK((marginal(p, {last}).values - st.marginals.nu).cwiseAbs().maxCoeff() < 1e-11);
      if (i > 0) CHECK(r.trace.steps[i].kl_to_opt <= r.trace.steps[i - 1].kl_to_opt + 1e-12);
      CHECK(std::abs(r.trace.steps[i].normalization_drift) < 1e-12);
      if (r.trace.steps[i].gradients) {
        CHECK(r.trace.steps[i].gradients->la >= 0.0);
        CHECK(r.trace.steps[i].gradients->lb >= 0.0);
        CHECK(r.trace.steps[i].gradients->lc >= 0.0);
      }
    }
  }
}

TEST_CASE("p0 with zero cells runs and skips its gradient") {
  const Setup st = setup(2, 1, 8);
  Eigen::Matrix2d corner;
  const double a = std::min(st.marginals.mu[0], st.marginals.nu[1]);
  // Put as much mass as possible off the diagonal so one cell is zero.
  corner << st.marginals.mu[0] - a, a, st.marginals.nu[0] - st.marginals.mu[0] + a,
      st.marginals.mu[1] - (st.marginals.nu[0] - st.marginals.mu[0] + a);
  const auto eta = Coupling::create(corner, st.marginals);
  const auto p0 = init_p0(st.bridge, eta);
  REQUIRE(p0.min_mass() == 0.0);
  const ImfResult r = run_imf(p0, st.bridge, st.opt, {});
  CHECK(!r.trace.steps[0].gradients);
  CHECK(r.trace.steps[1].gradients);
  CHECK(r.trace.steps.back().kl_to_opt < 1e-10);
}
