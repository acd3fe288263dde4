#include <array>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "imf/errors.hpp"
#include "imf/process.hpp"

using namespace imf;

namespace {

MarkovSpec uniform_spec(int K, int N) {
  return MarkovSpec(StateSpace(K, N), Eigen::VectorXd::Constant(K, 1.0 / K),
                    std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(N + 1),
                                                 Eigen::MatrixXd::Constant(K, K, 1.0 / K)));
}

MarkovSpec seeded_spec(int K, int N, std::uint64_t seed) {
  return generate_instance({K, N, 1.0, 1e-3, seed}).reference;
}

}  // namespace

TEST_CASE("markov spec validation names the cell") {
  const StateSpace s(2, 1);
  Eigen::MatrixXd t(2, 2);
  t << 0.9, 0.1, 0.2, 0.8;
  CHECK_NOTHROW(MarkovSpec(s, Eigen::Vector2d(0.5, 0.5), {t, t}));

  Eigen::MatrixXd zero = t;
  zero(1, 0) = 0.0;
  zero(1, 1) = 1.0;
  try {
    MarkovSpec(s, Eigen::Vector2d(0.5, 0.5), {t, zero});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("transitions[1][1][0]") != std::string::npos);
  }
  Eigen::MatrixXd loose = t;
  loose(0, 0) = 0.95;
  CHECK_THROWS_AS(MarkovSpec(s, Eigen::Vector2d(0.5, 0.5), {loose, t}), ValidationError);
  CHECK_THROWS_AS(MarkovSpec(s, Eigen::Vector2d(0.5, 0.5), {t}), DomainError);
  CHECK_THROWS_AS(MarkovSpec(s, Eigen::Vector2d(1.0, 0.0), {t, t}), ValidationError);
  CHECK_THROWS_AS(MarkovSpec(s, Eigen::Vector3d(0.2, 0.3, 0.5), {t, t}), DomainError);
}

TEST_CASE("build_markov_joint") {
  const auto u = build_markov_joint(uniform_spec(2, 1));
  for (std::size_t i = 0; i < 8; ++i) CHECK(u[i] == doctest::Approx(0.125));

  Eigen::MatrixXd t(2, 2);
  t << 0.9, 0.1, 0.1, 0.9;
  const MarkovSpec spec(StateSpace(2, 1), Eigen::Vector2d(0.3, 0.7), {t, t});
  const auto q = build_markov_joint(spec);
  CHECK(std::abs(q.at(std::array{0, 0, 0}) - 0.3 * 0.9 * 0.9) < 1e-16);
  CHECK(std::abs(q.at(std::array{1, 0, 1}) - 0.7 * 0.1 * 0.1) < 1e-16);
  CHECK((marginal(q, {0}).values - spec.initial()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("property: reference joint is Markov") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto q = build_markov_joint(seeded_spec(3, 2, seed));
    CHECK(markov_defect(q) < 1e-12);
    CHECK((oracle::markov_product(q.values(), 3, 4) - q.values()).cwiseAbs().maxCoeff() < 1e-15);
  }
  // A non-Markov law is detected.
  std::mt19937_64 rng(1);
  const auto p = JointDistribution::from_values(StateSpace(2, 1), oracle::random_simplex(rng, 8));
  CHECK(markov_defect(p) > 1e-3);
}

TEST_CASE("bridge conditional") {
  const auto bu = bridge_conditional(build_markov_joint(uniform_spec(2, 1)));
  for (Eigen::Index i = 0; i < bu.table().size(); ++i) CHECK(bu.table()[i] == doctest::Approx(0.5));

  const auto q = build_markov_joint(seeded_spec(3, 2, 17));
  const auto bridge = bridge_conditional(q);
  const Eigen::VectorXd ends = oracle::marginal(q.values(), 3, 4, {0, 3});
  double worst = 0.0;
  for (std::size_t i = 0; i < 81; ++i) {
    const auto x = oracle::decode(i, 3, 4);
    const std::size_t path = static_cast<std::size_t>(x[1] * 3 + x[2]);
    const double expect = q[i] / ends[x[0] * 3 + x[3]];
    worst = std::max(worst, std::abs(bridge.at(x[0], x[3], path) - expect));
  }
  CHECK(worst < 1e-15);
  CHECK(bridge.min_entry() > 0.0);

  // Recombining with q's endpoint coupling reproduces q.
  const auto back = attach_bridge(bridge, endpoint_coupling(q));
  CHECK((back.values() - q.values()).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::VectorXd v = q.values();
  for (std::size_t i = 0; i < 81; ++i) {
    const auto x = oracle::decode(i, 3, 4);
    if (x[0] == 1 && x[3] == 2) v[static_cast<Eigen::Index>(i)] = 0.0;
  }
  CHECK_THROWS_AS(bridge_conditional(JointDistribution::normalized(q.space(), v)),
                  SingularConditioningError);
}

TEST_CASE("bridge table validation") {
  const StateSpace s(2, 1);
  Eigen::VectorXd t = Eigen::VectorXd::Constant(8, 0.5);
  CHECK_NOTHROW(BridgeConditional::create(s, t));
  t[0] = 0.6;
  CHECK_THROWS_AS(BridgeConditional::create(s, t), ValidationError);
  t[0] = 1.0;
  t[1] = 0.0;
  CHECK_THROWS_AS(BridgeConditional::create(s, t), ValidationError);
}

TEST_CASE("couplings") {
  const auto half = MarginalPair::create(Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.5, 0.5));
  const auto c = independent_coupling(half);
  CHECK((c.matrix().array() == 0.25).all());

  const auto m = MarginalPair::create(Eigen::Vector2d(0.3, 0.7), Eigen::Vector2d(0.4, 0.6));
  const auto cm = independent_coupling(m);
  CHECK(cm.matrix()(0, 0) == doctest::Approx(0.12));
  CHECK((cm.matrix().rowwise().sum() - m.mu).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((cm.matrix().colwise().sum().transpose() - m.nu).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::Matrix2d bad;
  bad << 0.1, 0.2, 0.2, 0.5;
  CHECK_THROWS_AS(Coupling::create(bad, m), ValidationError);
  // Zero entries are allowed in a coupling as long as the marginals match.
  Eigen::Matrix2d corner;
  corner << 0.3, 0.0, 0.1, 0.6;
  CHECK_NOTHROW(Coupling::create(corner, m));

  CHECK_THROWS_AS(MarginalPair::create(Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.5, 0.5)),
                  ValidationError);
  CHECK_THROWS_AS(MarginalPair::create(Eigen::Vector2d(0.6, 0.6), Eigen::Vector2d(0.5, 0.5)),
                  ValidationError);
  CHECK_THROWS_AS(MarginalPair::create(Eigen::Vector3d(0.2, 0.3, 0.5), Eigen::Vector2d(0.5, 0.5)),
                  DomainError);
}

TEST_CASE("init_p0") {
  const auto q = build_markov_joint(seeded_spec(2, 2, 3));
  const auto bridge = bridge_conditional(q);
  const auto qm = MarginalPair::create(marginal(q, {0}).values, marginal(q, {3}).values);
  const auto own = init_p0(bridge, Coupling::create(endpoint_coupling(q), qm));
  CHECK((own.values() - q.values()).cwiseAbs().maxCoeff() < 1e-15);

  const auto inst = generate_instance({3, 2, 1.0, 1e-3, 9});
  const auto q3 = build_markov_joint(inst.reference);
  const auto b3 = bridge_conditional(q3);
  const auto eta = independent_coupling(inst.marginals);
  const auto p0 = init_p0(b3, eta);
  double worst = 0.0;
  for (std::size_t i = 0; i < 81; ++i) {
    const auto x = oracle::decode(i, 3, 4);
    const double expect = b3.at(x[0], x[3], static_cast<std::size_t>(x[1] * 3 + x[2])) *
                          inst.marginals.mu[x[0]] * inst.marginals.nu[x[3]];
    worst = std::max(worst, std::abs(p0[i] - expect));
  }
  CHECK(worst < 1e-15);
  CHECK((marginal(p0, {0}).values - inst.marginals.mu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((marginal(p0, {3}).values - inst.marginals.nu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(reciprocal_defect(p0, b3) < 1e-12);
  CHECK((bridge_conditional(p0).table() - b3.table()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(init_p0(bridge_conditional(build_markov_joint(uniform_spec(2, 1))), eta),
                  DomainError);
}

TEST_CASE("random instances are seeded and floored") {
  const RandomInstanceSpec spec{3, 2, 1.0, 1e-3, 77};
  const auto a = generate_instance(spec);
  const auto b = generate_instance(spec);
  CHECK(a.marginals.mu == b.marginals.mu);
  CHECK(a.reference.transitions()[2] == b.reference.transitions()[2]);
  const auto c = generate_instance({3, 2, 1.0, 1e-3, 78});
  CHECK(a.marginals.mu != c.marginals.mu);
  // Renormalization after flooring keeps every entry near or above the floor.
  for (const auto& t : a.reference.transitions()) {
    CHECK(t.minCoeff() > 0.5e-3);
    CHECK((t.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  CHECK(a.marginals.mu.minCoeff() > 0.5e-3);
  CHECK_THROWS_AS(generate_instance({3, 2, 0.0, 1e-3, 1}), ValidationError);
}
