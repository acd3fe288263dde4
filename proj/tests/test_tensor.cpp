#include <array>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "imf/errors.hpp"
#include "imf/tensor.hpp"

using namespace imf;

namespace {

JointDistribution random_joint(const StateSpace& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return JointDistribution::from_values(
      s, oracle::random_simplex(rng, static_cast<Eigen::Index>(s.cell_count())));
}

}  // namespace

TEST_CASE("state space validates shape and budget") {
  CHECK_THROWS_AS(StateSpace(1, 1), DomainError);
  CHECK_THROWS_AS(StateSpace(2, 0), DomainError);
  CHECK_THROWS_AS(StateSpace(10, 6), BudgetError);  // 10^8 cells
  CHECK_NOTHROW(StateSpace(10, 5));
  CHECK_THROWS_AS(StateSpace(3, 2, 80), BudgetError);
  const StateSpace s(3, 2);
  CHECK(s.cell_count() == 81);
  CHECK(s.path_count() == 9);
  CHECK(s.time_count() == 4);
}

TEST_CASE("flat index layout") {
  const StateSpace s2(2, 1);
  CHECK(s2.flat_index(std::array{0, 0, 0}) == 0);
  CHECK(s2.flat_index(std::array{1, 1, 1}) == 7);

  // Locate (0, 1, 2) by walking all 27 cells in row-major order.
  const StateSpace s3(3, 1);
  std::size_t found = 0, pos = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c, ++pos)
        if (a == 0 && b == 1 && c == 2) found = pos;
  CHECK(found == 5);
  CHECK(s3.flat_index(std::array{0, 1, 2}) == 5);

  CHECK_THROWS_AS(s3.flat_index(std::array{0, 3, 0}), DomainError);
  CHECK_THROWS_AS(s3.flat_index(std::array{0, -1, 0}), DomainError);
  CHECK_THROWS_AS(s3.flat_index(std::array{0, 1}), DomainError);

  for (const auto& s : {StateSpace(2, 1), StateSpace(3, 2), StateSpace(4, 1)})
    for (std::size_t i = 0; i < s.cell_count(); ++i) {
      const auto x = s.trajectory(i);
      REQUIRE(x == oracle::decode(i, s.cardinality(), s.time_count()));
      REQUIRE(s.flat_index(x) == i);
    }
}

TEST_CASE("joint distribution validation") {
  const StateSpace s(2, 1);
  Eigen::VectorXd v = Eigen::VectorXd::Constant(8, 0.125);
  CHECK_NOTHROW(JointDistribution::from_values(s, v));
  v[0] += 1e-13;
  const auto p = JointDistribution::from_values(s, v);
  CHECK(std::abs(p.values().sum() - 1.0) < 1e-15);
  CHECK(p.drift() == doctest::Approx(1e-13).epsilon(1e-3));
  v[0] += 1e-9;
  CHECK_THROWS_AS(JointDistribution::from_values(s, v), ValidationError);
  v = Eigen::VectorXd::Constant(8, 0.125);
  v[1] = -0.125;
  v[2] = 0.375;
  CHECK_THROWS_AS(JointDistribution::from_values(s, v), ValidationError);
  CHECK_THROWS_AS(JointDistribution::from_values(s, Eigen::VectorXd::Constant(7, 1.0 / 7)),
                  DomainError);
}

TEST_CASE("marginals") {
  const StateSpace s(2, 1);
  const auto u = JointDistribution::uniform(s);
  const Marginal m0 = marginal(u, {0});
  CHECK(m0.values.size() == 2);
  CHECK(m0.values[0] == doctest::Approx(0.5));
  CHECK(m0.values[1] == doctest::Approx(0.5));

  const auto p = random_joint(s, 7);
  CHECK((marginal(p, {0, 1, 2}).values - p.values()).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd ref = oracle::marginal(p.values(), 2, 3, {0, 2});
  CHECK((marginal(p, {0, 2}).values - ref).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(marginal(p, {}), DomainError);
  CHECK_THROWS_AS(marginal(p, {2, 0}), DomainError);
  CHECK_THROWS_AS(marginal(p, {0, 3}), DomainError);
  CHECK_THROWS_AS(marginal(p, {1, 1}), DomainError);
}

TEST_CASE("property: marginalization is consistent") {
  const StateSpace s(3, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = random_joint(s, seed);
    CHECK(std::abs(marginal(p, {1, 3}).values.sum() - 1.0) < 1e-12);
    // Marginalize {0,1,3} first, then down to {1,3} and {3}.
    const Marginal a = marginal(p, {0, 1, 3});
    const JointDistribution pa = JointDistribution::from_values(StateSpace(3, 1), a.values);
    CHECK((marginal(pa, {1, 2}).values - marginal(p, {1, 3}).values).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((marginal(pa, {2}).values - marginal(p, {3}).values).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("conditionals") {
  const StateSpace s(2, 1);
  const auto u = JointDistribution::uniform(s);
  const ConditionalTable cu = conditional(u, {1}, {0, 2});
  for (Eigen::Index i = 0; i < cu.values.size(); ++i) CHECK(cu.values[i] == doctest::Approx(0.5));

  // c(x_1 | x_0, x_2) by per-cell division.
  const auto p = random_joint(s, 11);
  const ConditionalTable c = conditional(p, {1}, {0, 2});
  const Eigen::VectorXd ends = oracle::marginal(p.values(), 2, 3, {0, 2});
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int e = 0; e < 2; ++e) {
        const double expect = p.at(std::array{a, b, e}) / ends[a * 2 + e];
        CHECK(std::abs(c.at(std::array{a, e}, std::array{b}) - expect) < 1e-15);
      }

  CHECK_THROWS_AS(conditional(p, {0}, {0, 2}), DomainError);
  Eigen::VectorXd v = p.values();
  v[0] = v[1] = 0.0;  // x_0 = 0, x_1 = 0 has no mass
  const auto z = JointDistribution::normalized(s, v);
  CHECK_THROWS_AS(conditional(z, {2}, {0, 1}), SingularConditioningError);
}

TEST_CASE("property: chain rule reconstructs the joint") {
  const StateSpace s(3, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_joint(s, 100 + seed);
    const ConditionalTable c = conditional(p, {1, 2}, {0, 3});
    const Marginal g = marginal(p, {0, 3});
    double worst = 0.0;
    for (std::size_t i = 0; i < s.cell_count(); ++i) {
      const auto x = s.trajectory(i);
      const std::array given{x[0], x[3]};
      const std::array target{x[1], x[2]};
      worst = std::max(worst, std::abs(c.at(given, target) * g.at(given) - p[i]));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("kl divergence") {
  const StateSpace s(2, 1);
  const auto p = random_joint(s, 3);
  CHECK(kl_divergence(p, p) == 0.0);

  // x_0 ~ (0.5, 0.5) against (0.25, 0.75), the other two coordinates uniform.
  Eigen::VectorXd a(8), b(8);
  for (std::size_t i = 0; i < 8; ++i) {
    const int x0 = static_cast<int>(i / 4);
    a[static_cast<Eigen::Index>(i)] = 0.5 * 0.25;
    b[static_cast<Eigen::Index>(i)] = (x0 == 0 ? 0.25 : 0.75) * 0.25;
  }
  const double expect = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  CHECK(expect == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(std::abs(kl_divergence(JointDistribution::from_values(s, a),
                               JointDistribution::from_values(s, b)) -
                 expect) < 1e-15);

  Eigen::VectorXd z = p.values();
  z[2] = 0.0;
  const auto pz = JointDistribution::normalized(s, z);
  CHECK(std::abs(kl_divergence(pz, p) - oracle::kl(pz.values(), p.values())) < 1e-15);
  CHECK_THROWS_AS(kl_divergence(p, pz), InfiniteDivergenceError);
  CHECK_THROWS_AS(kl_divergence(p, JointDistribution::uniform(StateSpace(2, 2))), DomainError);
}

TEST_CASE("property: Pinsker on random pairs") {
  const StateSpace s(2, 2);
  std::mt19937_64 rng(2024);
  double worst = INFINITY;
  for (int i = 0; i < 1000; ++i) {
    const auto p = JointDistribution::from_values(s, oracle::random_simplex(rng, 16));
    const auto q = JointDistribution::from_values(s, oracle::random_simplex(rng, 16));
    const double d = kl_divergence(p, q);
    const double l1 = (p.values() - q.values()).cwiseAbs().sum();
    REQUIRE(d >= 0.0);
    worst = std::min(worst, d - 0.5 * l1 * l1);
  }
  CHECK(worst >= 0.0);
}

TEST_CASE("euclidean operations") {
  const StateSpace s(2, 1);
  SignedMeasure ones(s, Eigen::VectorXd::Ones(8));
  CHECK(squared_norm(ones) == 8.0);
  std::mt19937_64 rng(5);
  const SignedMeasure a(s, oracle::gaussian(rng, 8));
  const SignedMeasure b(s, oracle::gaussian(rng, 8));
  CHECK(squared_norm(a) > 0.0);
  CHECK(squared_norm(SignedMeasure(s)) == 0.0);
  const double lhs = squared_norm(a + b);
  const double rhs = squared_norm(a) + 2.0 * inner(a, b) + squared_norm(b);
  CHECK(std::abs(lhs - rhs) < 1e-12 * std::max(1.0, lhs));
  CHECK(norm(2.0 * a) == doctest::Approx(2.0 * norm(a)));
  CHECK_THROWS_AS(inner(a, SignedMeasure(StateSpace(2, 2))), DomainError);
}
