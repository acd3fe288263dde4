#pragma once

// Reference processes, endpoint couplings and bridge conditionals.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "imf/tensor.hpp"

namespace imf {

/// Endpoint laws mu (time 0) and nu (time N+1), both everywhere positive.
struct MarginalPair {
  Eigen::VectorXd mu;
  Eigen::VectorXd nu;

  static MarginalPair create(Eigen::VectorXd mu, Eigen::VectorXd nu);
};

/// Markov reference process: the law of x_0 plus N+1 row-stochastic
/// transition matrices, transitions[n] mapping x_{t_n} to x_{t_{n+1}}.
class MarkovSpec {
 public:
  MarkovSpec(const StateSpace& space, Eigen::VectorXd initial,
             std::vector<Eigen::MatrixXd> transitions);

  const StateSpace& space() const noexcept { return space_; }
  const Eigen::VectorXd& initial() const noexcept { return initial_; }
  const std::vector<Eigen::MatrixXd>& transitions() const noexcept { return transitions_; }

 private:
  StateSpace space_;
  Eigen::VectorXd initial_;
  std::vector<Eigen::MatrixXd> transitions_;
};

/// A coupling eta in Pi(mu, nu).
class Coupling {
 public:
  /// Checks nonnegativity and that the row/column sums match the marginals
  /// to 1e-12.
  static Coupling create(Eigen::MatrixXd matrix, const MarginalPair& marginals);

  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  const MarginalPair& marginals() const noexcept { return marginals_; }
  int cardinality() const noexcept { return static_cast<int>(matrix_.rows()); }

 private:
  Coupling(Eigen::MatrixXd matrix, MarginalPair marginals)
      : matrix_(std::move(matrix)), marginals_(std::move(marginals)) {}

  Eigen::MatrixXd matrix_;
  MarginalPair marginals_;
};

/// q(x_{t_1:t_N} | x_0, x_1): one law over interior paths per endpoint pair.
/// Stored as [x_0][x_1][path] with the path in row-major order.
class BridgeConditional {
 public:
  static BridgeConditional create(const StateSpace& space, Eigen::VectorXd table);

  const StateSpace& space() const noexcept { return space_; }
  const Eigen::VectorXd& table() const noexcept { return table_; }
  double at(int x0, int x1, std::size_t path) const {
    return table_[static_cast<Eigen::Index>(
        (static_cast<std::size_t>(x0) * space_.cardinality() + x1) * space_.path_count() + path)];
  }
  double min_entry() const { return table_.minCoeff(); }

 private:
  BridgeConditional(const StateSpace& space, Eigen::VectorXd table)
      : space_(space), table_(std::move(table)) {}

  StateSpace space_;
  Eigen::VectorXd table_;
};

JointDistribution build_markov_joint(const MarkovSpec& spec);

BridgeConditional bridge_conditional(const JointDistribution& q);

Coupling independent_coupling(const MarginalPair& marginals);

/// p_0(x_0, path, x_1) = bridge(x_0, x_1, path) * eta(x_0, x_1).
JointDistribution init_p0(const BridgeConditional& bridge, const Coupling& eta);

/// bridge(x_0, x_1, path) * endpoint(x_0, x_1), renormalized. Shared by the
/// initializer, the reciprocal projection and the oracle lift.
JointDistribution attach_bridge(const BridgeConditional& bridge, const Eigen::MatrixXd& endpoint);

/// p(x_0, x_1) as a K x K matrix.
Eigen::MatrixXd endpoint_coupling(const JointDistribution& p);

/// Largest cellwise gap |p(x_{n+1} | x_{0..n}) - p(x_{n+1} | x_n)| over all n
/// and all histories with positive mass. Zero for Markov laws.
double markov_defect(const JointDistribution& p);

/// Largest cellwise gap between the interior conditional of p and `bridge`.
double reciprocal_defect(const JointDistribution& p, const BridgeConditional& bridge);

struct RandomInstanceSpec {
  int cardinality = 2;
  int interior_count = 1;
  double concentration = 1.0;
  double eps_floor = 1e-3;
  std::uint64_t seed = 0;
};

struct Instance {
  MarkovSpec reference;
  MarginalPair marginals;
};

/// Draws initial law, transition rows, mu and nu from a symmetric Dirichlet,
/// floors every entry at eps_floor and renormalizes.
Instance generate_instance(const RandomInstanceSpec& spec);

}  // namespace imf
