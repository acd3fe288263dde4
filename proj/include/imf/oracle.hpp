#pragma once

// Ground-truth Schroedinger bridge. The trajectory problem
//   min KL(p || q) over p with p(x_0) = mu, p(x_1) = nu
// reduces to the static problem on the endpoint coupling, solved by
// Sinkhorn scaling and lifted back with the bridge conditional of q.

#include <optional>

#include <Eigen/Core>

#include "imf/process.hpp"
#include "imf/tensor.hpp"

namespace imf {

struct SinkhornConfig {
  /// Maximum absolute row/column marginal violation.
  double tolerance = 1e-13;
  long max_iterations = 100000;
};

/// argmin KL(c || q01) over Pi(mu, nu), in the form diag(u) q01 diag(v).
struct StaticSolution {
  Coupling coupling;
  Eigen::VectorXd row_scaling;
  Eigen::VectorXd column_scaling;
  double residual = 0.0;
  long iterations = 0;
  bool log_domain = false;
};

StaticSolution solve_static(const Eigen::MatrixXd& q01, const MarginalPair& marginals,
                            const SinkhornConfig& cfg = {},
                            const std::optional<Eigen::VectorXd>& initial_column_scaling = {});

JointDistribution lift_static(const Coupling& c, const BridgeConditional& bridge);

struct OracleSolution {
  Coupling static_coupling;
  JointDistribution lifted;
  double residual = 0.0;
  long iterations_used = 0;
  bool log_domain = false;
};

OracleSolution solve_oracle(const JointDistribution& q, const BridgeConditional& bridge,
                            const MarginalPair& marginals, const SinkhornConfig& cfg = {});

struct BruteForceConfig {
  /// Mirror-descent step on the KL objective; 1 would jump straight to the
  /// projection of q.
  double step = 0.5;
  /// Stop when max |ln p_{t+1} - ln p_t| / step falls below this.
  double stationarity = 1e-10;
  int max_outer_iterations = 10000;
  int max_projection_sweeps = 100000;
};

/// Entropic mirror descent on the full trajectory tensor with an exact
/// endpoint-marginal projection after every step. Independent of the bridge
/// conditional and of the static reduction.
JointDistribution brute_force_opt(const JointDistribution& q, const MarginalPair& marginals,
                                  const BruteForceConfig& cfg = {});

}  // namespace imf
