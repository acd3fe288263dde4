#include "imf/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imf/errors.hpp"

namespace imf {

namespace {

constexpr double kScalingFloor = 1e-100;
constexpr double kScalingCeiling = 1e100;

bool scaling_in_range(const Eigen::VectorXd& s) {
  return s.minCoeff() >= kScalingFloor && s.maxCoeff() <= kScalingCeiling;
}

double max_violation(const Eigen::MatrixXd& c, const MarginalPair& m) {
  const double rows = (c.rowwise().sum() - m.mu).cwiseAbs().maxCoeff();
  const double cols = (c.colwise().sum().transpose() - m.nu).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double top = v.maxCoeff();
  return top + std::log((v.array() - top).exp().sum());
}

// Sinkhorn on log-scalings f = ln u, g = ln v.
StaticSolution solve_log_domain(const Eigen::MatrixXd& q01, const MarginalPair& m,
                                const SinkhornConfig& cfg, Eigen::VectorXd g, long used) {
  const Eigen::Index k = q01.rows();
  const Eigen::MatrixXd log_q = q01.array().log().matrix();
  const Eigen::VectorXd log_mu = m.mu.array().log().matrix();
  const Eigen::VectorXd log_nu = m.nu.array().log().matrix();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd c;
  double residual = INFINITY;
  long it = used;
  while (it < cfg.max_iterations) {
    ++it;
    for (Eigen::Index i = 0; i < k; ++i)
      f[i] = log_mu[i] - log_sum_exp(log_q.row(i).transpose() + g);
    for (Eigen::Index j = 0; j < k; ++j) g[j] = log_nu[j] - log_sum_exp(log_q.col(j) + f);
    Eigen::MatrixXd log_c = log_q;
    log_c.colwise() += f;
    log_c.rowwise() += g.transpose();
    c = log_c.array().exp().matrix();
    residual = max_violation(c, m);
    if (residual <= cfg.tolerance) break;
  }
  if (residual > cfg.tolerance)
    throw NonConvergenceError("sinkhorn (log domain): marginal violation " +
                                  std::to_string(residual) + " after " + std::to_string(it) +
                                  " iterations",
                              residual, it);
  return StaticSolution{Coupling::create(std::move(c), m), f.array().exp().matrix(),
                        g.array().exp().matrix(), residual, it, true};
}

}  // namespace

StaticSolution solve_static(const Eigen::MatrixXd& q01, const MarginalPair& marginals,
                            const SinkhornConfig& cfg,
                            const std::optional<Eigen::VectorXd>& initial_column_scaling) {
  const Eigen::Index k = marginals.mu.size();
  if (q01.rows() != k || q01.cols() != k)
    throw DomainError("solve_static: reference coupling must be " + std::to_string(k) + "x" +
                      std::to_string(k));
  if (!(q01.minCoeff() > 0.0))
    throw ValidationError("solve_static: reference coupling must be strictly positive");
  if (!(cfg.tolerance > 0.0)) throw ValidationError("solve_static: tolerance must be positive");

  Eigen::VectorXd v = Eigen::VectorXd::Ones(k);
  if (initial_column_scaling) {
    if (initial_column_scaling->size() != k || !(initial_column_scaling->minCoeff() > 0.0))
      throw DomainError("solve_static: initial scaling must be positive of length K");
    v = *initial_column_scaling;
  }
  Eigen::VectorXd u(k);
  Eigen::MatrixXd c;
  double residual = INFINITY;
  long it = 0;
  while (it < cfg.max_iterations) {
    ++it;
    u = marginals.mu.cwiseQuotient(q01 * v);
    v = marginals.nu.cwiseQuotient(q01.transpose() * u);
    if (!scaling_in_range(u) || !scaling_in_range(v)) {
      Eigen::VectorXd g = initial_column_scaling
                              ? Eigen::VectorXd(initial_column_scaling->array().log().matrix())
                              : Eigen::VectorXd(Eigen::VectorXd::Zero(k));
      return solve_log_domain(q01, marginals, cfg, std::move(g), it);
    }
    c = u.asDiagonal() * q01 * v.asDiagonal();
    residual = max_violation(c, marginals);
    if (residual <= cfg.tolerance) break;
  }
  if (residual > cfg.tolerance)
    throw NonConvergenceError("sinkhorn: marginal violation " + std::to_string(residual) +
                                  " after " + std::to_string(it) + " iterations",
                              residual, it);
  return StaticSolution{Coupling::create(std::move(c), marginals), std::move(u), std::move(v),
                        residual, it, false};
}

JointDistribution lift_static(const Coupling& c, const BridgeConditional& bridge) {
  if (c.cardinality() != bridge.space().cardinality())
    throw DomainError("lift_static: coupling and bridge disagree on the state space");
  return attach_bridge(bridge, c.matrix());
}

OracleSolution solve_oracle(const JointDistribution& q, const BridgeConditional& bridge,
                            const MarginalPair& marginals, const SinkhornConfig& cfg) {
  StaticSolution s = solve_static(endpoint_coupling(q), marginals, cfg);
  JointDistribution lifted = lift_static(s.coupling, bridge);
  return OracleSolution{std::move(s.coupling), std::move(lifted), s.residual, s.iterations,
                        s.log_domain};
}

JointDistribution brute_force_opt(const JointDistribution& q, const MarginalPair& marginals,
                                  const BruteForceConfig& cfg) {
  const StateSpace& space = q.space();
  const int k = space.cardinality();
  if (k > 3 || space.interior_count() > 2)
    throw BudgetError("brute_force_opt: limited to |X| <= 3 and N <= 2");
  if (marginals.mu.size() != k) throw DomainError("brute_force_opt: marginal length mismatch");
  if (!(q.min_mass() > 0.0)) throw ValidationError("brute_force_opt: q must be strictly positive");

  const std::size_t paths = space.path_count();
  const Eigen::Index n = static_cast<Eigen::Index>(space.cell_count());
  const Eigen::ArrayXd log_q = q.values().array().log();
  const Eigen::ArrayXd log_mu = marginals.mu.array().log();
  const Eigen::ArrayXd log_nu = marginals.nu.array().log();

  // Cell i has x_0 = i / (paths K) and x_1 = i % K.
  auto x0_of = [&](Eigen::Index i) { return static_cast<Eigen::Index>(i / (paths * k)); };
  auto x1_of = [&](Eigen::Index i) { return static_cast<Eigen::Index>(i % k); };

  // KL projection onto {p(x_0) = mu, p(x_1) = nu}: alternate the two scalings
  // in the log domain until both endpoint marginals hold to 1e-15.
  auto project = [&](Eigen::ArrayXd& log_p) {
    for (int sweep = 0; sweep < cfg.max_projection_sweeps; ++sweep) {
      Eigen::ArrayXd first = Eigen::ArrayXd::Zero(k), last = Eigen::ArrayXd::Zero(k);
      for (Eigen::Index i = 0; i < n; ++i) first[x0_of(i)] += std::exp(log_p[i]);
      for (Eigen::Index i = 0; i < n; ++i) log_p[i] += log_mu[x0_of(i)] - std::log(first[x0_of(i)]);
      for (Eigen::Index i = 0; i < n; ++i) last[x1_of(i)] += std::exp(log_p[i]);
      for (Eigen::Index i = 0; i < n; ++i) log_p[i] += log_nu[x1_of(i)] - std::log(last[x1_of(i)]);
      first.setZero();
      for (Eigen::Index i = 0; i < n; ++i) first[x0_of(i)] += std::exp(log_p[i]);
      const double violation = (first - marginals.mu.array()).abs().maxCoeff();
      if (violation <= 1e-15) return;
    }
    throw NonConvergenceError("brute_force_opt: endpoint projection did not converge", INFINITY,
                              cfg.max_projection_sweeps);
  };

  Eigen::ArrayXd log_p = log_q;
  project(log_p);
  double stationarity = INFINITY;
  for (int it = 0; it < cfg.max_outer_iterations; ++it) {
    // Mirror step: p <- p exp(-step * grad), grad = ln(p/q) + 1 (the constant
    // is absorbed by the projection).
    Eigen::ArrayXd next = (1.0 - cfg.step) * log_p + cfg.step * log_q;
    project(next);
    stationarity = (next - log_p).abs().maxCoeff() / cfg.step;
    log_p = std::move(next);
    if (stationarity <= cfg.stationarity)
      return JointDistribution::normalized(space, log_p.exp().matrix());
  }
  throw NonConvergenceError("brute_force_opt: stationarity " + std::to_string(stationarity) +
                                " after " + std::to_string(cfg.max_outer_iterations) +
                                " iterations",
                            stationarity, cfg.max_outer_iterations);
}

}  // namespace imf
