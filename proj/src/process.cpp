#include "imf/process.hpp"

#include <cmath>
#include <random>
#include <string>

#include "imf/errors.hpp"

namespace imf {

namespace {

void check_probability_vector(const Eigen::VectorXd& v, const std::string& name) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0) || !std::isfinite(v[i]))
      throw ValidationError(name + "[" + std::to_string(i) + "] = " + std::to_string(v[i]) +
                            " must be strictly positive");
  }
  const double total = v.sum();
  if (std::abs(total - 1.0) > kProbabilityTolerance)
    throw ValidationError(name + " sums to " + std::to_string(total) + ", expected 1");
}

Eigen::VectorXd draw_simplex(std::mt19937_64& rng, int k, double concentration, double floor) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  Eigen::VectorXd v(k);
  for (int i = 0; i < k; ++i) v[i] = gamma(rng);
  v /= v.sum();
  v = v.cwiseMax(floor);
  return v / v.sum();
}

}  // namespace

MarginalPair MarginalPair::create(Eigen::VectorXd mu, Eigen::VectorXd nu) {
  if (mu.size() != nu.size()) throw DomainError("marginals: mu and nu differ in length");
  if (mu.size() < 2) throw DomainError("marginals: need at least two states");
  check_probability_vector(mu, "mu");
  check_probability_vector(nu, "nu");
  return MarginalPair{std::move(mu), std::move(nu)};
}

MarkovSpec::MarkovSpec(const StateSpace& space, Eigen::VectorXd initial,
                       std::vector<Eigen::MatrixXd> transitions)
    : space_(space), initial_(std::move(initial)), transitions_(std::move(transitions)) {
  const int k = space_.cardinality();
  if (initial_.size() != k)
    throw DomainError("initial has " + std::to_string(initial_.size()) +
                      " entries, expected " + std::to_string(k));
  check_probability_vector(initial_, "initial");
  if (static_cast<int>(transitions_.size()) != space_.interior_count() + 1)
    throw DomainError("expected " + std::to_string(space_.interior_count() + 1) +
                      " transition matrices, got " + std::to_string(transitions_.size()));
  for (std::size_t n = 0; n < transitions_.size(); ++n) {
    const Eigen::MatrixXd& P = transitions_[n];
    if (P.rows() != k || P.cols() != k)
      throw DomainError("transitions[" + std::to_string(n) + "] must be " +
                        std::to_string(k) + "x" + std::to_string(k));
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        if (!(P(i, j) > 0.0) || !std::isfinite(P(i, j)))
          throw ValidationError("transitions[" + std::to_string(n) + "][" + std::to_string(i) +
                                "][" + std::to_string(j) + "] = " + std::to_string(P(i, j)) +
                                " must be strictly positive");
      }
      const double row = P.row(i).sum();
      if (std::abs(row - 1.0) > kProbabilityTolerance)
        throw ValidationError("transitions[" + std::to_string(n) + "] row " + std::to_string(i) +
                              " sums to " + std::to_string(row) + ", expected 1");
    }
  }
}

Coupling Coupling::create(Eigen::MatrixXd matrix, const MarginalPair& marginals) {
  const auto k = marginals.mu.size();
  if (matrix.rows() != k || matrix.cols() != k)
    throw DomainError("coupling must be " + std::to_string(k) + "x" + std::to_string(k));
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      if (!(matrix(i, j) >= 0.0) || !std::isfinite(matrix(i, j)))
        throw ValidationError("coupling[" + std::to_string(i) + "][" + std::to_string(j) +
                              "] is negative");
  const Eigen::VectorXd rows = matrix.rowwise().sum();
  const Eigen::VectorXd cols = matrix.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (std::abs(rows[i] - marginals.mu[i]) > kProbabilityTolerance)
      throw ValidationError("coupling row " + std::to_string(i) + " sums to " +
                            std::to_string(rows[i]) + " but mu = " +
                            std::to_string(marginals.mu[i]));
    if (std::abs(cols[i] - marginals.nu[i]) > kProbabilityTolerance)
      throw ValidationError("coupling column " + std::to_string(i) + " sums to " +
                            std::to_string(cols[i]) + " but nu = " +
                            std::to_string(marginals.nu[i]));
  }
  return Coupling(std::move(matrix), marginals);
}

BridgeConditional BridgeConditional::create(const StateSpace& space, Eigen::VectorXd table) {
  const std::size_t paths = space.path_count();
  if (static_cast<std::size_t>(table.size()) != space.pair_count() * paths)
    throw DomainError("bridge conditional: table size does not match the state space");
  for (std::size_t s = 0; s < space.pair_count(); ++s) {
    const auto slice = table.segment(static_cast<Eigen::Index>(s * paths),
                                     static_cast<Eigen::Index>(paths));
    for (Eigen::Index i = 0; i < slice.size(); ++i)
      if (!(slice[i] > 0.0))
        throw ValidationError("bridge conditional: entry " + std::to_string(i) +
                              " of endpoint pair " + std::to_string(s) +
                              " must be strictly positive");
    if (std::abs(slice.sum() - 1.0) > kProbabilityTolerance)
      throw ValidationError("bridge conditional: slice " + std::to_string(s) +
                            " does not sum to 1");
  }
  return BridgeConditional(space, std::move(table));
}

JointDistribution build_markov_joint(const MarkovSpec& spec) {
  const StateSpace& space = spec.space();
  const int T = space.time_count();
  Eigen::VectorXd values(static_cast<Eigen::Index>(space.cell_count()));
  std::vector<int> x(T, 0);
  for (std::size_t i = 0; i < space.cell_count(); ++i) {
    double mass = spec.initial()[x[0]];
    for (int n = 0; n + 1 < T; ++n) mass *= spec.transitions()[n](x[n], x[n + 1]);
    values[static_cast<Eigen::Index>(i)] = mass;
    for (int t = T - 1; t >= 0; --t) {
      if (++x[t] < space.cardinality()) break;
      x[t] = 0;
    }
  }
  return JointDistribution::from_values(space, std::move(values));
}

Eigen::MatrixXd endpoint_coupling(const JointDistribution& p) {
  const int k = p.space().cardinality();
  const std::size_t paths = p.space().path_count();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, k);
  const Eigen::VectorXd& v = p.values();
  // Cell index = (x0 * paths + path) * K + x1.
  for (int x0 = 0; x0 < k; ++x0)
    for (std::size_t path = 0; path < paths; ++path)
      for (int x1 = 0; x1 < k; ++x1)
        out(x0, x1) += v[static_cast<Eigen::Index>((x0 * paths + path) * k + x1)];
  return out;
}

BridgeConditional bridge_conditional(const JointDistribution& q) {
  const StateSpace& space = q.space();
  const int k = space.cardinality();
  const std::size_t paths = space.path_count();
  const Eigen::MatrixXd ends = endpoint_coupling(q);
  Eigen::VectorXd table(static_cast<Eigen::Index>(space.pair_count() * paths));
  for (int x0 = 0; x0 < k; ++x0) {
    for (int x1 = 0; x1 < k; ++x1) {
      if (!(ends(x0, x1) > 0.0))
        throw SingularConditioningError("bridge conditional: endpoint pair (" +
                                            std::to_string(x0) + "," + std::to_string(x1) +
                                            ") has zero mass",
                                        {x0, x1});
      for (std::size_t path = 0; path < paths; ++path)
        table[static_cast<Eigen::Index>((x0 * k + x1) * paths + path)] =
            q.values()[static_cast<Eigen::Index>((x0 * paths + path) * k + x1)] / ends(x0, x1);
    }
  }
  return BridgeConditional::create(space, std::move(table));
}

Coupling independent_coupling(const MarginalPair& marginals) {
  return Coupling::create(marginals.mu * marginals.nu.transpose(), marginals);
}

JointDistribution attach_bridge(const BridgeConditional& bridge, const Eigen::MatrixXd& endpoint) {
  const StateSpace& space = bridge.space();
  const int k = space.cardinality();
  if (endpoint.rows() != k || endpoint.cols() != k)
    throw DomainError("attach_bridge: endpoint coupling must be " + std::to_string(k) + "x" +
                      std::to_string(k));
  const std::size_t paths = space.path_count();
  Eigen::VectorXd values(static_cast<Eigen::Index>(space.cell_count()));
  for (int x0 = 0; x0 < k; ++x0)
    for (std::size_t path = 0; path < paths; ++path)
      for (int x1 = 0; x1 < k; ++x1)
        values[static_cast<Eigen::Index>((x0 * paths + path) * k + x1)] =
            bridge.at(x0, x1, path) * endpoint(x0, x1);
  return JointDistribution::normalized(space, std::move(values));
}

JointDistribution init_p0(const BridgeConditional& bridge, const Coupling& eta) {
  if (eta.cardinality() != bridge.space().cardinality())
    throw DomainError("init_p0: coupling and bridge disagree on the state space");
  return attach_bridge(bridge, eta.matrix());
}

double markov_defect(const JointDistribution& p) {
  const StateSpace& space = p.space();
  const int k = space.cardinality();
  double worst = 0.0;
  for (int n = 1; n < space.last_time(); ++n) {
    // Compare p(x_{n+1} | x_{0..n}) with p(x_{n+1} | x_n).
    std::vector<int> history(n + 2), prefix(n + 1);
    for (int t = 0; t <= n + 1; ++t) history[t] = t;
    for (int t = 0; t <= n; ++t) prefix[t] = t;
    const Marginal h = marginal(p, history);
    const Marginal pre = marginal(p, prefix);
    const Marginal pair = marginal(p, {n, n + 1});
    const Marginal single = marginal(p, {n});
    for (Eigen::Index i = 0; i < h.values.size(); ++i) {
      const Eigen::Index pre_i = i / k;
      const int next = static_cast<int>(i % k);
      const int current = static_cast<int>(pre_i % k);
      if (!(pre.values[pre_i] > 0.0)) continue;
      const double full = h.values[i] / pre.values[pre_i];
      const double shortc = pair.values[current * k + next] / single.values[current];
      worst = std::max(worst, std::abs(full - shortc));
    }
  }
  return worst;
}

double reciprocal_defect(const JointDistribution& p, const BridgeConditional& bridge) {
  const BridgeConditional own = bridge_conditional(p);
  if (!(own.space() == bridge.space())) throw DomainError("reciprocal_defect: shape mismatch");
  return (own.table() - bridge.table()).cwiseAbs().maxCoeff();
}

Instance generate_instance(const RandomInstanceSpec& spec) {
  if (!(spec.concentration > 0.0))
    throw ValidationError("generator: dirichlet_concentration must be positive");
  if (!(spec.eps_floor >= 0.0) || spec.eps_floor * spec.cardinality >= 1.0)
    throw ValidationError("generator: eps_floor must lie in [0, 1/cardinality)");
  const StateSpace space(spec.cardinality, spec.interior_count);
  const int k = spec.cardinality;
  std::mt19937_64 rng(spec.seed);
  Eigen::VectorXd initial = draw_simplex(rng, k, spec.concentration, spec.eps_floor);
  std::vector<Eigen::MatrixXd> transitions;
  for (int n = 0; n <= spec.interior_count; ++n) {
    Eigen::MatrixXd P(k, k);
    for (int i = 0; i < k; ++i)
      P.row(i) = draw_simplex(rng, k, spec.concentration, spec.eps_floor).transpose();
    transitions.push_back(std::move(P));
  }
  Eigen::VectorXd mu = draw_simplex(rng, k, spec.concentration, spec.eps_floor);
  Eigen::VectorXd nu = draw_simplex(rng, k, spec.concentration, spec.eps_floor);
  return Instance{MarkovSpec(space, std::move(initial), std::move(transitions)),
                  MarginalPair::create(std::move(mu), std::move(nu))};
}

}  // namespace imf
