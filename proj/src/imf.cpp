#include "imf/imf.hpp"

#include <cmath>
#include <string>

#include "imf/errors.hpp"
#include "imf/theory.hpp"

namespace imf {

JointDistribution markov_projection(const JointDistribution& p) {
  const StateSpace& space = p.space();
  const int k = space.cardinality();
  const int T = space.time_count();

  // Transition kernels p(x_{t_{n+1}} | x_{t_n}) from the pairwise marginals.
  std::vector<Eigen::MatrixXd> kernels;
  kernels.reserve(T - 1);
  for (int n = 0; n + 1 < T; ++n) {
    const Marginal pair = marginal(p, {n, n + 1});
    Eigen::MatrixXd K(k, k);
    for (int a = 0; a < k; ++a) {
      double mass = 0.0;
      for (int b = 0; b < k; ++b) mass += pair.values[a * k + b];
      if (!(mass > 0.0))
        throw SingularConditioningError("markov_projection: state " + std::to_string(a) +
                                            " has zero mass at time " + std::to_string(n),
                                        {n, a});
      for (int b = 0; b < k; ++b) K(a, b) = pair.values[a * k + b] / mass;
    }
    kernels.push_back(std::move(K));
  }
  const Marginal initial = marginal(p, {0});

  Eigen::VectorXd values(static_cast<Eigen::Index>(space.cell_count()));
  std::vector<int> x(T, 0);
  for (std::size_t i = 0; i < space.cell_count(); ++i) {
    double mass = initial.values[x[0]];
    for (int n = 0; n + 1 < T; ++n) mass *= kernels[n](x[n], x[n + 1]);
    values[static_cast<Eigen::Index>(i)] = mass;
    for (int t = T - 1; t >= 0; --t) {
      if (++x[t] < k) break;
      x[t] = 0;
    }
  }
  return JointDistribution::normalized(space, std::move(values));
}

JointDistribution reciprocal_projection(const JointDistribution& p,
                                        const BridgeConditional& bridge) {
  if (!(p.space() == bridge.space()))
    throw DomainError("reciprocal_projection: distribution and bridge shapes differ");
  return attach_bridge(bridge, endpoint_coupling(p));
}

namespace {

HalfStepRecord describe(int half_index, const JointDistribution& p, const JointDistribution& opt,
                        const SubspaceProjectors* projectors) {
  HalfStepRecord r;
  r.half_index = half_index;
  r.kl_to_opt = kl_divergence(p, opt);
  r.min_mass = p.min_mass();
  r.normalization_drift = p.drift();
  r.distance_to_opt = (p.values() - opt.values()).norm();
  if (projectors != nullptr && r.min_mass > 0.0)
    r.gradients = projected_gradient_norms(p, opt, *projectors);
  return r;
}

}  // namespace

ImfResult run_imf(const JointDistribution& p0, const BridgeConditional& bridge,
                  const JointDistribution& opt, const ImfConfig& cfg) {
  if (cfg.max_iterations < 1) throw DomainError("run_imf: max_iterations must be at least 1");
  if (!(p0.space() == bridge.space()) || !(p0.space() == opt.space()))
    throw DomainError("run_imf: p0, bridge and opt live on different spaces");

  std::optional<SubspaceProjectors> projectors;
  if (cfg.record_gradients) projectors.emplace(p0.space());
  const SubspaceProjectors* proj = projectors ? &*projectors : nullptr;

  IterationTrace trace;
  auto record = [&](int half_index, const JointDistribution& p) {
    HalfStepRecord r = describe(half_index, p, opt, proj);
    if (!trace.steps.empty()) r.kl_decrement = trace.steps.back().kl_to_opt - r.kl_to_opt;
    if (std::abs(r.normalization_drift) > kProbabilityTolerance)
      trace.warnings.push_back("normalization drift " + std::to_string(r.normalization_drift) +
                               " at half-step " + std::to_string(half_index));
    trace.steps.push_back(r);
    if (cfg.keep_iterates) trace.iterates.push_back(p);
  };

  JointDistribution current = p0;
  record(0, current);
  if (trace.steps.back().kl_to_opt < cfg.stop_kl) {
    trace.reached_stop_kl = true;
    return ImfResult{std::move(trace), std::move(current)};
  }
  for (int k = 0; k < cfg.max_iterations; ++k) {
    JointDistribution half = markov_projection(current);
    record(2 * k + 1, half);
    current = reciprocal_projection(half, bridge);
    record(2 * k + 2, current);
    trace.iterations = k + 1;
    if (trace.steps.back().kl_to_opt < cfg.stop_kl) {
      trace.reached_stop_kl = true;
      break;
    }
  }
  return ImfResult{std::move(trace), std::move(current)};
}

}  // namespace imf
