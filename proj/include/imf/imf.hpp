#pragma once

// Iterative Markovian Fitting: alternate the Markov projection
//   p_{k+1/2} = p_k(x_0) prod_n p_k(x_{t_{n+1}} | x_{t_n})
// and the reciprocal projection
//   p_{k+1} = q(x_{t_1:t_N} | x_0, x_1) p_{k+1/2}(x_0, x_1).

#include <optional>
#include <string>
#include <vector>

#include "imf/process.hpp"
#include "imf/tensor.hpp"

namespace imf {

struct ImfConfig {
  int max_iterations = 100;
  /// Halt once KL(p_k || p*) drops below this value.
  double stop_kl = 1e-14;
  /// Record ||grad_L f|| for L_A, L_B, L_C at every iterate with full support.
  bool record_gradients = true;
  /// Keep every iterate in the trace (needed by the argmin checks).
  bool keep_iterates = true;
};

/// Norms of the KL gradient projected onto the three marginal subspaces.
struct GradientNorms {
  double la = 0.0;
  double lb = 0.0;
  double lc = 0.0;
};

/// Diagnostics for p_{k/2}. `half_index` counts half-steps, so the iterate is
/// p_{half_index / 2}.
struct HalfStepRecord {
  int half_index = 0;
  double kl_to_opt = 0.0;
  double kl_decrement = 0.0;
  double min_mass = 0.0;
  double normalization_drift = 0.0;
  double distance_to_opt = 0.0;
  std::optional<GradientNorms> gradients;

  // Filled in by annotate_trace(); only meaningful on integer steps.
  std::optional<double> bound_value;
  std::optional<double> lemma4_slack;
  std::optional<double> pl_slack;

  double k() const { return 0.5 * half_index; }
  bool integer_step() const { return half_index % 2 == 0; }
};

struct IterationTrace {
  std::vector<HalfStepRecord> steps;
  /// iterates[j] is p_{j/2}; empty unless keep_iterates.
  std::vector<JointDistribution> iterates;
  std::vector<std::string> warnings;
  int iterations = 0;
  bool reached_stop_kl = false;
};

struct ImfResult {
  IterationTrace trace;
  JointDistribution final_iterate;
};

JointDistribution markov_projection(const JointDistribution& p);

JointDistribution reciprocal_projection(const JointDistribution& p,
                                        const BridgeConditional& bridge);

ImfResult run_imf(const JointDistribution& p0, const BridgeConditional& bridge,
                  const JointDistribution& opt, const ImfConfig& cfg);

}  // namespace imf
