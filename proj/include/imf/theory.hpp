#pragma once

// Rate constants, marginal subspaces of signed measures and numerical
// certificates for the exponential convergence argument of IMF.
//
// With f(p) = KL(p || p*) the certified inequalities are
//   KL(p_k || p*) <= (1 - m^3/4)^(k-1) KL(p_0 || p*)            (rate)
//   f(p_k) - f(p_{k+1}) >= m^3/4 ||grad_{L_C} f(p_k)||^2        (decrease)
//   ||Pr_{L_A} xi||^2 + ||Pr_{L_B} xi||^2 >= ||xi||^2, xi in L_C
//   ||grad_{L_C} f(p)||^2 >= f(p)                               (PL)
// where m = eps_q^(N+2) eps_mu eps_nu.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "imf/imf.hpp"
#include "imf/process.hpp"
#include "imf/tensor.hpp"

namespace imf {

inline constexpr double kDefaultCheckTolerance = 1e-10;
inline constexpr double kBoundTolerance = 1e-12;
inline constexpr double kMassTolerance = 1e-13;

struct RateConstants {
  double eps_q = 0.0;
  double eps_mu = 0.0;
  double eps_nu = 0.0;
  /// eps_q^(N+1) eps_mu eps_nu, the floor of every Markov projection.
  double delta = 0.0;
  /// eps_q * delta.
  double m = 0.0;
  /// m^3 / 4, kept separately because 1 - rate rounds to 1 for small m.
  double rate = 0.0;
  double contraction = 1.0;

  /// (1 - m^3/4)^(k-1) * kl0, evaluated through log1p.
  double bound(int k, double kl0) const;
};

RateConstants compute_constants(const BridgeConditional& bridge, const MarginalPair& marginals);

/// The same m assembled as eps_q^(N+2) eps_mu eps_nu in a different order.
double rate_constant_direct(const RateConstants& c, int interior_count);

enum class Subspace { LA, LB, LC };

std::string_view to_string(Subspace id);

/// Linear functionals whose common kernel is one of the marginal subspaces:
///   L_A: every consecutive-pair marginal xi(x_{t_n}, x_{t_{n+1}}), n = 0..N,
///   L_B: the endpoint-pair marginal xi(x_0, x_1),
///   L_C: the single-time marginals xi(x_0) and xi(x_1).
/// Rows are redundant (they share the total mass), so projections go through
/// a spectral pseudo-inverse of the Gram matrix C C^T.
class ConstraintOperator {
 public:
  ConstraintOperator(const StateSpace& space, Subspace id);

  Subspace subspace() const noexcept { return id_; }
  const StateSpace& space() const noexcept { return space_; }
  std::size_t row_count() const noexcept { return rows_; }
  int rank() const noexcept { return rank_; }
  const std::vector<std::vector<int>>& blocks() const noexcept { return blocks_; }

  /// C xi: the stacked marginal cells.
  Eigen::VectorXd apply(const SignedMeasure& xi) const;
  /// C^T y: broadcast each row weight back onto the cells it sums.
  SignedMeasure apply_transpose(const Eigen::VectorXd& y) const;
  Eigen::MatrixXd dense_matrix() const;
  const Eigen::MatrixXd& gram_pseudo_inverse() const noexcept { return gram_pinv_; }

  /// max |C xi|.
  double residual(const SignedMeasure& xi) const;

 private:
  StateSpace space_;
  Subspace id_;
  std::vector<std::vector<int>> blocks_;
  std::size_t rows_ = 0;
  int rank_ = 0;
  Eigen::MatrixXd gram_pinv_;
};

ConstraintOperator build_constraint_operator(const StateSpace& space, Subspace id);

/// Orthogonal projection onto ker C: xi - C^T (C C^T)^+ C xi.
SignedMeasure project_onto_subspace(const SignedMeasure& xi, const ConstraintOperator& op);

/// The three operators of one state space, built once and shared.
struct SubspaceProjectors {
  ConstraintOperator la;
  ConstraintOperator lb;
  ConstraintOperator lc;

  explicit SubspaceProjectors(const StateSpace& space);
  const ConstraintOperator& get(Subspace id) const;
};

/// Gradient of KL(. || opt) at p: ln(p / opt) + 1 cellwise.
SignedMeasure kl_gradient(const JointDistribution& p, const JointDistribution& opt);

GradientNorms projected_gradient_norms(const JointDistribution& p, const JointDistribution& opt,
                                       const SubspaceProjectors& projectors);

struct CheckRecord {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

struct CertificateReport {
  std::string name;
  std::vector<CheckRecord> checks;
  std::vector<std::string> notes;

  /// Records lhs >= rhs with slack lhs - rhs.
  void require_ge(std::string check, double lhs, double rhs, double tolerance);
  /// Records lhs <= rhs with slack rhs - lhs.
  void require_le(std::string check, double lhs, double rhs, double tolerance);
  void merge(const CertificateReport& other);

  bool pass() const;
  double min_slack() const;
};

CertificateReport check_lemma3(const StateSpace& space, int trials, std::uint64_t seed,
                               double tolerance = kDefaultCheckTolerance);

/// L_B is inside L_C, and the complement of L_B within L_C is inside L_A.
CertificateReport check_subspace_structure(const StateSpace& space, int trials,
                                           std::uint64_t seed,
                                           double tolerance = kDefaultCheckTolerance);

/// Decrease of one IMF iteration together with its two half-step bounds
///   f(p_k) - f(p_{k+1/2}) >= m/2 ||grad_{L_A} f(p_k)||^2
///   f(p_{k+1/2}) - f(p_{k+1}) >= m/2 ||grad_{L_B} f(p_{k+1/2})||^2.
CertificateReport check_lemma4(const JointDistribution& pk, const JointDistribution& p_half,
                               const JointDistribution& p_next, const JointDistribution& opt,
                               const RateConstants& constants,
                               const SubspaceProjectors& projectors,
                               double tolerance = kDefaultCheckTolerance);

/// Same inequalities, read off recorded trace values for k = 1..max_k.
CertificateReport check_lemma4(const IterationTrace& trace, const RateConstants& constants,
                               int max_k, double tolerance = kDefaultCheckTolerance);

/// Rate bound, PL inequality, strong-convexity distance bound and the
/// monotone first step f(p_1) <= f(p_0).
CertificateReport check_theorem1(const IterationTrace& trace, const RateConstants& constants,
                                 double tolerance = kDefaultCheckTolerance);

/// Every iterate p_{k/2}, k >= 1, has min trajectory mass >= m.
CertificateReport check_mass_bound(const IterationTrace& trace, const RateConstants& constants);

/// Hessian diag(1/p) of KL(. || p*) has spectrum inside [1, 1/m].
CertificateReport check_convexity_spectrum(const JointDistribution& p,
                                           const RateConstants& constants);

/// Finite differences of KL(. || opt) along random subspace directions, plus
/// idempotence and self-adjointness of the three projections.
CertificateReport check_gradients(const JointDistribution& p, const JointDistribution& opt,
                                  const SubspaceProjectors& projectors, int directions,
                                  std::uint64_t seed, double step = 1e-6,
                                  double relative_tolerance = 1e-6,
                                  double projection_tolerance = kDefaultCheckTolerance);

/// Random point of (centre + L) with every cell >= floor. The direction is a
/// Gaussian projected onto L, scaled by a uniform fraction of the largest
/// step that keeps the floor.
JointDistribution perturb_within(const JointDistribution& centre, const ConstraintOperator& op,
                                 double floor, std::mt19937_64& rng);

/// The Markov and reciprocal projections are KL(. || opt)-argmins over
/// A(p_k) and B(p_{k+1/2}); also checks the Pythagorean split of KL over A.
CertificateReport check_projection_argmin(const JointDistribution& pk,
                                          const JointDistribution& p_half,
                                          const JointDistribution& p_next,
                                          const JointDistribution& opt,
                                          const SubspaceProjectors& projectors,
                                          const RateConstants& constants, int perturbations,
                                          std::uint64_t seed, double argmin_tolerance = 1e-12,
                                          double pythagoras_tolerance = kDefaultCheckTolerance);

/// Fills bound_value, lemma4_slack and pl_slack on integer steps.
void annotate_trace(IterationTrace& trace, const RateConstants& constants);

}  // namespace imf
