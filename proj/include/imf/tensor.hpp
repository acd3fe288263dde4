#pragma once

// Dense tensors over trajectories x_{t_0}, ..., x_{t_{N+1}} of a finite-state
// process. States are labelled 0..K-1 and cells are laid out row-major with
// x_{t_0} as the most significant coordinate.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace imf {

inline constexpr std::size_t kDefaultCellBudget = 10'000'000;
inline constexpr double kProbabilityTolerance = 1e-12;

class StateSpace {
 public:
  StateSpace(int cardinality, int interior_count,
             std::size_t cell_budget = kDefaultCellBudget);

  int cardinality() const noexcept { return cardinality_; }
  int interior_count() const noexcept { return interior_count_; }
  int time_count() const noexcept { return interior_count_ + 2; }
  int last_time() const noexcept { return interior_count_ + 1; }
  std::size_t cell_count() const noexcept { return cell_count_; }
  /// Number of interior paths, K^N.
  std::size_t path_count() const noexcept { return cell_count_ / (pair_count()); }
  std::size_t pair_count() const noexcept {
    return static_cast<std::size_t>(cardinality_) * cardinality_;
  }

  std::size_t flat_index(std::span<const int> trajectory) const;
  std::vector<int> trajectory(std::size_t index) const;

  friend bool operator==(const StateSpace& a, const StateSpace& b) noexcept {
    return a.cardinality_ == b.cardinality_ && a.interior_count_ == b.interior_count_;
  }

 private:
  int cardinality_;
  int interior_count_;
  std::size_t cell_count_;
};

/// Finite signed measure on X^(N+2). Plain vector-space semantics.
class SignedMeasure {
 public:
  explicit SignedMeasure(const StateSpace& space);
  SignedMeasure(const StateSpace& space, Eigen::VectorXd values);

  const StateSpace& space() const noexcept { return space_; }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  Eigen::VectorXd& values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

  SignedMeasure& operator+=(const SignedMeasure& other);
  SignedMeasure& operator-=(const SignedMeasure& other);
  SignedMeasure& operator*=(double scale);

  friend SignedMeasure operator+(SignedMeasure a, const SignedMeasure& b) { return a += b; }
  friend SignedMeasure operator-(SignedMeasure a, const SignedMeasure& b) { return a -= b; }
  friend SignedMeasure operator*(double s, SignedMeasure a) { return a *= s; }

 private:
  StateSpace space_;
  Eigen::VectorXd values_;
};

double inner(const SignedMeasure& a, const SignedMeasure& b);
double squared_norm(const SignedMeasure& a);
double norm(const SignedMeasure& a);

/// Probability distribution on X^(N+2): nonnegative, total mass one.
class JointDistribution {
 public:
  /// Validates nonnegativity and |sum - 1| <= 1e-12, then rescales the
  /// entries to sum to one. The pre-rescaling deviation is kept as drift().
  static JointDistribution from_values(const StateSpace& space, Eigen::VectorXd values);

  /// Like from_values but accepts any positive total mass.
  static JointDistribution normalized(const StateSpace& space, Eigen::VectorXd values);

  static JointDistribution uniform(const StateSpace& space);

  const StateSpace& space() const noexcept { return space_; }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  double at(std::span<const int> trajectory) const {
    return (*this)[space_.flat_index(trajectory)];
  }

  /// Signed deviation of the total mass from one before renormalization.
  double drift() const noexcept { return drift_; }
  double min_mass() const { return values_.minCoeff(); }
  double max_mass() const { return values_.maxCoeff(); }

  SignedMeasure to_measure() const { return SignedMeasure(space_, values_); }

 private:
  JointDistribution(const StateSpace& space, Eigen::VectorXd values, double drift);

  StateSpace space_;
  Eigen::VectorXd values_;
  double drift_;
};

/// Marginal law of the coordinates at `times`, laid out row-major in the
/// order of `times` (which is strictly increasing).
struct Marginal {
  std::vector<int> times;
  int cardinality = 0;
  Eigen::VectorXd values;

  double at(std::span<const int> states) const;
};

Marginal marginal(const JointDistribution& p, std::vector<int> times);
Marginal marginal(const SignedMeasure& xi, std::vector<int> times);

/// Conditional law c(target | given). Cells are laid out with the given
/// coordinates most significant, so each slice over targets is contiguous.
struct ConditionalTable {
  std::vector<int> target_times;
  std::vector<int> given_times;
  int cardinality = 0;
  Eigen::VectorXd values;

  double at(std::span<const int> given_states, std::span<const int> target_states) const;
  std::size_t target_block() const;
};

ConditionalTable conditional(const JointDistribution& p, std::vector<int> target_times,
                             std::vector<int> given_times);

/// KL(p||q) = sum_w p(w) ln(p(w)/q(w)); cells with p(w) = 0 are skipped.
double kl_divergence(const JointDistribution& p, const JointDistribution& q);

}  // namespace imf
