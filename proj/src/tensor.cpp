#include "imf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "imf/errors.hpp"

namespace imf {

namespace {

std::size_t ipow(std::size_t base, int exponent) {
  std::size_t r = 1;
  for (int i = 0; i < exponent; ++i) r *= base;
  return r;
}

void check_times(const StateSpace& space, const std::vector<int>& times, const char* what) {
  if (times.empty()) throw DomainError(std::string(what) + ": time subset must be nonempty");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0 || times[i] > space.last_time())
      throw DomainError(std::string(what) + ": time index " + std::to_string(times[i]) +
                        " outside 0.." + std::to_string(space.last_time()));
    if (i > 0 && times[i] <= times[i - 1])
      throw DomainError(std::string(what) + ": time indices must be strictly increasing");
  }
}

// Sums `values` onto the coordinates in `times`. Walks the tensor with an
// odometer over the trajectory digits.
Eigen::VectorXd marginalize(const StateSpace& space, const Eigen::VectorXd& values,
                            const std::vector<int>& times) {
  const int k = space.cardinality();
  const int T = space.time_count();
  std::vector<std::size_t> stride(T, 0);
  {
    std::size_t s = 1;
    for (int j = static_cast<int>(times.size()) - 1; j >= 0; --j) {
      stride[times[j]] = s;
      s *= k;
    }
  }
  Eigen::VectorXd out =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ipow(k, static_cast<int>(times.size()))));
  std::vector<int> digits(T, 0);
  std::size_t target = 0;
  const std::size_t n = space.cell_count();
  for (std::size_t i = 0; i < n; ++i) {
    out[static_cast<Eigen::Index>(target)] += values[static_cast<Eigen::Index>(i)];
    for (int t = T - 1; t >= 0; --t) {
      if (++digits[t] < k) {
        target += stride[t];
        break;
      }
      digits[t] = 0;
      target -= stride[t] * (k - 1);
    }
  }
  return out;
}

}  // namespace

StateSpace::StateSpace(int cardinality, int interior_count, std::size_t cell_budget)
    : cardinality_(cardinality), interior_count_(interior_count), cell_count_(0) {
  if (cardinality < 2) throw DomainError("state space: cardinality must be at least 2");
  if (interior_count < 1) throw DomainError("state space: interior_count must be at least 1");
  std::size_t cells = 1;
  for (int t = 0; t < interior_count + 2; ++t) {
    if (cells > cell_budget / static_cast<std::size_t>(cardinality))
      throw BudgetError("state space: " + std::to_string(cardinality) + "^" +
                        std::to_string(interior_count + 2) + " cells exceed the budget of " +
                        std::to_string(cell_budget));
    cells *= static_cast<std::size_t>(cardinality);
  }
  cell_count_ = cells;
}

std::size_t StateSpace::flat_index(std::span<const int> trajectory) const {
  if (static_cast<int>(trajectory.size()) != time_count())
    throw DomainError("flat_index: trajectory has " + std::to_string(trajectory.size()) +
                      " coordinates, expected " + std::to_string(time_count()));
  std::size_t index = 0;
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    const int x = trajectory[t];
    if (x < 0 || x >= cardinality_)
      throw DomainError("flat_index: coordinate " + std::to_string(t) + " = " +
                        std::to_string(x) + " outside 0.." + std::to_string(cardinality_ - 1));
    index = index * static_cast<std::size_t>(cardinality_) + static_cast<std::size_t>(x);
  }
  return index;
}

std::vector<int> StateSpace::trajectory(std::size_t index) const {
  if (index >= cell_count_)
    throw DomainError("trajectory: index " + std::to_string(index) + " out of range");
  std::vector<int> out(time_count());
  for (int t = time_count() - 1; t >= 0; --t) {
    out[t] = static_cast<int>(index % cardinality_);
    index /= cardinality_;
  }
  return out;
}

SignedMeasure::SignedMeasure(const StateSpace& space)
    : space_(space), values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.cell_count()))) {}

SignedMeasure::SignedMeasure(const StateSpace& space, Eigen::VectorXd values)
    : space_(space), values_(std::move(values)) {
  if (static_cast<std::size_t>(values_.size()) != space_.cell_count())
    throw DomainError("signed measure: " + std::to_string(values_.size()) +
                      " values for a space of " + std::to_string(space_.cell_count()) + " cells");
}

SignedMeasure& SignedMeasure::operator+=(const SignedMeasure& other) {
  if (!(space_ == other.space_)) throw DomainError("signed measure: shape mismatch in +");
  values_ += other.values_;
  return *this;
}

SignedMeasure& SignedMeasure::operator-=(const SignedMeasure& other) {
  if (!(space_ == other.space_)) throw DomainError("signed measure: shape mismatch in -");
  values_ -= other.values_;
  return *this;
}

SignedMeasure& SignedMeasure::operator*=(double scale) {
  values_ *= scale;
  return *this;
}

double inner(const SignedMeasure& a, const SignedMeasure& b) {
  if (!(a.space() == b.space())) throw DomainError("inner product: shape mismatch");
  return a.values().dot(b.values());
}

double squared_norm(const SignedMeasure& a) { return a.values().squaredNorm(); }

double norm(const SignedMeasure& a) { return std::sqrt(squared_norm(a)); }

JointDistribution::JointDistribution(const StateSpace& space, Eigen::VectorXd values, double drift)
    : space_(space), values_(std::move(values)), drift_(drift) {}

JointDistribution JointDistribution::normalized(const StateSpace& space, Eigen::VectorXd values) {
  if (static_cast<std::size_t>(values.size()) != space.cell_count())
    throw DomainError("distribution: " + std::to_string(values.size()) +
                      " values for a space of " + std::to_string(space.cell_count()) + " cells");
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
      throw ValidationError("distribution: cell " + std::to_string(i) + " has invalid mass " +
                            std::to_string(values[i]));
  }
  const double total = values.sum();
  if (!(total > 0.0)) throw ValidationError("distribution: total mass is zero");
  values /= total;
  return JointDistribution(space, std::move(values), total - 1.0);
}

JointDistribution JointDistribution::from_values(const StateSpace& space, Eigen::VectorXd values) {
  JointDistribution p = normalized(space, std::move(values));
  if (std::abs(p.drift_) > kProbabilityTolerance)
    throw ValidationError("distribution: total mass deviates from 1 by " +
                          std::to_string(p.drift_));
  return p;
}

JointDistribution JointDistribution::uniform(const StateSpace& space) {
  const auto n = static_cast<Eigen::Index>(space.cell_count());
  return JointDistribution(space, Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)), 0.0);
}

double Marginal::at(std::span<const int> states) const {
  if (states.size() != times.size()) throw DomainError("marginal: wrong number of states");
  std::size_t index = 0;
  for (int x : states) {
    if (x < 0 || x >= cardinality) throw DomainError("marginal: state out of range");
    index = index * cardinality + x;
  }
  return values[static_cast<Eigen::Index>(index)];
}

Marginal marginal(const SignedMeasure& xi, std::vector<int> times) {
  check_times(xi.space(), times, "marginal");
  Eigen::VectorXd values = marginalize(xi.space(), xi.values(), times);
  return Marginal{std::move(times), xi.space().cardinality(), std::move(values)};
}

Marginal marginal(const JointDistribution& p, std::vector<int> times) {
  check_times(p.space(), times, "marginal");
  Eigen::VectorXd values = marginalize(p.space(), p.values(), times);
  return Marginal{std::move(times), p.space().cardinality(), std::move(values)};
}

std::size_t ConditionalTable::target_block() const {
  return ipow(cardinality, static_cast<int>(target_times.size()));
}

double ConditionalTable::at(std::span<const int> given_states,
                            std::span<const int> target_states) const {
  if (given_states.size() != given_times.size() || target_states.size() != target_times.size())
    throw DomainError("conditional: wrong number of states");
  std::size_t index = 0;
  for (int x : given_states) index = index * cardinality + x;
  for (int x : target_states) index = index * cardinality + x;
  return values[static_cast<Eigen::Index>(index)];
}

ConditionalTable conditional(const JointDistribution& p, std::vector<int> target_times,
                             std::vector<int> given_times) {
  check_times(p.space(), target_times, "conditional (targets)");
  if (!given_times.empty()) check_times(p.space(), given_times, "conditional (given)");
  std::vector<int> both;
  std::set_union(target_times.begin(), target_times.end(), given_times.begin(), given_times.end(),
                 std::back_inserter(both));
  if (both.size() != target_times.size() + given_times.size())
    throw DomainError("conditional: target and given times must be disjoint");

  const int k = p.space().cardinality();
  const Marginal joint = marginal(p, both);
  Eigen::VectorXd given_mass = Eigen::VectorXd::Ones(1);
  if (!given_times.empty()) given_mass = marginal(p, given_times).values;

  const std::size_t n_given = ipow(k, static_cast<int>(given_times.size()));
  const std::size_t n_target = ipow(k, static_cast<int>(target_times.size()));

  // Position of every target / given coordinate inside `both`.
  std::vector<std::size_t> target_pos, given_pos;
  for (int t : target_times)
    target_pos.push_back(std::lower_bound(both.begin(), both.end(), t) - both.begin());
  for (int t : given_times)
    given_pos.push_back(std::lower_bound(both.begin(), both.end(), t) - both.begin());

  ConditionalTable table{target_times, given_times, k,
                         Eigen::VectorXd(static_cast<Eigen::Index>(n_given * n_target))};
  std::vector<int> merged(both.size());
  for (std::size_t g = 0; g < n_given; ++g) {
    const double mass = given_mass[static_cast<Eigen::Index>(g)];
    std::size_t rest = g;
    for (std::size_t j = given_pos.size(); j-- > 0;) {
      merged[given_pos[j]] = static_cast<int>(rest % k);
      rest /= k;
    }
    if (!(mass > 0.0)) {
      std::vector<int> cell;
      for (std::size_t j = 0; j < given_pos.size(); ++j) cell.push_back(merged[given_pos[j]]);
      std::string where;
      for (std::size_t j = 0; j < cell.size(); ++j)
        where += (j ? "," : "") + std::to_string(cell[j]);
      throw SingularConditioningError("conditional: zero conditioning mass at given states (" +
                                          where + ")",
                                      std::move(cell));
    }
    for (std::size_t t = 0; t < n_target; ++t) {
      rest = t;
      for (std::size_t j = target_pos.size(); j-- > 0;) {
        merged[target_pos[j]] = static_cast<int>(rest % k);
        rest /= k;
      }
      table.values[static_cast<Eigen::Index>(g * n_target + t)] = joint.at(merged) / mass;
    }
  }
  return table;
}

double kl_divergence(const JointDistribution& p, const JointDistribution& q) {
  if (!(p.space() == q.space())) throw DomainError("kl_divergence: shape mismatch");
  double total = 0.0;
  const auto n = p.values().size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = p.values()[i];
    if (pi == 0.0) continue;
    const double qi = q.values()[i];
    if (qi == 0.0)
      throw InfiniteDivergenceError(
          "kl_divergence: p has mass where q vanishes at cell " + std::to_string(i),
          static_cast<std::size_t>(i));
    // ln(p/q) through log1p stays accurate when p and q nearly coincide.
    total += pi * std::log1p((pi - qi) / qi);
  }
  return std::max(total, 0.0);
}

}  // namespace imf
