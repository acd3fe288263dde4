#include "imf/theory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "imf/errors.hpp"

namespace imf {

namespace {

std::size_t ipow(std::size_t base, std::size_t exponent) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exponent; ++i) r *= base;
  return r;
}

SignedMeasure gaussian_measure(const StateSpace& space, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(space.cell_count()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return SignedMeasure(space, std::move(v));
}

std::string at_k(const char* what, double k) {
  std::string s = what;
  s += " k=";
  const long twice = std::lround(2.0 * k);
  s += std::to_string(twice / 2);
  if (twice % 2 != 0) s += ".5";
  return s;
}

void lemma4_records(CertificateReport& report, const std::string& label, double f_k, double f_half, double f_next,
                    const GradientNorms& at_k_grad, const GradientNorms& at_half_grad,
                    const RateConstants& c, double tolerance) {
  report.require_ge("decrease" + label, f_k - f_next, c.rate * at_k_grad.lc * at_k_grad.lc,
                    tolerance);
  report.require_ge("markov half-step" + label, f_k - f_half,
                    0.5 * c.m * at_k_grad.la * at_k_grad.la, tolerance);
  report.require_ge("reciprocal half-step" + label, f_half - f_next,
                    0.5 * c.m * at_half_grad.lb * at_half_grad.lb, tolerance);
}

}  // namespace

double RateConstants::bound(int k, double kl0) const {
  return kl0 * std::exp(static_cast<double>(k - 1) * std::log1p(-rate));
}

RateConstants compute_constants(const BridgeConditional& bridge, const MarginalPair& marginals) {
  RateConstants c;
  c.eps_q = bridge.min_entry();
  c.eps_mu = marginals.mu.minCoeff();
  c.eps_nu = marginals.nu.minCoeff();
  double delta = c.eps_mu * c.eps_nu;
  for (int i = 0; i <= bridge.space().interior_count(); ++i) delta *= c.eps_q;
  c.delta = delta;
  c.m = c.eps_q * c.delta;
  c.rate = c.m * c.m * c.m / 4.0;
  c.contraction = 1.0 - c.rate;
  return c;
}

double rate_constant_direct(const RateConstants& c, int interior_count) {
  return std::pow(c.eps_q, interior_count + 2) * c.eps_mu * c.eps_nu;
}

std::string_view to_string(Subspace id) {
  switch (id) {
    case Subspace::LA: return "L_A";
    case Subspace::LB: return "L_B";
    case Subspace::LC: return "L_C";
  }
  return "?";
}

ConstraintOperator::ConstraintOperator(const StateSpace& space, Subspace id)
    : space_(space), id_(id) {
  const int last = space.last_time();
  switch (id) {
    case Subspace::LA:
      for (int n = 0; n < last; ++n) blocks_.push_back({n, n + 1});
      break;
    case Subspace::LB: blocks_.push_back({0, last}); break;
    case Subspace::LC:
      blocks_.push_back({0});
      blocks_.push_back({last});
      break;
  }
  const std::size_t k = static_cast<std::size_t>(space.cardinality());
  std::vector<std::size_t> offset;
  for (const auto& b : blocks_) {
    offset.push_back(rows_);
    rows_ += ipow(k, b.size());
  }

  // Gram entries count the cells shared by two marginal cells: zero if they
  // fix a common time to different states, else K^(free times).
  const auto n_rows = static_cast<Eigen::Index>(rows_);
  Eigen::MatrixXd gram(n_rows, n_rows);
  const int T = space.time_count();
  std::vector<int> fixed(T);
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& b1 = blocks_[bi];
    const std::size_t n1 = ipow(k, b1.size());
    for (std::size_t bj = 0; bj < blocks_.size(); ++bj) {
      const auto& b2 = blocks_[bj];
      const std::size_t n2 = ipow(k, b2.size());
      std::vector<int> uni;
      std::set_union(b1.begin(), b1.end(), b2.begin(), b2.end(), std::back_inserter(uni));
      const double shared = static_cast<double>(ipow(k, T - uni.size()));
      for (std::size_t r = 0; r < n1; ++r) {
        std::fill(fixed.begin(), fixed.end(), -1);
        std::size_t rest = r;
        for (std::size_t j = b1.size(); j-- > 0;) {
          fixed[b1[j]] = static_cast<int>(rest % k);
          rest /= k;
        }
        for (std::size_t s = 0; s < n2; ++s) {
          bool consistent = true;
          rest = s;
          for (std::size_t j = b2.size(); j-- > 0;) {
            const int x = static_cast<int>(rest % k);
            rest /= k;
            if (fixed[b2[j]] >= 0 && fixed[b2[j]] != x) consistent = false;
          }
          gram(static_cast<Eigen::Index>(offset[bi] + r), static_cast<Eigen::Index>(offset[bj] + s)) =
              consistent ? shared : 0.0;
        }
      }
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double cutoff = 1e-10 * lambda.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(n_rows);
  for (Eigen::Index i = 0; i < n_rows; ++i) {
    if (lambda[i] > cutoff) {
      inv[i] = 1.0 / lambda[i];
      ++rank_;
    }
  }
  gram_pinv_ = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::VectorXd ConstraintOperator::apply(const SignedMeasure& xi) const {
  if (!(xi.space() == space_)) throw DomainError("constraint operator: shape mismatch");
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows_));
  Eigen::Index at = 0;
  for (const auto& b : blocks_) {
    const Marginal m = marginal(xi, b);
    out.segment(at, m.values.size()) = m.values;
    at += m.values.size();
  }
  return out;
}

SignedMeasure ConstraintOperator::apply_transpose(const Eigen::VectorXd& y) const {
  if (static_cast<std::size_t>(y.size()) != rows_)
    throw DomainError("constraint operator: row vector has the wrong length");
  const int k = space_.cardinality();
  const int T = space_.time_count();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space_.cell_count()));
  std::vector<int> x(T, 0);
  for (std::size_t i = 0; i < space_.cell_count(); ++i) {
    double acc = 0.0;
    std::size_t offset = 0;
    for (const auto& b : blocks_) {
      std::size_t idx = 0;
      for (int t : b) idx = idx * k + x[t];
      acc += y[static_cast<Eigen::Index>(offset + idx)];
      offset += ipow(k, b.size());
    }
    out[static_cast<Eigen::Index>(i)] = acc;
    for (int t = T - 1; t >= 0; --t) {
      if (++x[t] < k) break;
      x[t] = 0;
    }
  }
  return SignedMeasure(space_, std::move(out));
}

Eigen::MatrixXd ConstraintOperator::dense_matrix() const {
  const auto n_rows = static_cast<Eigen::Index>(rows_);
  Eigen::MatrixXd c(n_rows, static_cast<Eigen::Index>(space_.cell_count()));
  for (Eigen::Index r = 0; r < n_rows; ++r)
    c.row(r) = apply_transpose(Eigen::VectorXd::Unit(n_rows, r)).values().transpose();
  return c;
}

double ConstraintOperator::residual(const SignedMeasure& xi) const {
  return apply(xi).cwiseAbs().maxCoeff();
}

ConstraintOperator build_constraint_operator(const StateSpace& space, Subspace id) {
  if (space.cell_count() > kDefaultCellBudget)
    throw BudgetError("constraint operator: tensor exceeds the cell budget");
  return ConstraintOperator(space, id);
}

SignedMeasure project_onto_subspace(const SignedMeasure& xi, const ConstraintOperator& op) {
  const Eigen::VectorXd weights = op.gram_pseudo_inverse() * op.apply(xi);
  return xi - op.apply_transpose(weights);
}

SubspaceProjectors::SubspaceProjectors(const StateSpace& space)
    : la(build_constraint_operator(space, Subspace::LA)),
      lb(build_constraint_operator(space, Subspace::LB)),
      lc(build_constraint_operator(space, Subspace::LC)) {}

const ConstraintOperator& SubspaceProjectors::get(Subspace id) const {
  switch (id) {
    case Subspace::LA: return la;
    case Subspace::LB: return lb;
    case Subspace::LC: return lc;
  }
  return lc;
}

SignedMeasure kl_gradient(const JointDistribution& p, const JointDistribution& opt) {
  if (!(p.space() == opt.space())) throw DomainError("kl_gradient: shape mismatch");
  Eigen::VectorXd g(p.values().size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double a = p.values()[i];
    const double b = opt.values()[i];
    if (!(a > 0.0))
      throw DomainError("kl_gradient: p vanishes at cell " + std::to_string(i) +
                        "; gradients are defined from k = 1 on");
    if (!(b > 0.0))
      throw InfiniteDivergenceError("kl_gradient: reference vanishes at cell " +
                                        std::to_string(i),
                                    static_cast<std::size_t>(i));
    g[i] = std::log1p((a - b) / b) + 1.0;
  }
  return SignedMeasure(p.space(), std::move(g));
}

GradientNorms projected_gradient_norms(const JointDistribution& p, const JointDistribution& opt,
                                       const SubspaceProjectors& projectors) {
  const SignedMeasure g = kl_gradient(p, opt);
  return GradientNorms{norm(project_onto_subspace(g, projectors.la)),
                       norm(project_onto_subspace(g, projectors.lb)),
                       norm(project_onto_subspace(g, projectors.lc))};
}

void CertificateReport::require_ge(std::string check, double lhs, double rhs, double tolerance) {
  const double slack = lhs - rhs;
  checks.push_back(CheckRecord{std::move(check), lhs, rhs, slack, tolerance, slack >= -tolerance});
}

void CertificateReport::require_le(std::string check, double lhs, double rhs, double tolerance) {
  const double slack = rhs - lhs;
  checks.push_back(CheckRecord{std::move(check), lhs, rhs, slack, tolerance, slack >= -tolerance});
}

void CertificateReport::merge(const CertificateReport& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
  notes.insert(notes.end(), other.notes.begin(), other.notes.end());
}

bool CertificateReport::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckRecord& c) { return c.pass; });
}

double CertificateReport::min_slack() const {
  double m = INFINITY;
  for (const auto& c : checks) m = std::min(m, c.slack);
  return m;
}

CertificateReport check_lemma3(const StateSpace& space, int trials, std::uint64_t seed,
                               double tolerance) {
  CertificateReport report{"lemma3", {}, {}};
  if (trials <= 0) {
    report.notes.push_back("no trials requested; the certificate holds vacuously");
    return report;
  }
  const SubspaceProjectors proj(space);
  std::mt19937_64 rng(seed);
  for (int t = 0; t < trials; ++t) {
    const SignedMeasure xi = project_onto_subspace(gaussian_measure(space, rng), proj.lc);
    const double lhs = squared_norm(project_onto_subspace(xi, proj.la)) +
                       squared_norm(project_onto_subspace(xi, proj.lb));
    report.require_ge("trial " + std::to_string(t), lhs, squared_norm(xi), tolerance);
  }
  return report;
}

CertificateReport check_subspace_structure(const StateSpace& space, int trials,
                                           std::uint64_t seed, double tolerance) {
  CertificateReport report{"subspace_structure", {}, {}};
  if (trials <= 0) {
    report.notes.push_back("no trials requested; the certificate holds vacuously");
    return report;
  }
  const SubspaceProjectors proj(space);
  std::mt19937_64 rng(seed);
  for (int t = 0; t < trials; ++t) {
    const SignedMeasure in_b = project_onto_subspace(gaussian_measure(space, rng), proj.lb);
    report.require_le("L_B in L_C, trial " + std::to_string(t), proj.lc.residual(in_b), 0.0,
                      tolerance);
    const SignedMeasure in_c = project_onto_subspace(gaussian_measure(space, rng), proj.lc);
    const SignedMeasure complement = in_c - project_onto_subspace(in_c, proj.lb);
    report.require_le("L_C minus L_B in L_A, trial " + std::to_string(t),
                      proj.la.residual(complement), 0.0, tolerance);
  }
  return report;
}

CertificateReport check_lemma4(const JointDistribution& pk, const JointDistribution& p_half,
                               const JointDistribution& p_next, const JointDistribution& opt,
                               const RateConstants& constants,
                               const SubspaceProjectors& projectors, double tolerance) {
  CertificateReport report{"lemma4", {}, {}};
  const GradientNorms gk = projected_gradient_norms(pk, opt, projectors);
  const GradientNorms gh = projected_gradient_norms(p_half, opt, projectors);
  lemma4_records(report, "", kl_divergence(pk, opt), kl_divergence(p_half, opt),
                 kl_divergence(p_next, opt), gk, gh, constants, tolerance);
  return report;
}

CertificateReport check_lemma4(const IterationTrace& trace, const RateConstants& constants,
                               int max_k, double tolerance) {
  CertificateReport report{"lemma4", {}, {}};
  const auto& s = trace.steps;
  for (int k = 1; k <= max_k; ++k) {
    const std::size_t i = static_cast<std::size_t>(2 * k);
    if (i + 2 >= s.size()) break;
    if (!s[i].gradients || !s[i + 1].gradients) {
      report.notes.push_back(at_k("gradients not recorded;", k) + " skipped");
      continue;
    }
    lemma4_records(report, at_k("", k), s[i].kl_to_opt, s[i + 1].kl_to_opt, s[i + 2].kl_to_opt,
                   *s[i].gradients, *s[i + 1].gradients, constants, tolerance);
  }
  if (report.checks.empty()) report.notes.push_back("no iteration with k >= 1 to check");
  return report;
}

CertificateReport check_theorem1(const IterationTrace& trace, const RateConstants& constants,
                                 double tolerance) {
  CertificateReport report{"theorem1", {}, {}};
  const auto& s = trace.steps;
  if (s.empty()) return report;
  const double kl0 = s.front().kl_to_opt;
  if (s.size() > 2) report.require_le("first step f(p_1) <= f(p_0)", s[2].kl_to_opt, kl0,
                                      kBoundTolerance);
  for (std::size_t i = 2; i < s.size(); i += 2) {
    const int k = s[i].half_index / 2;
    report.require_le(at_k("rate bound", k), s[i].kl_to_opt, constants.bound(k, kl0),
                      kBoundTolerance);
    if (s[i].gradients) {
      const double g = s[i].gradients->lc;
      report.require_ge(at_k("pl inequality", k), g * g, s[i].kl_to_opt, tolerance);
      report.require_ge(at_k("strong convexity", k), g, s[i].distance_to_opt, tolerance);
    }
  }
  if (s.size() <= 2) report.notes.push_back("run stopped at k = 0; bound holds trivially");
  return report;
}

CertificateReport check_mass_bound(const IterationTrace& trace, const RateConstants& constants) {
  CertificateReport report{"lemma2", {}, {}};
  for (const auto& r : trace.steps) {
    if (r.half_index < 1) continue;
    report.require_ge(at_k("min mass", r.k()), r.min_mass, constants.m, kMassTolerance);
  }
  return report;
}

CertificateReport check_convexity_spectrum(const JointDistribution& p,
                                           const RateConstants& constants) {
  CertificateReport report{"spectrum", {}, {}};
  report.require_ge("min cell >= m", p.min_mass(), constants.m, kMassTolerance);
  report.require_le("max cell <= 1", p.max_mass(), 1.0, 0.0);
  return report;
}

CertificateReport check_gradients(const JointDistribution& p, const JointDistribution& opt,
                                  const SubspaceProjectors& projectors, int directions,
                                  std::uint64_t seed, double step, double relative_tolerance,
                                  double projection_tolerance) {
  CertificateReport report{"gradients", {}, {}};
  const StateSpace& space = p.space();
  const SignedMeasure g = kl_gradient(p, opt);
  const Eigen::VectorXd& pv = p.values();
  const Eigen::VectorXd& ov = opt.values();
  std::mt19937_64 rng(seed);

  for (Subspace id : {Subspace::LA, Subspace::LB, Subspace::LC}) {
    const ConstraintOperator& op = projectors.get(id);
    const double g_norm = norm(project_onto_subspace(g, op));
    for (int d = 0; d < directions; ++d) {
      SignedMeasure dir = project_onto_subspace(gaussian_measure(space, rng), op);
      // Rescale so that p +- step * dir stays inside the positive orthant.
      const double reach = (dir.values().cwiseAbs().cwiseQuotient(pv)).maxCoeff();
      if (!(reach > 0.0)) continue;
      dir *= 1.0 / reach;
      // Central difference of sum x ln(x/o), each cell split so that no large
      // terms cancel:
      //   x+ ln(x+/o) - x- ln(x-/o)
      //     = 2 h d ln(p/o) + x+ ln(x+/p) - x- ln(x-/p).
      double diff = 0.0;
      for (Eigen::Index i = 0; i < pv.size(); ++i) {
        const double hd = step * dir.values()[i];
        const double r = hd / pv[i];
        diff += 2.0 * hd * std::log1p((pv[i] - ov[i]) / ov[i]) +
                (pv[i] + hd) * std::log1p(r) - (pv[i] - hd) * std::log1p(-r);
      }
      const double fd = diff / (2.0 * step);
      const double analytic = inner(g, dir);
      const double scale = std::max(std::abs(analytic), g_norm * norm(dir));
      const double rel = scale > 0.0 ? std::abs(fd - analytic) / scale : std::abs(fd - analytic);
      report.require_le(std::string("finite difference ") + std::string(to_string(id)) +
                            " direction " + std::to_string(d),
                        rel, relative_tolerance, 0.0);
    }
    for (int t = 0; t < 3; ++t) {
      const SignedMeasure xi = gaussian_measure(space, rng);
      const SignedMeasure zeta = gaussian_measure(space, rng);
      const SignedMeasure once = project_onto_subspace(xi, op);
      const SignedMeasure twice = project_onto_subspace(once, op);
      report.require_le(std::string("idempotent ") + std::string(to_string(id)) + " trial " +
                            std::to_string(t),
                        (twice.values() - once.values()).cwiseAbs().maxCoeff(), 0.0,
                        projection_tolerance);
      const double lhs = inner(once, zeta);
      const double rhs = inner(xi, project_onto_subspace(zeta, op));
      report.require_le(std::string("self-adjoint ") + std::string(to_string(id)) + " trial " +
                            std::to_string(t),
                        std::abs(lhs - rhs), 0.0, projection_tolerance);
    }
  }
  return report;
}

JointDistribution perturb_within(const JointDistribution& centre, const ConstraintOperator& op,
                                 double floor, std::mt19937_64& rng) {
  const SignedMeasure dir = project_onto_subspace(gaussian_measure(centre.space(), rng), op);
  const Eigen::VectorXd& c = centre.values();
  double reach = INFINITY;
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (dir.values()[i] < 0.0) reach = std::min(reach, (c[i] - floor) / -dir.values()[i]);
  if (!std::isfinite(reach) || reach <= 0.0) return centre;
  std::uniform_real_distribution<double> fraction(0.0, 1.0);
  Eigen::VectorXd values = c + fraction(rng) * reach * dir.values();
  return JointDistribution::from_values(centre.space(), std::move(values));
}

CertificateReport check_projection_argmin(const JointDistribution& pk,
                                          const JointDistribution& p_half,
                                          const JointDistribution& p_next,
                                          const JointDistribution& opt,
                                          const SubspaceProjectors& projectors,
                                          const RateConstants& constants, int perturbations,
                                          std::uint64_t seed, double argmin_tolerance,
                                          double pythagoras_tolerance) {
  CertificateReport report{"lemma1", {}, {}};
  if (!(pk.space() == p_half.space()) || !(pk.space() == p_next.space()))
    throw DomainError("check_projection_argmin: iterates live on different spaces");
  std::mt19937_64 rng(seed);
  const double floor = 0.5 * constants.m;
  const double f_half = kl_divergence(p_half, opt);
  const double f_next = kl_divergence(p_next, opt);
  for (int i = 0; i < perturbations; ++i) {
    const JointDistribution a = perturb_within(p_half, projectors.la, floor, rng);
    const double fa = kl_divergence(a, opt);
    report.require_ge("markov argmin " + std::to_string(i), fa, f_half, argmin_tolerance);
    report.require_le("markov pythagoras " + std::to_string(i),
                      std::abs(fa - kl_divergence(a, p_half) - f_half), 0.0,
                      pythagoras_tolerance);
    const JointDistribution b = perturb_within(p_next, projectors.lb, floor, rng);
    const double fb = kl_divergence(b, opt);
    report.require_ge("reciprocal argmin " + std::to_string(i), fb, f_next, argmin_tolerance);
    report.require_le("reciprocal pythagoras " + std::to_string(i),
                      std::abs(fb - kl_divergence(b, p_next) - f_next), 0.0,
                      pythagoras_tolerance);
  }
  return report;
}

void annotate_trace(IterationTrace& trace, const RateConstants& constants) {
  auto& s = trace.steps;
  if (s.empty()) return;
  const double kl0 = s.front().kl_to_opt;
  for (std::size_t i = 2; i < s.size(); i += 2) {
    const int k = s[i].half_index / 2;
    s[i].bound_value = constants.bound(k, kl0);
    if (s[i].gradients) {
      const double g = s[i].gradients->lc;
      s[i].pl_slack = g * g - s[i].kl_to_opt;
      if (i + 2 < s.size())
        s[i].lemma4_slack = (s[i].kl_to_opt - s[i + 2].kl_to_opt) - constants.rate * g * g;
    }
  }
}

}  // namespace imf
