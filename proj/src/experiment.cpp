#include "imf/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace imf {

using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------- parsing

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown field '" + key + "'");
  }
}

template <class T>
T field(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

Eigen::VectorXd parse_vector(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected a nonempty array");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(where + "[" + std::to_string(i) + "]: not a number");
    out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return out;
}

Eigen::MatrixXd parse_matrix(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected an array of rows");
  const std::size_t rows = v.size();
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < rows; ++i) {
    const Eigen::VectorXd row = parse_vector(v[i], where + "[" + std::to_string(i) + "]");
    if (i == 0) out.resize(static_cast<Eigen::Index>(rows), row.size());
    if (row.size() != out.cols()) throw ConfigError(where + ": ragged matrix");
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

RandomInstanceSpec parse_generator(const json& g) {
  const std::string where = "instance.generator";
  reject_unknown(g, {"cardinality", "interior_count", "dirichlet_concentration", "eps_floor", "seed"},
                 where);
  if (!g.contains("cardinality") || !g.contains("interior_count"))
    throw ConfigError(where + ": cardinality and interior_count are required");
  if (!g.contains("seed")) throw ConfigError(where + ": seed is required");
  RandomInstanceSpec spec;
  spec.cardinality = field<int>(g, "cardinality", 0, where);
  spec.interior_count = field<int>(g, "interior_count", 0, where);
  spec.concentration = field<double>(g, "dirichlet_concentration", 1.0, where);
  spec.eps_floor = field<double>(g, "eps_floor", 1e-3, where);
  spec.seed = field<std::uint64_t>(g, "seed", 0, where);
  return spec;
}

ExplicitInstance parse_explicit(const json& e) {
  const std::string where = "instance.explicit";
  reject_unknown(e, {"initial", "transitions", "marginals", "coupling"}, where);
  if (!e.contains("initial") || !e.contains("transitions"))
    throw ConfigError(where + ": initial and transitions are required");
  Eigen::VectorXd initial = parse_vector(e.at("initial"), where + ".initial");
  const json& tr = e.at("transitions");
  if (!tr.is_array()) throw ConfigError(where + ".transitions: expected an array of matrices");
  std::vector<Eigen::MatrixXd> transitions;
  for (std::size_t n = 0; n < tr.size(); ++n)
    transitions.push_back(parse_matrix(tr[n], where + ".transitions[" + std::to_string(n) + "]"));
  const StateSpace space(static_cast<int>(initial.size()),
                         static_cast<int>(transitions.size()) - 1);
  ExplicitInstance out{MarkovSpec(space, std::move(initial), std::move(transitions)), {},
                       ExplicitInstance::CouplingKind::independent, {}};
  if (e.contains("marginals")) {
    const json& m = e.at("marginals");
    if (m.is_string()) {
      if (m.get<std::string>() != "reference")
        throw ConfigError(where + ".marginals: expected \"reference\" or {mu, nu}");
    } else {
      reject_unknown(m, {"mu", "nu"}, where + ".marginals");
      if (!m.contains("mu") || !m.contains("nu"))
        throw ConfigError(where + ".marginals: mu and nu are required");
      out.marginals = MarginalPair::create(parse_vector(m.at("mu"), where + ".marginals.mu"),
                                           parse_vector(m.at("nu"), where + ".marginals.nu"));
    }
  }
  if (e.contains("coupling")) {
    const json& c = e.at("coupling");
    if (c.is_string()) {
      const std::string kind = c.get<std::string>();
      if (kind == "independent")
        out.coupling = ExplicitInstance::CouplingKind::independent;
      else if (kind == "reference")
        out.coupling = ExplicitInstance::CouplingKind::reference;
      else
        throw ConfigError(where + ".coupling: expected \"independent\", \"reference\" or a matrix");
    } else {
      out.coupling = ExplicitInstance::CouplingKind::matrix;
      out.coupling_matrix = parse_matrix(c, where + ".coupling");
    }
  }
  return out;
}

// A check entry is either a bool or an object with "enabled" plus parameters.
bool check_enabled(const json& v, const std::string& where) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_object()) return field<bool>(v, "enabled", true, where);
  throw ConfigError(where + ": expected a bool or an object");
}

ChecksConfig parse_checks(const json& c) {
  ChecksConfig out;
  const std::string where = "checks";
  if (c.is_array()) {
    out.lemma1 = out.lemma2 = out.lemma3 = out.lemma4 = out.theorem1 = out.spectrum =
        out.gradients = false;
    for (const auto& name : c) {
      if (!name.is_string()) throw ConfigError(where + ": list entries must be names");
      const std::string n = name.get<std::string>();
      if (n == "lemma1") out.lemma1 = true;
      else if (n == "lemma2") out.lemma2 = true;
      else if (n == "lemma3") out.lemma3 = true;
      else if (n == "lemma4") out.lemma4 = true;
      else if (n == "theorem1") out.theorem1 = true;
      else if (n == "spectrum") out.spectrum = true;
      else if (n == "gradients") out.gradients = true;
      else throw ConfigError(where + ": unknown certificate '" + n + "'");
    }
    return out;
  }
  reject_unknown(c, {"lemma1", "lemma2", "lemma3", "lemma4", "theorem1", "spectrum", "gradients",
                     "tolerance"},
                 where);
  if (c.contains("lemma1")) {
    const json& v = c.at("lemma1");
    out.lemma1 = check_enabled(v, where + ".lemma1");
    if (v.is_object()) {
      reject_unknown(v, {"enabled", "perturbations", "iterations"}, where + ".lemma1");
      out.lemma1_perturbations = field<int>(v, "perturbations", 100, where + ".lemma1");
      out.lemma1_iterations = field<int>(v, "iterations", 3, where + ".lemma1");
    }
  }
  if (c.contains("lemma2")) out.lemma2 = check_enabled(c.at("lemma2"), where + ".lemma2");
  if (c.contains("lemma3")) {
    const json& v = c.at("lemma3");
    out.lemma3 = check_enabled(v, where + ".lemma3");
    if (v.is_object()) {
      reject_unknown(v, {"enabled", "trials"}, where + ".lemma3");
      out.lemma3_trials = field<int>(v, "trials", 1000, where + ".lemma3");
    }
  }
  if (c.contains("lemma4")) {
    const json& v = c.at("lemma4");
    out.lemma4 = check_enabled(v, where + ".lemma4");
    if (v.is_object()) {
      reject_unknown(v, {"enabled", "max_k"}, where + ".lemma4");
      out.lemma4_max_k = field<int>(v, "max_k", 50, where + ".lemma4");
    }
  }
  if (c.contains("theorem1")) out.theorem1 = check_enabled(c.at("theorem1"), where + ".theorem1");
  if (c.contains("spectrum")) out.spectrum = check_enabled(c.at("spectrum"), where + ".spectrum");
  if (c.contains("gradients")) {
    const json& v = c.at("gradients");
    out.gradients = check_enabled(v, where + ".gradients");
    if (v.is_object()) {
      reject_unknown(v, {"enabled", "directions"}, where + ".gradients");
      out.gradient_directions = field<int>(v, "directions", 20, where + ".gradients");
    }
  }
  out.tolerance = field<double>(c, "tolerance", kDefaultCheckTolerance, where);
  if (!(out.tolerance >= 0.0)) throw ConfigError(where + ".tolerance must be nonnegative");
  if (out.lemma1_perturbations < 0 || out.lemma3_trials < 0 || out.gradient_directions < 0)
    throw ConfigError(where + ": counts must be nonnegative");
  return out;
}

SweepSpec parse_sweep(const json& s) {
  const std::string where = "sweep";
  reject_unknown(s, {"seeds", "seed_range", "cardinalities", "interior_counts"}, where);
  SweepSpec out;
  if (s.contains("seeds") == s.contains("seed_range"))
    throw ConfigError(where + ": give exactly one of seeds / seed_range");
  if (s.contains("seeds")) {
    out.seeds = field<std::vector<std::uint64_t>>(s, "seeds", {}, where);
  } else {
    const json& r = s.at("seed_range");
    reject_unknown(r, {"first", "count"}, where + ".seed_range");
    const auto first = field<std::uint64_t>(r, "first", 0, where + ".seed_range");
    const auto count = field<std::int64_t>(r, "count", 0, where + ".seed_range");
    if (count < 0) throw ConfigError(where + ".seed_range.count must be nonnegative");
    for (std::int64_t i = 0; i < count; ++i) out.seeds.push_back(first + static_cast<std::uint64_t>(i));
  }
  if (out.seeds.empty()) throw ConfigError(where + ": the seed list is empty");
  std::set<std::uint64_t> unique(out.seeds.begin(), out.seeds.end());
  if (unique.size() != out.seeds.size()) throw ConfigError(where + ": seeds must be distinct");
  out.cardinalities = field<std::vector<int>>(s, "cardinalities", {}, where);
  out.interior_counts = field<std::vector<int>>(s, "interior_counts", {}, where);
  return out;
}

// ------------------------------------------------------------- execution

std::uint64_t salted(std::uint64_t seed, std::uint64_t salt) {
  return seed * 0x9E3779B97F4A7C15ULL + salt;
}

CertificateReport trace_invariants(const IterationTrace& trace, const MarginalPair& marginals) {
  CertificateReport report{"trace_invariants", {}, {}};
  const auto& s = trace.steps;
  for (std::size_t i = 1; i < s.size(); ++i)
    report.require_le("monotone kl half-step " + std::to_string(s[i].half_index),
                      s[i].kl_to_opt, s[i - 1].kl_to_opt, kBoundTolerance);
  for (std::size_t i = 0; i < trace.iterates.size(); ++i) {
    const JointDistribution& p = trace.iterates[i];
    const int last = p.space().last_time();
    const double drift =
        std::max((marginal(p, {0}).values - marginals.mu).cwiseAbs().maxCoeff(),
                 (marginal(p, {last}).values - marginals.nu).cwiseAbs().maxCoeff());
    report.require_le("endpoint marginals half-step " + std::to_string(i), drift, 0.0, 1e-11);
  }
  return report;
}

template <class F>
double timed(std::map<std::string, double>& timings, const std::string& stage, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  body();
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  timings[stage] += ms;
  return ms;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string optional_cell(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json summary_json(const RunReport& report, ExitCode code) {
  json s;
  s["instance_id"] = report.instance_id;
  s["pass"] = report.pass();
  s["exit_code"] = static_cast<int>(code);
  json certs = json::array();
  for (const auto& c : report.certificates) {
    json e;
    e["name"] = c.name;
    e["pass"] = c.pass();
    e["checks"] = c.checks.size();
    e["min_slack"] = c.checks.empty() ? json(nullptr) : json(c.min_slack());
    e["notes"] = c.notes;
    certs.push_back(std::move(e));
  }
  s["certificates"] = std::move(certs);
  return s;
}

}  // namespace

std::uint64_t ExperimentConfig::effective_seed() const {
  if (seed) return *seed;
  if (const auto* g = std::get_if<RandomInstanceSpec>(&instance)) return g->seed;
  return 0;
}

ExperimentConfig parse_config(const json& doc) {
  reject_unknown(doc, {"instance", "seed", "imf", "oracle", "checks", "output", "sweep"}, "config");
  if (!doc.contains("instance")) throw ConfigError("config: instance is required");
  const json& inst = doc.at("instance");
  reject_unknown(inst, {"generator", "explicit"}, "instance");
  if (inst.contains("generator") == inst.contains("explicit"))
    throw ConfigError("instance: give exactly one of generator / explicit");

  ExperimentConfig cfg{RandomInstanceSpec{}, {}, {}, {}, {}, {}, {}};
  if (inst.contains("generator"))
    cfg.instance = parse_generator(inst.at("generator"));
  else
    cfg.instance = parse_explicit(inst.at("explicit"));
  if (doc.contains("seed")) cfg.seed = field<std::uint64_t>(doc, "seed", 0, "config");

  if (doc.contains("imf")) {
    const json& m = doc.at("imf");
    reject_unknown(m, {"max_iterations", "stop_kl", "record_gradients"}, "imf");
    cfg.imf.max_iterations = field<int>(m, "max_iterations", 100, "imf");
    cfg.imf.stop_kl = field<double>(m, "stop_kl", 1e-14, "imf");
    cfg.imf.record_gradients = field<bool>(m, "record_gradients", true, "imf");
  }
  if (cfg.imf.max_iterations < 1) throw ConfigError("imf.max_iterations must be at least 1");
  if (!(cfg.imf.stop_kl >= 0.0)) throw ConfigError("imf.stop_kl must be nonnegative");

  if (doc.contains("oracle")) {
    const json& o = doc.at("oracle");
    reject_unknown(o, {"tolerance", "max_iterations"}, "oracle");
    cfg.oracle.tolerance = field<double>(o, "tolerance", 1e-13, "oracle");
    cfg.oracle.max_iterations = field<long>(o, "max_iterations", 100000, "oracle");
  }
  if (!(cfg.oracle.tolerance > 0.0)) throw ConfigError("oracle.tolerance must be positive");
  if (cfg.oracle.max_iterations < 1) throw ConfigError("oracle.max_iterations must be positive");

  if (doc.contains("checks")) cfg.checks = parse_checks(doc.at("checks"));

  if (doc.contains("output")) {
    const json& o = doc.at("output");
    reject_unknown(o, {"directory", "formats"}, "output");
    cfg.output.directory = field<std::string>(o, "directory", "imf-report", "output");
    if (o.contains("formats")) {
      const auto formats = field<std::vector<std::string>>(o, "formats", {}, "output");
      cfg.output.json = cfg.output.csv = false;
      for (const auto& f : formats) {
        if (f == "json") cfg.output.json = true;
        else if (f == "csv") cfg.output.csv = true;
        else throw ConfigError("output.formats: unknown format '" + f + "'");
      }
    }
  }

  if (doc.contains("sweep")) {
    if (!std::holds_alternative<RandomInstanceSpec>(cfg.instance))
      throw ConfigError("sweep: requires a generator instance");
    cfg.sweep = parse_sweep(doc.at("sweep"));
  }

  if (std::holds_alternative<ExplicitInstance>(cfg.instance) && cfg.checks.randomized() &&
      !cfg.seed)
    throw ConfigError("config: seed is required when randomized checks are enabled");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

bool RunReport::pass() const {
  return std::all_of(certificates.begin(), certificates.end(),
                     [](const CertificateReport& c) { return c.pass(); });
}

double RunReport::empirical_ratio() const {
  double worst = 0.0;
  for (std::size_t i = 2; i + 2 < convergence.size(); i += 2) {
    const double now = convergence[i].kl_to_opt;
    if (now > 1e-12) worst = std::max(worst, convergence[i + 2].kl_to_opt / now);
  }
  return worst;
}

RunReport execute(const ExperimentConfig& config, const std::optional<double>& tolerance_override) {
  RunReport report;
  auto& timings = report.timings_ms;
  const double tol = tolerance_override.value_or(config.checks.tolerance);
  const ChecksConfig& checks = config.checks;
  const std::uint64_t seed = config.effective_seed();

  std::optional<MarkovSpec> reference;
  std::optional<MarginalPair> marginals;
  std::optional<JointDistribution> q;
  std::optional<BridgeConditional> bridge;
  std::optional<JointDistribution> p0;

  timed(timings, "instance", [&] {
    if (const auto* g = std::get_if<RandomInstanceSpec>(&config.instance)) {
      Instance inst = generate_instance(*g);
      reference = std::move(inst.reference);
      marginals = std::move(inst.marginals);
      report.instance_id = "K" + std::to_string(g->cardinality) + "-N" +
                           std::to_string(g->interior_count) + "-seed" + std::to_string(g->seed);
    } else {
      const auto& e = std::get<ExplicitInstance>(config.instance);
      reference = e.reference;
      report.instance_id = "explicit";
    }
    q = build_markov_joint(*reference);
    bridge = bridge_conditional(*q);
    std::optional<Coupling> eta;
    if (const auto* e = std::get_if<ExplicitInstance>(&config.instance)) {
      const int last = q->space().last_time();
      marginals = e->marginals ? *e->marginals
                               : MarginalPair::create(marginal(*q, {0}).values,
                                                      marginal(*q, {last}).values);
      if (e->coupling == ExplicitInstance::CouplingKind::reference)
        eta = Coupling::create(endpoint_coupling(*q), *marginals);
      else if (e->coupling == ExplicitInstance::CouplingKind::matrix)
        eta = Coupling::create(e->coupling_matrix, *marginals);
    }
    if (!eta) eta = independent_coupling(*marginals);
    p0 = init_p0(*bridge, *eta);
  });
  report.cardinality = q->space().cardinality();
  report.interior_count = q->space().interior_count();

  std::optional<OracleSolution> oracle;
  timed(timings, "oracle", [&] { oracle = solve_oracle(*q, *bridge, *marginals, config.oracle); });
  report.oracle = OracleSummary{oracle->residual, oracle->iterations_used, oracle->log_domain};
  report.constants = compute_constants(*bridge, *marginals);

  ImfConfig imf_cfg = config.imf;
  imf_cfg.keep_iterates = true;
  std::optional<ImfResult> run;
  timed(timings, "imf", [&] { run = run_imf(*p0, *bridge, oracle->lifted, imf_cfg); });
  IterationTrace& trace = run->trace;
  annotate_trace(trace, report.constants);

  const JointDistribution& opt = oracle->lifted;
  const RateConstants& c = report.constants;
  timed(timings, "certificates", [&] {
    report.certificates.push_back(trace_invariants(trace, *marginals));
    std::optional<SubspaceProjectors> projectors;
    auto proj = [&]() -> const SubspaceProjectors& {
      if (!projectors) projectors.emplace(q->space());
      return *projectors;
    };
    if (checks.lemma1) {
      CertificateReport r{"lemma1", {}, {}};
      const int available = trace.iterations;
      const int first = available >= 2 ? 1 : 0;
      for (int k = first; k < std::min(available, first + checks.lemma1_iterations); ++k) {
        CertificateReport one = check_projection_argmin(
            trace.iterates[2 * k], trace.iterates[2 * k + 1], trace.iterates[2 * k + 2], opt,
            proj(), c, checks.lemma1_perturbations, salted(seed, 100 + k));
        for (auto& rec : one.checks) rec.name += " k=" + std::to_string(k);
        r.merge(one);
      }
      if (r.checks.empty()) r.notes.push_back("no IMF iteration was run; nothing to perturb");
      report.certificates.push_back(std::move(r));
    }
    if (checks.lemma2) report.certificates.push_back(check_mass_bound(trace, c));
    if (checks.lemma3) {
      report.certificates.push_back(
          check_lemma3(q->space(), checks.lemma3_trials, salted(seed, 1), tol));
      report.certificates.push_back(
          check_subspace_structure(q->space(), checks.lemma3_trials, salted(seed, 2), tol));
    }
    if (checks.lemma4) report.certificates.push_back(check_lemma4(trace, c, checks.lemma4_max_k, tol));
    if (checks.theorem1) report.certificates.push_back(check_theorem1(trace, c, tol));
    if (checks.spectrum) {
      CertificateReport r{"spectrum", {}, {}};
      for (std::size_t i = 1; i < trace.iterates.size(); ++i) {
        CertificateReport one = check_convexity_spectrum(trace.iterates[i], c);
        for (auto& rec : one.checks) rec.name += " half-step " + std::to_string(i);
        r.merge(one);
      }
      report.certificates.push_back(std::move(r));
    }
    if (checks.gradients) {
      // Every iterate is a projection, so one of its subspace gradients is
      // zero and a relative finite-difference error there measures round-off.
      // A seeded mix of p_1 with a random tensor has all three gradients O(1).
      const JointDistribution& base = trace.iterates[std::min<std::size_t>(2, trace.iterates.size() - 1)];
      std::mt19937_64 rng(salted(seed, 4));
      std::uniform_real_distribution<double> unit(0.5, 1.5);
      Eigen::VectorXd noise(base.values().size());
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = unit(rng);
      noise /= noise.sum();
      const JointDistribution point =
          JointDistribution::normalized(q->space(), 0.5 * base.values() + 0.5 * noise);
      report.certificates.push_back(check_gradients(point, opt, proj(), checks.gradient_directions,
                                                    salted(seed, 3), 1e-6, 1e-6, tol));
    }
  });

  report.kl_initial = trace.steps.front().kl_to_opt;
  report.kl_final = trace.steps.back().kl_to_opt;
  report.iterations = trace.iterations;
  report.reached_stop_kl = trace.reached_stop_kl;
  report.warnings = trace.warnings;
  report.convergence = trace.steps;
  return report;
}

json to_json(const CertificateReport& report) {
  json j;
  j["name"] = report.name;
  j["pass"] = report.pass();
  j["min_slack"] = report.checks.empty() ? json(nullptr) : json(report.min_slack());
  j["notes"] = report.notes;
  json checks = json::array();
  for (const auto& c : report.checks) {
    json e;
    e["name"] = c.name;
    e["lhs"] = c.lhs;
    e["rhs"] = c.rhs;
    e["slack"] = c.slack;
    e["tolerance"] = c.tolerance;
    e["pass"] = c.pass;
    checks.push_back(std::move(e));
  }
  j["checks"] = std::move(checks);
  return j;
}

CertificateReport certificate_from_json(const json& doc) {
  CertificateReport r;
  r.name = doc.at("name").get<std::string>();
  r.notes = doc.at("notes").get<std::vector<std::string>>();
  for (const auto& e : doc.at("checks"))
    r.checks.push_back(CheckRecord{e.at("name").get<std::string>(), e.at("lhs").get<double>(),
                                   e.at("rhs").get<double>(), e.at("slack").get<double>(),
                                   e.at("tolerance").get<double>(), e.at("pass").get<bool>()});
  return r;
}

json to_json(const RunReport& report) {
  json j;
  j["instance_id"] = report.instance_id;
  j["cardinality"] = report.cardinality;
  j["interior_count"] = report.interior_count;
  const RateConstants& c = report.constants;
  j["constants"] = json{{"eps_q", c.eps_q},   {"eps_mu", c.eps_mu}, {"eps_nu", c.eps_nu},
                        {"delta", c.delta},   {"m", c.m},           {"rate", c.rate},
                        {"contraction", c.contraction}};
  j["oracle"] = json{{"residual", report.oracle.residual},
                     {"iterations", report.oracle.iterations},
                     {"log_domain", report.oracle.log_domain}};
  j["kl_initial"] = report.kl_initial;
  j["kl_final"] = report.kl_final;
  j["iterations"] = report.iterations;
  j["reached_stop_kl"] = report.reached_stop_kl;
  j["pass"] = report.pass();
  json rows = json::array();
  for (const auto& r : report.convergence) {
    json e;
    e["half_index"] = r.half_index;
    e["kl_to_opt"] = r.kl_to_opt;
    e["kl_decrement"] = r.kl_decrement;
    e["min_mass"] = r.min_mass;
    e["normalization_drift"] = r.normalization_drift;
    e["distance_to_opt"] = r.distance_to_opt;
    if (r.gradients)
      e["gradients"] = json{{"la", r.gradients->la}, {"lb", r.gradients->lb}, {"lc", r.gradients->lc}};
    else
      e["gradients"] = nullptr;
    e["bound_value"] = optional_json(r.bound_value);
    e["lemma4_slack"] = optional_json(r.lemma4_slack);
    e["pl_slack"] = optional_json(r.pl_slack);
    rows.push_back(std::move(e));
  }
  j["convergence"] = std::move(rows);
  json certs = json::array();
  for (const auto& cert : report.certificates) certs.push_back(to_json(cert));
  j["certificates"] = std::move(certs);
  j["warnings"] = report.warnings;
  return j;
}

RunReport run_report_from_json(const json& doc) {
  RunReport r;
  r.instance_id = doc.at("instance_id").get<std::string>();
  r.cardinality = doc.at("cardinality").get<int>();
  r.interior_count = doc.at("interior_count").get<int>();
  const json& c = doc.at("constants");
  r.constants = RateConstants{c.at("eps_q").get<double>(), c.at("eps_mu").get<double>(),
                              c.at("eps_nu").get<double>(), c.at("delta").get<double>(),
                              c.at("m").get<double>(),      c.at("rate").get<double>(),
                              c.at("contraction").get<double>()};
  const json& o = doc.at("oracle");
  r.oracle = OracleSummary{o.at("residual").get<double>(), o.at("iterations").get<long>(),
                           o.at("log_domain").get<bool>()};
  r.kl_initial = doc.at("kl_initial").get<double>();
  r.kl_final = doc.at("kl_final").get<double>();
  r.iterations = doc.at("iterations").get<int>();
  r.reached_stop_kl = doc.at("reached_stop_kl").get<bool>();
  for (const auto& e : doc.at("convergence")) {
    HalfStepRecord h;
    h.half_index = e.at("half_index").get<int>();
    h.kl_to_opt = e.at("kl_to_opt").get<double>();
    h.kl_decrement = e.at("kl_decrement").get<double>();
    h.min_mass = e.at("min_mass").get<double>();
    h.normalization_drift = e.at("normalization_drift").get<double>();
    h.distance_to_opt = e.at("distance_to_opt").get<double>();
    if (!e.at("gradients").is_null()) {
      const json& g = e.at("gradients");
      h.gradients = GradientNorms{g.at("la").get<double>(), g.at("lb").get<double>(),
                                  g.at("lc").get<double>()};
    }
    h.bound_value = optional_from(e.at("bound_value"));
    h.lemma4_slack = optional_from(e.at("lemma4_slack"));
    h.pl_slack = optional_from(e.at("pl_slack"));
    r.convergence.push_back(h);
  }
  for (const auto& cert : doc.at("certificates")) r.certificates.push_back(certificate_from_json(cert));
  r.warnings = doc.at("warnings").get<std::vector<std::string>>();
  return r;
}

std::string convergence_csv(const RunReport& report) {
  std::ostringstream out;
  out << "k,kl_to_opt,bound_value,min_mass,grad_LA,grad_LB,grad_LC,lemma4_slack,pl_slack\n";
  for (const auto& r : report.convergence) {
    out << (r.half_index / 2) << (r.half_index % 2 ? ".5" : "") << ','
        << format_double(r.kl_to_opt) << ',' << optional_cell(r.bound_value) << ','
        << format_double(r.min_mass) << ',';
    if (r.gradients)
      out << format_double(r.gradients->la) << ',' << format_double(r.gradients->lb) << ','
          << format_double(r.gradients->lc);
    else
      out << ",,";
    out << ',' << optional_cell(r.lemma4_slack) << ',' << optional_cell(r.pl_slack) << '\n';
  }
  return out.str();
}

void write_report(const RunReport& report, const OutputConfig& output,
                  const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  const ExitCode code = report.pass() ? ExitCode::pass : ExitCode::certificate_failure;
  if (output.json) {
    write_file(directory / "report.json", to_json(report).dump(2) + "\n");
    write_file(directory / "summary.json", summary_json(report, code).dump(2) + "\n");
    std::filesystem::create_directories(directory / "certificates");
    for (const auto& c : report.certificates)
      write_file(directory / "certificates" / (c.name + ".json"), to_json(c).dump(2) + "\n");
    json t(report.timings_ms);
    write_file(directory / "timings.json", t.dump(2) + "\n");
  }
  if (output.csv) write_file(directory / "convergence.csv", convergence_csv(report));
}

RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  RunReport report = execute(config, options.tolerance_override);
  const std::filesystem::path dir = options.output_dir.value_or(config.output.directory);
  write_report(report, config.output, dir);
  const ExitCode code = report.pass() ? ExitCode::pass : ExitCode::certificate_failure;
  if (!options.quiet) {
    std::cout << report.instance_id << ": m = " << format_double(report.constants.m)
              << ", KL(p_0||p*) = " << format_double(report.kl_initial)
              << ", KL(p_final||p*) = " << format_double(report.kl_final) << " after "
              << report.iterations << " iterations\n";
    for (const auto& c : report.certificates)
      std::cout << "  " << (c.pass() ? "PASS " : "FAIL ") << c.name << " (" << c.checks.size()
                << " checks"
                << (c.checks.empty() ? std::string() : ", min slack " + format_double(c.min_slack()))
                << ")\n";
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  }
  return RunOutcome{std::move(report), code};
}

ExperimentConfig sweep_member(const ExperimentConfig& config, std::size_t index) {
  if (!config.sweep) throw ConfigError("sweep: config has no sweep section");
  const SweepSpec& s = *config.sweep;
  ExperimentConfig member = config;
  member.sweep.reset();
  auto& g = std::get<RandomInstanceSpec>(member.instance);
  g.seed = s.seeds.at(index);
  const std::size_t nc = s.cardinalities.size();
  if (nc > 0) g.cardinality = s.cardinalities[index % nc];
  if (!s.interior_counts.empty())
    g.interior_count = s.interior_counts[(index / std::max<std::size_t>(nc, 1)) %
                                         s.interior_counts.size()];
  member.seed.reset();
  return member;
}

SweepOutcome run_sweep(const ExperimentConfig& config, const RunOptions& options) {
  if (!config.sweep || config.sweep->seeds.empty())
    throw ConfigError("sweep: no seeds given");
  const std::filesystem::path root = options.output_dir.value_or(config.output.directory);
  const std::size_t n = config.sweep->seeds.size();

  SweepOutcome outcome;
  outcome.rows.resize(n);
  std::vector<std::optional<RunReport>> reports(n);
  std::vector<ExitCode> codes(n, ExitCode::pass);

  // Seeds are independent; workers pull indices and results are joined in
  // seed order afterwards.
  const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(n)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const ExperimentConfig member = sweep_member(config, i);
      const auto& g = std::get<RandomInstanceSpec>(member.instance);
      SweepRow& row = outcome.rows[i];
      row.seed = g.seed;
      row.cardinality = g.cardinality;
      row.interior_count = g.interior_count;
      try {
        RunReport r = execute(member, options.tolerance_override);
        write_report(r, member.output, root / ("seed-" + std::to_string(g.seed)));
        row.instance_id = r.instance_id;
        row.m = r.constants.m;
        row.contraction = r.constants.contraction;
        row.empirical_ratio = r.empirical_ratio();
        double worst = INFINITY;
        for (const auto& c : r.certificates)
          if (!c.checks.empty()) worst = std::min(worst, c.min_slack());
        row.worst_slack = std::isfinite(worst) ? worst : 0.0;
        row.pass = r.pass();
        codes[i] = row.pass ? ExitCode::pass : ExitCode::certificate_failure;
        reports[i] = std::move(r);
      } catch (const InputError& e) {
        row.error = e.what();
        codes[i] = ExitCode::config_error;
      } catch (const NumericalError& e) {
        row.error = e.what();
        codes[i] = ExitCode::numerical_failure;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < n; ++i) {
    if (reports[i]) {
      for (const auto& c : reports[i]->certificates) {
        if (c.checks.empty()) continue;
        auto it = outcome.min_slack_by_certificate.find(c.name);
        const double s = c.min_slack();
        if (it == outcome.min_slack_by_certificate.end())
          outcome.min_slack_by_certificate.emplace(c.name, s);
        else
          it->second = std::min(it->second, s);
      }
    }
    if (static_cast<int>(codes[i]) > static_cast<int>(outcome.exit_code) &&
        outcome.exit_code == ExitCode::pass)
      outcome.exit_code = codes[i];
  }

  std::filesystem::create_directories(root);
  std::ostringstream csv;
  csv << "seed,instance_id,cardinality,interior_count,m,contraction,empirical_ratio,worst_slack,"
         "pass,error\n";
  json rows = json::array();
  std::string first_failure;
  for (const auto& r : outcome.rows) {
    csv << r.seed << ',' << r.instance_id << ',' << r.cardinality << ',' << r.interior_count
        << ',' << format_double(r.m) << ',' << format_double(r.contraction) << ','
        << format_double(r.empirical_ratio) << ',' << format_double(r.worst_slack) << ','
        << (r.pass ? "true" : "false") << ',' << '"' << r.error << '"' << '\n';
    rows.push_back(json{{"seed", r.seed},
                        {"instance_id", r.instance_id},
                        {"cardinality", r.cardinality},
                        {"interior_count", r.interior_count},
                        {"m", r.m},
                        {"contraction", r.contraction},
                        {"empirical_ratio", r.empirical_ratio},
                        {"worst_slack", r.worst_slack},
                        {"pass", r.pass},
                        {"error", r.error}});
    if (first_failure.empty() && !r.pass)
      first_failure = "seed " + std::to_string(r.seed) +
                      (r.error.empty() ? std::string(": certificate failure") : ": " + r.error);
  }
  json summary;
  summary["seeds"] = n;
  summary["exit_code"] = static_cast<int>(outcome.exit_code);
  summary["first_failure"] = first_failure.empty() ? json(nullptr) : json(first_failure);
  summary["min_slack_by_certificate"] = json(outcome.min_slack_by_certificate);
  summary["rows"] = std::move(rows);
  write_file(root / "sweep_summary.csv", csv.str());
  write_file(root / "sweep_summary.json", summary.dump(2) + "\n");

  if (!options.quiet) {
    for (const auto& r : outcome.rows)
      std::cout << (r.pass ? "PASS " : "FAIL ") << (r.instance_id.empty() ? "seed " + std::to_string(r.seed) : r.instance_id)
                << "  m=" << format_double(r.m) << "  ratio=" << format_double(r.empirical_ratio)
                << "  worst slack=" << format_double(r.worst_slack)
                << (r.error.empty() ? "" : "  error: " + r.error) << '\n';
  }
  return outcome;
}

GeometryOutcome verify_projection_geometry(int cardinality, int interior_count, int trials,
                                           std::uint64_t seed, const RunOptions& options) {
  if (trials < 0) throw ConfigError("verify-geometry: trials must be nonnegative");
  const StateSpace space(cardinality, interior_count);
  const double tol = options.tolerance_override.value_or(kDefaultCheckTolerance);
  GeometryOutcome out{check_lemma3(space, trials, salted(seed, 1), tol),
                      check_subspace_structure(space, trials, salted(seed, 2), tol),
                      ExitCode::pass};
  if (!out.lemma3.pass() || !out.structure.pass()) out.exit_code = ExitCode::certificate_failure;
  if (options.output_dir) {
    std::filesystem::create_directories(*options.output_dir);
    write_file(*options.output_dir / "lemma3.json", to_json(out.lemma3).dump(2) + "\n");
    write_file(*options.output_dir / "subspace_structure.json",
               to_json(out.structure).dump(2) + "\n");
  }
  if (trials == 0) std::cerr << "warning: zero trials requested; geometry certificate is vacuous\n";
  if (!options.quiet) {
    for (const CertificateReport* c : {&out.lemma3, &out.structure})
      std::cout << (c->pass() ? "PASS " : "FAIL ") << c->name << " (" << c->checks.size()
                << " checks"
                << (c->checks.empty() ? std::string() : ", min slack " + format_double(c->min_slack()))
                << ")\n";
  }
  return out;
}

}  // namespace imf
