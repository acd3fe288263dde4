#pragma once

// Declarative experiments: build an instance, solve the oracle, run IMF,
// evaluate the enabled certificates and write deterministic report files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "imf/errors.hpp"
#include "imf/imf.hpp"
#include "imf/oracle.hpp"
#include "imf/process.hpp"
#include "imf/theory.hpp"

namespace imf {

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

enum class ExitCode : int { pass = 0, certificate_failure = 1, config_error = 2, numerical_failure = 3 };

struct ExplicitInstance {
  MarkovSpec reference;
  /// Endpoint laws; empty means "use the reference process's own".
  std::optional<MarginalPair> marginals;
  enum class CouplingKind { independent, reference, matrix } coupling = CouplingKind::independent;
  Eigen::MatrixXd coupling_matrix;
};

struct ChecksConfig {
  bool lemma1 = true;
  int lemma1_perturbations = 100;
  int lemma1_iterations = 3;
  bool lemma2 = true;
  bool lemma3 = true;
  int lemma3_trials = 1000;
  bool lemma4 = true;
  int lemma4_max_k = 50;
  bool theorem1 = true;
  bool spectrum = true;
  bool gradients = true;
  int gradient_directions = 20;
  double tolerance = kDefaultCheckTolerance;

  bool randomized() const { return lemma1 || (lemma3 && lemma3_trials > 0) || gradients; }
};

struct OutputConfig {
  std::string directory = "imf-report";
  bool json = true;
  bool csv = true;
};

struct SweepSpec {
  std::vector<std::uint64_t> seeds;
  /// Geometries cycled over the seeds; empty means the generator's own.
  std::vector<int> cardinalities;
  std::vector<int> interior_counts;
};

struct ExperimentConfig {
  std::variant<RandomInstanceSpec, ExplicitInstance> instance;
  std::optional<std::uint64_t> seed;
  ImfConfig imf;
  SinkhornConfig oracle;
  ChecksConfig checks;
  OutputConfig output;
  std::optional<SweepSpec> sweep;

  /// Seed feeding the randomized certificates.
  std::uint64_t effective_seed() const;
};

/// Throws ConfigError (or ValidationError for invalid distributions).
ExperimentConfig parse_config(const nlohmann::ordered_json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

struct OracleSummary {
  double residual = 0.0;
  long iterations = 0;
  bool log_domain = false;
};

struct RunReport {
  std::string instance_id;
  int cardinality = 0;
  int interior_count = 0;
  RateConstants constants;
  OracleSummary oracle;
  double kl_initial = 0.0;
  double kl_final = 0.0;
  int iterations = 0;
  bool reached_stop_kl = false;
  std::vector<HalfStepRecord> convergence;
  std::vector<CertificateReport> certificates;
  std::vector<std::string> warnings;
  /// Wall-clock milliseconds per stage; written to timings.json only, so the
  /// remaining report files stay byte-identical across reruns.
  std::map<std::string, double> timings_ms;

  bool pass() const;
  /// Largest per-iteration ratio KL(p_{k+1} || p*) / KL(p_k || p*) over
  /// k >= 1 with KL(p_k || p*) > 1e-12; 0 when no such step exists.
  double empirical_ratio() const;
};

nlohmann::ordered_json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json to_json(const CertificateReport& report);
CertificateReport certificate_from_json(const nlohmann::ordered_json& doc);

/// Convergence table: one row per half-step, 17 significant digits.
std::string convergence_csv(const RunReport& report);

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;
  std::optional<double> tolerance_override;
  bool quiet = false;
  /// Worker threads for sweeps; results do not depend on it.
  unsigned jobs = 1;
};

/// Runs the whole pipeline without touching the filesystem.
RunReport execute(const ExperimentConfig& config, const std::optional<double>& tolerance_override = {});

void write_report(const RunReport& report, const OutputConfig& output,
                  const std::filesystem::path& directory);

struct RunOutcome {
  RunReport report;
  ExitCode exit_code = ExitCode::pass;
};

RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options);

struct SweepRow {
  std::uint64_t seed = 0;
  std::string instance_id;
  int cardinality = 0;
  int interior_count = 0;
  double m = 0.0;
  double contraction = 0.0;
  double empirical_ratio = 0.0;
  double worst_slack = 0.0;
  bool pass = false;
  std::string error;
};

struct SweepOutcome {
  std::vector<SweepRow> rows;
  std::map<std::string, double> min_slack_by_certificate;
  ExitCode exit_code = ExitCode::pass;
};

/// Per-seed configuration used by a sweep.
ExperimentConfig sweep_member(const ExperimentConfig& config, std::size_t index);

SweepOutcome run_sweep(const ExperimentConfig& config, const RunOptions& options);

struct GeometryOutcome {
  CertificateReport lemma3;
  CertificateReport structure;
  ExitCode exit_code = ExitCode::pass;
};

/// Lemma-3 and subspace-structure certificates for a bare state space.
GeometryOutcome verify_projection_geometry(int cardinality, int interior_count, int trials,
                                           std::uint64_t seed, const RunOptions& options);

}  // namespace imf
