#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "varplace/dynsim.hpp"
#include "varplace/ecc.hpp"
#include "varplace/placement.hpp"
#include "varplace/screening.hpp"
#include "varplace/vsi.hpp"

namespace varplace {

enum class EccMode { FaultSpecified, FaultUnspecified };

std::string_view to_string(EccMode mode);
EccMode parse_ecc_mode(std::string_view name);

/// Contingency selector: an N-1 id, or the highest-SI entry at the default
/// duration.
struct ContingencyChoice {
  bool most_severe = true;
  int id = 0;
};

struct StudyConfig {
  std::string case_path;
  std::string out_dir = "varplace_out";
  std::uint64_t seed = 1;
  unsigned workers = 1;

  SimConfig sim;
  CriteriaSpec criteria;
  std::vector<double> durations{4.0, 5.0, 6.0};
  double default_duration = 5.0;  // cycles, for N-1 entries

  EccMode mode = EccMode::FaultSpecified;
  std::vector<double> capacities = default_capacities();
  double t1 = 1.0;
  double t2 = 2.0;
  ContingencyChoice contingency;
  FaultBaseline baseline = FaultBaseline::FaultedRun;
  Weighting weighting = Weighting::InstantaneousOutput;
  std::vector<int> monitored;  // empty = every bus

  std::size_t svcs = 2;
  Solver solver = Solver::Mads;
  MadsConfig mads;

  double q_probe = 25.0;
  std::size_t n_cont_vsi = 0;  // top contingencies weighted into VSI, 0 = all

  CostModel cost;
  std::optional<std::size_t> n_cont_total;  // cost command, default from data

  /// Parses the nested JSON form. Unknown keys are rejected. A relative case
  /// path is resolved against `base_dir` when given.
  static StudyConfig from_json(const std::string& text, const std::string& base_dir = "");
  std::string to_json() const;

  void validate() const;
  std::string hash() const;
};

/// Merges `overrides` (same nested schema) into the config file at
/// `config_path` (may be empty) and parses the result.
StudyConfig load_study_config(const std::string& config_path, const std::string& overrides_json);

/// Loaded network with its equilibrium and initialized devices.
class Study {
 public:
  explicit Study(StudyConfig cfg);

  const StudyConfig& config() const { return cfg_; }
  const Network& network() const { return net_; }
  const PowerFlowSolution& power_flow() const { return pf_; }
  const SimulateFn& simulator() const { return sim_; }
  const std::string& case_hash() const { return case_hash_; }

  const ContingencyList& contingencies() const { return list_; }
  /// Severity of every N-1 entry at the default duration.
  SeverityReport severity() const;
  const ContingencyEntry& chosen_contingency() const;

  FidvrFilter screen() const;

  CovarianceKey covariance_key() const;
  /// Covariances for every candidate, read from `<out>/covariances` when the
  /// stored key matches, computed and stored otherwise.
  std::vector<CandidateCovariance> covariances(bool rebuild) const;
  PlacementSolution place(const std::vector<CandidateCovariance>& covs, std::size_t v) const;

  /// VSI over the top contingencies of the FIDVR filter at the default
  /// duration; `only` restricts it to one contingency.
  VsiResult vsi(std::optional<int> only = std::nullopt) const;

  /// True when SVCs at `buses` leave contingency `id` free of violations.
  bool resolves(const std::vector<int>& buses, int id, double duration) const;

  std::string provenance_json() const;

 private:
  StudyConfig cfg_;
  std::string case_text_;
  std::string case_hash_;
  Network net_;
  PowerFlowSolution pf_;
  DeviceSet devices_;
  SimulateFn sim_;
  ContingencyList list_;
  mutable std::optional<SeverityReport> severity_;
};

/// Runs one CLI command. Writes report files under the configured output
/// directory and returns a JSON summary. `request_json` holds the config
/// path, overrides and command arguments.
std::string run_command(const std::string& command, const std::string& request_json);

}  // namespace varplace
