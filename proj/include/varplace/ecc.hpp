#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varplace/dynsim.hpp"
#include "varplace/error.hpp"
#include "varplace/netmodel.hpp"

namespace varplace {

/// Symmetric PSD matrix over monitored bus voltages, pu^2 s per size^2.
struct CovarianceMatrix {
  std::vector<int> bus_index;
  Eigen::MatrixXd w;

  Eigen::Index dim() const { return w.rows(); }
  static CovarianceMatrix zero(std::vector<int> bus_index);
};

enum class ExcitationShape { Impulse, StepSchedule, Pulse };

std::string_view to_string(ExcitationShape shape);

/// Directions are the signs of the +/-I members of T^v (r = count), sizes
/// are c_m (s = count). Power studies express sizes in Mvar.
struct ExcitationPlan {
  std::vector<double> directions{1.0};
  std::vector<double> sizes;
  ExcitationShape shape = ExcitationShape::Impulse;
  double t1 = 1.0;  // pulse onset, s
  double t2 = 2.0;  // pulse end, s

  std::size_t r() const { return directions.size(); }
  std::size_t s() const { return sizes.size(); }
  void validate() const;
  /// Stable text form; equal plans give equal strings.
  std::string canonical() const;

  static ExcitationPlan impulse(std::vector<double> sizes);
  static ExcitationPlan fault_specified(std::vector<double> capacities);
  static ExcitationPlan fault_unspecified(std::vector<double> sizes, double t1,
                                          double t2);
};

/// 10, 20, 40, 80, 160, 200 Mvar.
std::vector<double> default_capacities();

enum class Weighting {
  PlanSize,             // 1 / (r s c_m^2) per run
  InstantaneousOutput,  // 1 / (r s Q_{m,k}^2) per step
};

struct EccOptions {
  Weighting weighting = Weighting::PlanSize;
  // Instantaneous weighting skips steps with |Q_{m,k}| <= floor * Q_m, so
  // an SVC idling inside its deadband does not divide by ~0.
  double output_floor = 0.05;
};

/// One perturbed run: samples x states, already restricted to the monitored
/// states. `output` holds |Q_{m,k}| per sample for instantaneous weighting.
struct PerturbedRun {
  std::size_t input = 0;
  std::size_t direction = 0;
  std::size_t size = 0;
  Eigen::MatrixXd x;
  Eigen::VectorXd output;
};

/// Left-rectangle ECC. `baseline` is either samples x states or a single
/// row used at every sample. Runs may be shorter than the baseline
/// (truncated by divergence); each contributes over its own samples.
/// Contributions are summed per input first, then across inputs.
CovarianceMatrix empirical_covariance(const Eigen::MatrixXd& baseline,
                                      const std::vector<PerturbedRun>& runs,
                                      const ExcitationPlan& plan, double dt,
                                      std::vector<int> bus_index,
                                      const EccOptions& opts = {});

struct TaggedTrajectory {
  std::size_t input = 0;
  std::size_t direction = 0;
  std::size_t size = 0;
  const Trajectory* traj = nullptr;
  int output_bus = 0;  // SVC whose output weights the steps
};

/// Trajectory-level entry point. `monitored` selects bus ids (empty = all).
CovarianceMatrix empirical_covariance(const Trajectory& baseline,
                                      const std::vector<TaggedTrajectory>& runs,
                                      const ExcitationPlan& plan,
                                      const SimConfig& cfg,
                                      const EccOptions& opts = {},
                                      const std::vector<int>& monitored = {},
                                      bool constant_baseline = false);

using SimulateFn = std::function<Trajectory(
    const std::optional<ContingencySpec>&, const std::vector<InjectionSchedule>&)>;

/// Binds a network, initialized devices and a config into a SimulateFn.
SimulateFn network_simulator(Network net, DeviceSet devices, SimConfig cfg);

enum class FaultBaseline {
  FaultedRun,  // subtract the no-SVC faulted trajectory step by step
  PreFault,    // subtract the constant pre-fault state
};

struct EccRunOptions {
  FaultBaseline baseline = FaultBaseline::FaultedRun;
  // The fault-unspecified protocol always weights by plan size.
  EccOptions ecc{Weighting::InstantaneousOutput};
  std::vector<int> monitored;
};

struct CandidateCovariance {
  int candidate = 0;
  CovarianceMatrix cov;
  std::size_t runs = 0;
  std::vector<std::string> flags;
};

/// One faulted baseline plus one faulted run per capacity with an SVC of
/// that rating at `candidate`. A precomputed baseline may be passed in.
/// Throws ConvergenceError when the baseline diverges.
CandidateCovariance ecc_fault_specified(const SimulateFn& sim,
                                        const Network& net,
                                        const ContingencySpec& contingency,
                                        int candidate,
                                        const std::vector<double>& capacities,
                                        const SimConfig& cfg,
                                        const EccRunOptions& opts = {},
                                        const Trajectory* baseline = nullptr);

/// Flat baseline plus one reactive-load pulse run per size at `candidate`.
CandidateCovariance ecc_fault_unspecified(const SimulateFn& sim,
                                          const Network& net, int candidate,
                                          const std::vector<double>& sizes,
                                          double t1, double t2,
                                          const SimConfig& cfg,
                                          const EccRunOptions& opts = {},
                                          const Trajectory* baseline = nullptr);

/// sum_i z_i W_i. Throws ValidationError for size or index mismatches.
CovarianceMatrix assemble(const std::vector<bool>& z,
                          const std::vector<CovarianceMatrix>& ws);

/// Identity of everything a cached covariance depends on.
struct CovarianceKey {
  std::string plan_hash;
  std::string case_hash;
  std::string sim_hash;
};

/// Writes `cov_bus_<id>.csv` and its `.json` sidecar into `dir`.
void write_covariance(const std::string& dir, const CandidateCovariance& c,
                      const CovarianceKey& key, const std::string& provenance_json);

/// Returns nullopt when no file exists for the candidate. Throws
/// CacheMismatchError when the stored key differs from `key`.
std::optional<CandidateCovariance> read_covariance(const std::string& dir,
                                                   int candidate,
                                                   const CovarianceKey& key);

class CacheMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace varplace
