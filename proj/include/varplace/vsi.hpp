#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varplace/dynsim.hpp"
#include "varplace/ecc.hpp"
#include "varplace/netmodel.hpp"

namespace varplace {

struct CriteriaSpec {
  double load_dip_max = 0.25;
  double gen_dip_max = 0.30;
  double sustained_dip = 0.20;
  double sustained_cycles = 20.0;
  double post_transient_dev = 0.05;
  double transient_window = 3.0;  // s from simulation start
  // Post-transient check against an absolute band instead of V0.
  bool absolute_band = false;
  double band_low = 0.95;
  double band_high = 1.05;

  void validate(double t_f) const;
};

/// |V - V0| / V0 per sample and bus.
Eigen::MatrixXd deviation_ratio(const Eigen::MatrixXd& v_mag, const Eigen::VectorXd& pre_fault);
Eigen::MatrixXd deviation_ratio(const Trajectory& traj, const Eigen::VectorXd& pre_fault);

enum CriterionBit : std::uint8_t {
  kTransientDip = 1,   // (a) dip beyond the load/generator limit
  kSustainedDip = 2,   // (b) dip beyond sustained_dip for too long
  kPostTransient = 4,  // (c) deviation after the transient window
};

struct CriteriaResult {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> flags;  // samples x buses
  Eigen::MatrixXd si;  // R where flagged, else 0
  std::uint8_t criteria = 0;  // union of flagged bits

  bool violated() const { return criteria != 0; }
};

/// Dip criteria apply on [clearing_time, transient_window), the
/// post-transient one from transient_window on. A sustained run of L
/// samples lasts L*dt; it violates only when strictly longer than
/// sustained_cycles.
CriteriaResult check_criteria(const Eigen::MatrixXd& v_mag, const Eigen::VectorXd& pre_fault,
                              const CriteriaSpec& spec, const std::vector<BusKind>& kinds,
                              double clearing_time, double dt, double frequency_hz);

/// Mean of SI over samples 1..T and buses.
double severity_index(const CriteriaResult& r);

struct SeverityEntry {
  int contingency = 0;
  double si = 0.0;
  std::uint8_t criteria = 0;
  bool diverged = false;
};

struct SeverityReport {
  std::vector<SeverityEntry> entries;  // input order
  std::vector<int> ranking;            // by SI descending, ties by id
};

/// Trajectories must carry a clearing time. Diverged runs are scored over
/// the samples they produced and marked.
SeverityReport severity_rank(const Network& net, const Eigen::VectorXd& pre_fault,
                             const std::vector<int>& contingency_ids,
                             const std::vector<Trajectory>& trajectories,
                             const CriteriaSpec& spec);

struct WeightedContingency {
  int id = 0;
  ContingencySpec spec;
  double si = 0.0;
};

struct VsiComponent {
  int contingency = 0;
  double si = 0.0;
  Eigen::MatrixXd pair;          // candidates x buses, pu per Mvar
  std::vector<double> average;   // bus-averaged, per candidate
  std::vector<double> normalized;
};

struct VsiOptions {
  double q_probe = 25.0;  // Mvar
  bool clip_negative = false;
  unsigned workers = 1;
};

struct VsiResult {
  std::vector<int> candidates;
  double q_probe = 0.0;
  std::vector<VsiComponent> components;
  std::vector<double> overall;
  std::vector<int> ranking;  // by overall VSI descending, ties by id
  bool degenerate = false;   // no candidate improved any voltage
  std::vector<std::string> flags;
};

/// For each contingency reruns the fault with an open-loop step of q_probe
/// at each candidate, switched on at the clearing instant.
VsiResult vsi_rank(const SimulateFn& sim, const std::vector<WeightedContingency>& contingencies,
                   const std::vector<int>& candidates, const VsiOptions& opts);

std::string severity_csv(const SeverityReport& r);
std::string vsi_csv(const VsiResult& r);

}  // namespace varplace
