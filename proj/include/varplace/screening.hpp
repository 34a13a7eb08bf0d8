#pragma once

#include <map>
#include <string>
#include <vector>

#include "varplace/dynsim.hpp"
#include "varplace/ecc.hpp"
#include "varplace/netmodel.hpp"
#include "varplace/vsi.hpp"

namespace varplace {

struct ContingencyEntry {
  int id = 0;  // 1-based, in generation order
  ContingencySpec spec;
  std::string label;  // "br<branch>@<bus>"
  bool islanding = false;
};

struct ContingencyList {
  std::vector<ContingencyEntry> entries;

  const ContingencyEntry& find(int id) const;
  std::vector<int> ids() const;
};

/// Two entries per in-service branch, from-end first, in branch id order.
ContingencyList generate_n1(const Network& net, double duration_cycles = 5.0);

struct FidvrFilter {
  std::vector<double> durations;  // cycles
  ContingencyList kept;           // violating for at least one duration
  std::map<double, std::vector<int>> violating;  // duration -> ids
  std::vector<std::string> flags;
};

/// Runs every entry at every duration without var support. A diverged run
/// counts as a violation and is flagged.
FidvrFilter fidvr_filter(const ContingencyList& list, const SimulateFn& sim,
                         const Network& net, const CriteriaSpec& spec,
                         const std::vector<double>& durations, unsigned workers = 1);

struct DurationCoverage {
  double duration = 0.0;
  std::size_t violating = 0;  // size of the no-support violating set
  std::vector<int> addressed;
};

struct CoverageReport {
  std::vector<int> placement;
  std::size_t n_cont_total = 0;  // size of the filtered list
  std::vector<DurationCoverage> per_duration;
  std::vector<std::string> flags;

  std::vector<std::size_t> counts() const;
};

/// A contingency counts as addressed at a duration when it violated there
/// without support and, with closed-loop SVCs at the placed buses, the
/// checker finds no violation.
CoverageReport coverage(const std::vector<int>& placement, const FidvrFilter& filter,
                        const SimulateFn& sim, const Network& net, const CriteriaSpec& spec,
                        unsigned workers = 1);

/// Costs in units of one SVC by default.
struct CostModel {
  double c_svc = 1.0;
  double c_fidvr = 5.0;

  void validate() const;
};

/// c_svc * n_svc + c_fidvr * sum_i (n_cont_total - counts_i).
double total_cost(const CostModel& model, const std::vector<std::size_t>& counts,
                  std::size_t n_svc, std::size_t n_cont_total);

struct CoverageCurve {
  std::vector<double> durations;
  std::vector<std::size_t> n_svc;
  std::vector<std::vector<std::size_t>> counts;  // per row, per duration
};

/// Reads `n_svc,cycles_<d>,...`. Throws ValidationError on malformed rows.
CoverageCurve parse_coverage_curve(const std::string& csv_text);

struct CostPoint {
  std::size_t n_svc = 0;
  double cost = 0.0;
};

struct CostOptimum {
  std::size_t n_svc = 0;
  double cost = 0.0;
  std::vector<CostPoint> curve;
};

/// Minimum over the curve; ties go to the smaller count.
CostOptimum optimal_svc_count(const CostModel& model, const CoverageCurve& curve,
                              std::size_t n_cont_total);

std::string coverage_csv(const CoverageReport& r);
std::string coverage_json(const CoverageReport& r);
std::string cost_csv(const CostOptimum& o);
std::string contingencies_csv(const ContingencyList& list);

}  // namespace varplace
