#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "varplace/ecc.hpp"

namespace varplace {

/// Pick v of the L candidates maximizing det(sum W_i).
struct PlacementProblem {
  std::vector<int> candidate_ids;  // strictly increasing
  std::vector<CovarianceMatrix> covariances;
  std::size_t v = 1;

  std::size_t size() const { return candidate_ids.size(); }
  void validate() const;
};

enum class Solver { Exhaustive, Greedy, Mads };

std::string_view to_string(Solver solver);
Solver parse_solver(std::string_view name);

enum class MadsStart { Greedy, Random };

struct MadsConfig {
  int initial_mesh = 2;  // simultaneous swaps in the first poll
  std::size_t max_evaluations = 20000;
  std::vector<int> vns_shake_sizes{1, 2, 3};
  std::uint64_t seed = 1;
  MadsStart start = MadsStart::Greedy;
  unsigned workers = 1;

  void validate(std::size_t candidates) const;
};

struct TraceEntry {
  std::size_t evaluations = 0;
  double objective = 0.0;
  int mesh = 0;
  std::string event;
  std::vector<int> selected;
};

struct PlacementSolution {
  std::vector<int> selected;  // sorted bus ids
  double objective = 0.0;     // -log det, +inf when singular
  Solver solver = Solver::Greedy;
  std::size_t evaluations = 0;
  std::uint64_t seed = 0;
  std::vector<TraceEntry> trace;
};

/// Relative eigenvalue floor below which a sum counts as singular.
inline constexpr double kSingularFloor = 1e-12;

/// -log det of a symmetric PSD matrix from its eigenvalues; +inf when
/// lambda_min <= kSingularFloor * lambda_max or the matrix is zero.
double neg_log_det(const Eigen::MatrixXd& w);

/// Objective of a bus-id selection. Throws for ids outside the candidates.
double objective(const std::vector<int>& selection, const PlacementProblem& problem);

/// Global optimum by lexicographic enumeration; ties go to the smallest set.
/// Refuses more than 1e6 combinations.
PlacementSolution solve_exhaustive(const PlacementProblem& problem);

/// Adds the best candidate v times. While every option is singular it
/// prefers higher numerical rank, then larger pseudo-determinant, then the
/// smaller id.
PlacementSolution solve_greedy(const PlacementProblem& problem);

/// Swap-neighbourhood direct search. Mesh size is the number of
/// simultaneous swaps; a failed poll contracts it, a success expands it.
/// At mesh 1 failure, VNS shakes the incumbent by k random swaps for each k
/// in vns_shake_sizes and descends again. Returns a swap-local optimum
/// unless the evaluation budget runs out first.
PlacementSolution solve_mads(const PlacementProblem& problem, const MadsConfig& cfg);

/// JSON object with solver, selected, objective, evaluations, seed and
/// optionally the trace. Non-finite objectives are written as strings.
std::string placement_json(const PlacementSolution& sol, bool with_trace);

}  // namespace varplace
