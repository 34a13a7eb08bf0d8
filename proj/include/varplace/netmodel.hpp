#pragma once

#include <complex>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace varplace {

enum class BusKind { Slack, PV, PQ };

std::string_view to_string(BusKind kind);

struct Bus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double v_setpoint = 1.0;  // pu, used by slack and PV buses
  double p_load = 0.0;      // MW
  double q_load = 0.0;      // Mvar
  double p_gen = 0.0;       // MW scheduled
  double nominal_kv = 0.0;  // metadata only
};

struct Branch {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;        // pu on system base
  double x = 0.0;        // pu on system base
  double b_shunt = 0.0;  // pu total line charging
  bool in_service = true;
};

// Dynamic device parameters. Each table in the case document either sets the
// defaults (no `bus` key) or overrides individual fields at one bus.
struct GeneratorParams {
  double h = 5.0;         // s, on system base
  double d = 2.0;         // pu torque / pu speed
  double xd_prime = 0.1;  // pu on system base
};

struct LoadDynParams {
  double static_fraction = 0.6;
  double alpha_t = 2.0;
  double alpha_s = 0.0;
  double tp = 1.5;  // s
  double tq = 1.5;  // s
};

struct SvcParams {
  double rating = 200.0;   // Mvar
  double tr = 0.02;        // s
  double kr = 50.0;        // pu susceptance per pu voltage error
  double deadband = 0.02;  // pu
  std::optional<double> v_ref;  // defaults to the power-flow voltage
};

struct DynamicData {
  using Fields = std::map<std::string, double>;

  Fields generator_defaults;
  Fields load_defaults;
  Fields svc_defaults;
  std::map<int, Fields> generators;
  std::map<int, Fields> loads;
  std::map<int, Fields> svcs;

  GeneratorParams generator_for(int bus) const;
  LoadDynParams load_for(int bus) const;
  SvcParams svc_for(int bus) const;
};

/// Static grid description. Buses and branches are sorted by id.
class Network {
 public:
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  double base_mva = 100.0;
  double frequency_hz = 60.0;
  std::vector<int> candidate_buses;  // sorted, all PQ
  DynamicData dynamics;

  std::size_t bus_count() const { return buses.size(); }

  /// Position of a bus id in `buses`; throws ValidationError if absent.
  std::size_t index_of(int bus_id) const;
  bool has_bus(int bus_id) const;
  const Bus& bus(int bus_id) const { return buses[index_of(bus_id)]; }
  const Branch& branch(int branch_id) const;
  std::vector<int> bus_ids() const;

  /// Rebuilds the id lookup; call after editing `buses` by hand.
  void reindex();

  /// Checks every structural invariant, throwing ValidationError.
  void validate() const;

  /// Connectivity over in-service branches, optionally with one branch open.
  bool is_connected(std::optional<int> open_branch = std::nullopt) const;

 private:
  std::map<int, std::size_t> index_;
};

/// Parses and validates a case document.
Network load_case(std::string_view text);
Network load_case_file(const std::string& path);

using ComplexMatrix = Eigen::MatrixXcd;

/// Bus admittance matrix over in-service branches (pi model, line charging
/// split evenly between the ends). Parallel branches are summed.
ComplexMatrix admittance_matrix(const Network& net);

struct PowerFlowSolution {
  Eigen::VectorXd v_mag;
  Eigen::VectorXd v_ang;  // radians, slack = 0
  Eigen::VectorXd p_inj;  // pu net injection at the solution
  Eigen::VectorXd q_inj;
  bool converged = false;
  double max_mismatch = 0.0;
  int iterations = 0;

  Eigen::VectorXcd voltage() const;
};

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 30;
};

/// Full Newton-Raphson in polar coordinates from a flat start. Throws
/// ConvergenceError on non-convergence or a singular Jacobian.
PowerFlowSolution solve_power_flow(const Network& net,
                                   const PowerFlowOptions& opts = {});

/// Complex power injections S = V * conj(Y V) in pu.
Eigen::VectorXcd bus_injections(const ComplexMatrix& y,
                                const Eigen::VectorXcd& v);

}  // namespace varplace
