#pragma once

#include <complex>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "varplace/netmodel.hpp"

namespace varplace {

/// Classical machine: constant EMF behind transient reactance plus swing
/// equation. `online` scales the unit when part of it is tripped.
struct GeneratorModel {
  int bus = 0;
  double h = 5.0;
  double d = 2.0;
  double xd_prime = 0.1;
  double e_prime = 0.0;  // pu, from power flow
  double pm = 0.0;       // pu mechanical power
  double delta = 0.0;    // rad
  double omega = 0.0;    // pu speed deviation
  double online = 1.0;
};

/// Exponential-recovery load. A `static_fraction` share is constant
/// impedance; the rest follows
///   Tp * dxp/dt = -xp + P0 (V/V0)^alpha_s - P0 (V/V0)^alpha_t,
///   P = xp + P0 (V/V0)^alpha_t
/// with the same structure for the reactive channel.
struct RecoveryLoadModel {
  int bus = 0;
  double static_fraction = 0.6;
  double alpha_t = 2.0;
  double alpha_s = 0.0;
  double tp = 1.5;
  double tq = 1.5;
  double p0 = 0.0;  // pu, total scheduled load
  double q0 = 0.0;
  double v0 = 1.0;  // pu, power-flow voltage
  double xp = 0.0;
  double xq = 0.0;
};

/// First-order susceptance regulator with a voltage deadband. Output
/// Q = b |V|^2 is clipped to +/- rating.
struct SvcDevice {
  int bus = 0;
  double rating = 200.0;  // Mvar
  double tr = 0.02;
  double kr = 50.0;
  double deadband = 0.02;
  std::optional<double> v_ref;  // resolved from the initial voltage
  double b = 0.0;               // pu susceptance on system base

  double b_max(double base_mva) const { return rating / base_mva; }
};

struct DeviceSet {
  std::vector<GeneratorModel> generators;
  std::vector<RecoveryLoadModel> loads;
  std::vector<SvcDevice> svcs;
  Eigen::VectorXcd v_init;  // network voltage the states were initialized at
  bool initialized = false;
};

/// Generators at every slack/PV bus, recovery loads at every loaded bus, with
/// parameters taken from the case document's device tables.
DeviceSet default_devices(const Network& net);

/// SVC at `bus` with parameters from the case's [[svc]] tables.
SvcDevice make_svc(const Network& net, int bus,
                   std::optional<double> rating_mvar = std::nullopt);

/// Sets internal states so that every derivative vanishes at the power-flow
/// point. Throws ValidationError for devices at unknown buses or generators
/// at PQ buses.
void initialize_dynamics(const Network& net, const PowerFlowSolution& pf,
                         DeviceSet& devices);

struct GenerationLoss {
  int bus = 0;
  double fraction = 0.5;
};

struct ContingencySpec {
  int fault_bus = 0;
  int faulted_branch = 0;
  double fault_duration = 5.0;  // cycles
  std::complex<double> fault_admittance{0.0, -1.0e4};  // pu shunt
  std::optional<GenerationLoss> gen_loss;

  /// Throws ValidationError if the contingency does not fit `net`.
  void validate(const Network& net) const;
};

enum class ScheduleMode { Device, Steps, Pulse };

/// A var injection at one bus: a closed-loop SVC, or an open-loop Q(t)
/// waveform built from right-continuous unit steps, S(0) = 1. Positive
/// values inject reactive power (equivalently, reduce reactive load).
struct InjectionSchedule {
  int bus = 0;
  ScheduleMode mode = ScheduleMode::Steps;
  std::vector<std::pair<double, double>> steps;  // (onset s, Mvar)
  double q1 = 0.0, q2 = 0.0, t1 = 0.0, t2 = 0.0;
  double capacity = std::numeric_limits<double>::infinity();  // Mvar
  std::optional<SvcDevice> device;

  static InjectionSchedule pulse(int bus, double q1, double q2, double t1,
                                 double t2);
  static InjectionSchedule step(int bus, double q, double onset);
  static InjectionSchedule svc(SvcDevice device);

  void validate(const Network& net) const;
};

/// Open-loop output in Mvar at time t. Device schedules evaluate to 0 since
/// their output is decided by the simulation.
double evaluate_schedule(const InjectionSchedule& schedule, double t);

enum class Integrator { Trapezoidal, Rk4 };

struct SimConfig {
  double dt = 1.0 / 240.0;
  double t_f = 5.0;
  Integrator integrator = Integrator::Trapezoidal;
  double network_solve_tol = 1e-10;
  double fault_time = 0.1;  // s, fault inception
  int max_network_iterations = 30;

  std::size_t steps() const;
  void validate(double frequency_hz) const;
};

enum class SimStatus { Completed, NetworkDiverged, StateBlowUp };

std::string_view to_string(SimStatus status);

struct Trajectory {
  std::vector<int> bus_ids;
  std::vector<double> times;  // k * dt, k = 0..steps
  Eigen::MatrixXd v_mag;      // samples x buses, pu
  std::vector<int> svc_buses;
  Eigen::MatrixXd svc_q;  // samples x svcs, Mvar
  double dt = 0.0;
  double t_f = 0.0;
  SimStatus status = SimStatus::Completed;
  double failure_time = 0.0;
  std::string message;
  std::string meta;

  bool diverged() const { return status != SimStatus::Completed; }
  Eigen::Index samples() const { return v_mag.rows(); }
  /// Seconds at which the fault is cleared, when the run had a contingency.
  std::optional<double> clearing_time;
};

Trajectory simulate(const Network& net, const DeviceSet& devices,
                    const std::optional<ContingencySpec>& contingency,
                    const std::vector<InjectionSchedule>& schedules,
                    const SimConfig& cfg);

/// Header `t,bus_<id>,...`; every value in shortest round-trip form.
void write_trajectory_csv(const Trajectory& traj, std::ostream& out);

}  // namespace varplace
