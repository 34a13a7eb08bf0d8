#include "varplace/dynsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "varplace/error.hpp"
#include "varplace/io.hpp"

namespace varplace {

namespace {

// Below this voltage the constant-power parts of every injection (load
// recovery states, open-loop schedules) degrade to constant impedance.
constexpr double kLowVoltageBreak = 0.5;
constexpr double kBlowUpVoltage = 5.0;
constexpr int kMaxCorrectorPasses = 10;
constexpr double kCorrectorTol = 1e-10;

using cplx = std::complex<double>;

[[noreturn]] void invalid(const std::string& msg) { throw ValidationError(msg); }

// Maps an event time to a grid index: exact multiples (to rounding) land on
// their own step, anything else on the next one.
std::size_t snap_to_grid(double t, double dt) {
  const double k = t / dt;
  const double r = std::round(k);
  if (std::abs(k - r) < 1e-6) return static_cast<std::size_t>(std::max(r, 0.0));
  return static_cast<std::size_t>(std::max(std::ceil(k), 0.0));
}

double low_voltage_scale(double m, double* dscale) {
  const double vb2 = kLowVoltageBreak * kLowVoltageBreak;
  if (m >= vb2) {
    *dscale = 0.0;
    return 1.0;
  }
  *dscale = 1.0 / vb2;
  return m / vb2;
}

double deadzone(double e, double band) {
  if (e > band) return e - band;
  if (e < -band) return e + band;
  return 0.0;
}

void check_positive(double v, const std::string& what) {
  if (!(v > 0.0) || !std::isfinite(v)) invalid(what + " must be positive");
}

class Simulator {
 public:
  Simulator(const Network& net, const DeviceSet& devices,
            const std::optional<ContingencySpec>& contingency,
            const std::vector<InjectionSchedule>& schedules,
            const SimConfig& cfg)
      : net_(net), dev_(devices), contingency_(contingency), cfg_(cfg) {
    n_ = static_cast<Eigen::Index>(net.bus_count());
    base_ = net.base_mva;
    y_branch_ = admittance_matrix(net);

    for (const auto& s : schedules) {
      if (s.mode == ScheduleMode::Device) {
        SvcDevice svc = *s.device;
        svc.b = 0.0;
        const double v0 = std::abs(dev_.v_init(bus_index(svc.bus)));
        if (!svc.v_ref) svc.v_ref = v0;
        if (std::abs(*svc.v_ref - v0) > svc.deadband + 1e-12)
          invalid("SVC at bus " + std::to_string(svc.bus) +
                  ": v_ref is outside the deadband around the initial voltage");
        dev_.svcs.push_back(svc);
      } else {
        open_loop_.push_back(s);
      }
    }
    for (auto& svc : dev_.svcs) {
      if (!svc.v_ref) svc.v_ref = std::abs(dev_.v_init(bus_index(svc.bus)));
    }

    const auto ng = dev_.generators.size();
    const auto nl = dev_.loads.size();
    load_off_ = static_cast<Eigen::Index>(2 * ng);
    svc_off_ = load_off_ + static_cast<Eigen::Index>(2 * nl);
    nx_ = svc_off_ + static_cast<Eigen::Index>(dev_.svcs.size());

    for (const auto& g : dev_.generators) gen_bus_.push_back(bus_index(g.bus));
    for (const auto& l : dev_.loads) load_bus_.push_back(bus_index(l.bus));
    for (const auto& s : dev_.svcs) svc_bus_.push_back(bus_index(s.bus));
    for (const auto& s : open_loop_) open_bus_.push_back(bus_index(s.bus));
    online_.resize(ng);
    for (std::size_t k = 0; ng > k; ++k) online_[k] = dev_.generators[k].online;

    steps_ = cfg_.steps();
    if (contingency_) {
      fault_on_step_ = snap_to_grid(cfg_.fault_time, cfg_.dt);
      const double clear =
          cfg_.fault_time + contingency_->fault_duration / net.frequency_hz;
      fault_off_step_ =
          std::max(snap_to_grid(clear, cfg_.dt), fault_on_step_ + 1);
    }
  }

  Trajectory run() {
    Trajectory traj;
    traj.bus_ids = net_.bus_ids();
    traj.dt = cfg_.dt;
    traj.t_f = cfg_.t_f;
    for (const auto& s : dev_.svcs) traj.svc_buses.push_back(s.bus);
    if (contingency_)
      traj.clearing_time = static_cast<double>(fault_off_step_) * cfg_.dt;

    const auto samples = static_cast<Eigen::Index>(steps_ + 1);
    traj.v_mag.resize(samples, n_);
    traj.svc_q.resize(samples, static_cast<Eigen::Index>(dev_.svcs.size()));
    traj.times.reserve(steps_ + 1);

    Eigen::VectorXd x = initial_state();
    Eigen::VectorXcd v = dev_.v_init;
    apply_events(0);
    Eigen::VectorXd q_open = open_loop_at(0);
    rebuild_admittance();
    if (!solve_network(x, q_open, v)) return fail(traj, 0, SimStatus::NetworkDiverged);
    record(traj, 0, x, v);

    Eigen::VectorXd x_next(nx_);
    for (std::size_t step = 0; step < steps_; ++step) {
      const Eigen::VectorXd f0 = derivative(x, v);
      bool ok = cfg_.integrator == Integrator::Trapezoidal
                    ? trapezoidal_step(x, v, f0, q_open, x_next)
                    : rk4_step(x, v, f0, q_open, x_next);
      if (!ok) return fail(traj, step + 1, SimStatus::NetworkDiverged);

      x = x_next;
      if (apply_events(step + 1)) rebuild_admittance();
      q_open = open_loop_at(step + 1);
      if (!solve_network(x, q_open, v))
        return fail(traj, step + 1, SimStatus::NetworkDiverged);
      if (!x.allFinite() || !v.allFinite() ||
          v.cwiseAbs().maxCoeff() > kBlowUpVoltage)
        return fail(traj, step + 1, SimStatus::StateBlowUp);
      record(traj, static_cast<Eigen::Index>(step + 1), x, v);
    }
    return traj;
  }

 private:
  std::size_t bus_index(int id) const { return net_.index_of(id); }

  Eigen::VectorXd initial_state() const {
    Eigen::VectorXd x(nx_);
    for (std::size_t k = 0; k < dev_.generators.size(); ++k) {
      x(2 * k) = dev_.generators[k].delta;
      x(2 * k + 1) = dev_.generators[k].omega;
    }
    for (std::size_t k = 0; k < dev_.loads.size(); ++k) {
      x(load_off_ + 2 * k) = dev_.loads[k].xp;
      x(load_off_ + 2 * k + 1) = dev_.loads[k].xq;
    }
    for (std::size_t k = 0; k < dev_.svcs.size(); ++k)
      x(svc_off_ + k) = dev_.svcs[k].b;
    return x;
  }

  // Returns true when the network configuration changed.
  bool apply_events(std::size_t step) {
    if (!contingency_) return false;
    bool changed = false;
    if (step == fault_on_step_) {
      fault_active_ = true;
      changed = true;
    }
    if (step == fault_off_step_) {
      fault_active_ = false;
      Network opened = net_;
      for (auto& br : opened.branches) {
        if (br.id == contingency_->faulted_branch) br.in_service = false;
      }
      y_branch_ = admittance_matrix(opened);
      if (contingency_->gen_loss) {
        for (std::size_t k = 0; k < dev_.generators.size(); ++k) {
          if (dev_.generators[k].bus == contingency_->gen_loss->bus)
            online_[k] *= 1.0 - contingency_->gen_loss->fraction;
        }
      }
      changed = true;
    }
    return changed;
  }

  void rebuild_admittance() {
    ComplexMatrix y = y_branch_;
    for (std::size_t k = 0; k < dev_.generators.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(gen_bus_[k]);
      y(i, i) += online_[k] / cplx(0.0, dev_.generators[k].xd_prime);
    }
    if (fault_active_) {
      const auto f = static_cast<Eigen::Index>(bus_index(contingency_->fault_bus));
      y(f, f) += contingency_->fault_admittance;
    }
    const Eigen::MatrixXd g = y.real(), b = y.imag();
    jac_linear_.resize(2 * n_, 2 * n_);
    jac_linear_ << g, -b, b, g;
  }

  Eigen::VectorXd open_loop_at(std::size_t step) const {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(n_);
    const double t = (static_cast<double>(step) + 1e-7) * cfg_.dt;
    for (std::size_t k = 0; k < open_loop_.size(); ++k)
      q(static_cast<Eigen::Index>(open_bus_[k])) +=
          evaluate_schedule(open_loop_[k], t) / base_;
    return q;
  }

  double svc_output(std::size_t k, double b, double m) const {
    const double qmax = dev_.svcs[k].rating / base_;
    return std::clamp(b * m, -qmax, qmax);
  }

  // Newton on the real and imaginary parts of the bus voltages.
  bool solve_network(const Eigen::VectorXd& x, const Eigen::VectorXd& q_open,
                     Eigen::VectorXcd& v) const {
    const Eigen::Index n = n_;
    Eigen::VectorXd src = Eigen::VectorXd::Zero(2 * n);
    for (std::size_t k = 0; k < dev_.generators.size(); ++k) {
      const auto& gen = dev_.generators[k];
      const cplx e = std::polar(gen.e_prime, x(2 * k));
      const cplx i = online_[k] / cplx(0.0, gen.xd_prime) * e;
      src(static_cast<Eigen::Index>(gen_bus_[k])) += i.real();
      src(n + static_cast<Eigen::Index>(gen_bus_[k])) += i.imag();
    }

    Eigen::VectorXd vv(2 * n), resid(2 * n);
    vv << v.real(), v.imag();
    Eigen::VectorXd p(n), q(n), dp(n), dq(n);
    for (int iter = 0; iter <= cfg_.max_network_iterations; ++iter) {
      injections(x, q_open, vv, p, q, dp, dq);
      resid = jac_linear_ * vv - src;
      Eigen::MatrixXd jac = jac_linear_;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double vr = vv(i), vi = vv(n + i);
        const double m = std::max(vr * vr + vi * vi, 1e-12);
        const double num_r = p(i) * vr + q(i) * vi;
        const double num_i = p(i) * vi - q(i) * vr;
        resid(i) -= num_r / m;
        resid(n + i) -= num_i / m;
        const double dnr_dvr = 2 * vr * (dp(i) * vr + dq(i) * vi) + p(i);
        const double dnr_dvi = 2 * vi * (dp(i) * vr + dq(i) * vi) + q(i);
        const double dni_dvr = 2 * vr * (dp(i) * vi - dq(i) * vr) - q(i);
        const double dni_dvi = 2 * vi * (dp(i) * vi - dq(i) * vr) + p(i);
        const double m2 = m * m;
        jac(i, i) -= (dnr_dvr * m - num_r * 2 * vr) / m2;
        jac(i, n + i) -= (dnr_dvi * m - num_r * 2 * vi) / m2;
        jac(n + i, i) -= (dni_dvr * m - num_i * 2 * vr) / m2;
        jac(n + i, n + i) -= (dni_dvi * m - num_i * 2 * vi) / m2;
      }
      const double err = resid.cwiseAbs().maxCoeff();
      if (!std::isfinite(err)) return false;
      if (err <= cfg_.network_solve_tol) {
        for (Eigen::Index i = 0; i < n; ++i) v(i) = cplx(vv(i), vv(n + i));
        return true;
      }
      if (iter == cfg_.max_network_iterations) break;
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
      vv -= lu.solve(resid);
      if (!vv.allFinite()) return false;
    }
    return false;
  }

  // Injected complex power at each bus as functions of m = |V|^2 (loads,
  // SVCs and open-loop schedules), plus derivatives with respect to m.
  void injections(const Eigen::VectorXd& x, const Eigen::VectorXd& q_open,
                  const Eigen::VectorXd& vv, Eigen::VectorXd& p,
                  Eigen::VectorXd& q, Eigen::VectorXd& dp,
                  Eigen::VectorXd& dq) const {
    const Eigen::Index n = n_;
    p.setZero();
    q.setZero();
    dp.setZero();
    dq.setZero();
    auto mag2 = [&](std::size_t i) {
      const auto ii = static_cast<Eigen::Index>(i);
      return vv(ii) * vv(ii) + vv(n + ii) * vv(n + ii);
    };
    for (std::size_t k = 0; k < dev_.loads.size(); ++k) {
      const auto& ld = dev_.loads[k];
      const auto i = static_cast<Eigen::Index>(load_bus_[k]);
      const double m = std::max(mag2(load_bus_[k]), 1e-12);
      const double v02 = ld.v0 * ld.v0;
      const double rel = m / v02;
      double dlv = 0.0;
      const double lv = low_voltage_scale(m, &dlv);
      const double xp = x(load_off_ + 2 * k), xq = x(load_off_ + 2 * k + 1);
      const double sf = ld.static_fraction;
      const double pw = std::pow(rel, ld.alpha_t / 2.0);
      const double dpw = ld.alpha_t / 2.0 * std::pow(rel, ld.alpha_t / 2.0 - 1.0) / v02;
      const double pd = sf * ld.p0 * rel + xp * lv + (1 - sf) * ld.p0 * pw;
      const double qd = sf * ld.q0 * rel + xq * lv + (1 - sf) * ld.q0 * pw;
      p(i) -= pd;
      q(i) -= qd;
      dp(i) -= sf * ld.p0 / v02 + xp * dlv + (1 - sf) * ld.p0 * dpw;
      dq(i) -= sf * ld.q0 / v02 + xq * dlv + (1 - sf) * ld.q0 * dpw;
    }
    for (std::size_t k = 0; k < dev_.svcs.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(svc_bus_[k]);
      const double m = mag2(svc_bus_[k]);
      const double b = x(svc_off_ + static_cast<Eigen::Index>(k));
      const double out = svc_output(k, b, m);
      q(i) += out;
      if (out == b * m) dq(i) += b;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (q_open(i) == 0.0) continue;
      const double m = mag2(static_cast<std::size_t>(i));
      double dlv = 0.0;
      const double lv = low_voltage_scale(m, &dlv);
      q(i) += q_open(i) * lv;
      dq(i) += q_open(i) * dlv;
    }
  }

  Eigen::VectorXd derivative(const Eigen::VectorXd& x,
                             const Eigen::VectorXcd& v) const {
    Eigen::VectorXd f(nx_);
    const double omega_s = 2.0 * std::numbers::pi * net_.frequency_hz;
    for (std::size_t k = 0; k < dev_.generators.size(); ++k) {
      const auto& gen = dev_.generators[k];
      const double on = online_[k];
      const cplx e = std::polar(gen.e_prime, x(2 * k));
      const cplx vt = v(static_cast<Eigen::Index>(gen_bus_[k]));
      const cplx i = on / cplx(0.0, gen.xd_prime) * (e - vt);
      const double pe = (e * std::conj(i)).real();
      const double w = x(2 * k + 1);
      f(2 * k) = omega_s * w;
      f(2 * k + 1) = on > 0.0
                         ? (on * gen.pm - pe - on * gen.d * w) / (2.0 * on * gen.h)
                         : 0.0;
    }
    for (std::size_t k = 0; k < dev_.loads.size(); ++k) {
      const auto& ld = dev_.loads[k];
      const double vm = std::abs(v(static_cast<Eigen::Index>(load_bus_[k])));
      const double rel = vm / ld.v0;
      const double ps = std::pow(rel, ld.alpha_s), pt = std::pow(rel, ld.alpha_t);
      const double share = 1.0 - ld.static_fraction;
      const Eigen::Index o = load_off_ + static_cast<Eigen::Index>(2 * k);
      f(o) = (-x(o) + share * ld.p0 * (ps - pt)) / ld.tp;
      f(o + 1) = (-x(o + 1) + share * ld.q0 * (ps - pt)) / ld.tq;
    }
    for (std::size_t k = 0; k < dev_.svcs.size(); ++k) {
      const auto& svc = dev_.svcs[k];
      const Eigen::Index o = svc_off_ + static_cast<Eigen::Index>(k);
      const double vm = std::abs(v(static_cast<Eigen::Index>(svc_bus_[k])));
      const double target = svc.kr * deadzone(*svc.v_ref - vm, svc.deadband);
      double rate = (target - x(o)) / svc.tr;
      const double bmax = svc.b_max(base_);
      if ((x(o) >= bmax && rate > 0.0) || (x(o) <= -bmax && rate < 0.0))
        rate = 0.0;
      f(o) = rate;
    }
    return f;
  }

  void clamp_states(Eigen::VectorXd& x) const {
    for (std::size_t k = 0; k < dev_.svcs.size(); ++k) {
      const Eigen::Index o = svc_off_ + static_cast<Eigen::Index>(k);
      const double bmax = dev_.svcs[k].b_max(base_);
      x(o) = std::clamp(x(o), -bmax, bmax);
    }
  }

  // Implicit trapezoidal rule, corrector iterated to a fixed point. The
  // network is re-solved at every corrector pass.
  bool trapezoidal_step(const Eigen::VectorXd& x, const Eigen::VectorXcd& v,
                        const Eigen::VectorXd& f0, const Eigen::VectorXd& q_open,
                        Eigen::VectorXd& x_next) const {
    const double dt = cfg_.dt;
    Eigen::VectorXd guess = x + dt * f0;
    clamp_states(guess);
    Eigen::VectorXcd vg = v;
    for (int pass = 0; pass < kMaxCorrectorPasses; ++pass) {
      if (!solve_network(guess, q_open, vg)) return false;
      x_next = x + 0.5 * dt * (f0 + derivative(guess, vg));
      clamp_states(x_next);
      const double change = nx_ > 0 ? (x_next - guess).cwiseAbs().maxCoeff() : 0.0;
      guess = x_next;
      if (change <= kCorrectorTol) break;
    }
    return x_next.allFinite();
  }

  bool rk4_step(const Eigen::VectorXd& x, const Eigen::VectorXcd& v,
                const Eigen::VectorXd& k1, const Eigen::VectorXd& q_open,
                Eigen::VectorXd& x_next) const {
    const double dt = cfg_.dt;
    Eigen::VectorXcd vs = v;
    Eigen::VectorXd xs = x + 0.5 * dt * k1;
    if (!solve_network(xs, q_open, vs)) return false;
    const Eigen::VectorXd k2 = derivative(xs, vs);
    xs = x + 0.5 * dt * k2;
    if (!solve_network(xs, q_open, vs)) return false;
    const Eigen::VectorXd k3 = derivative(xs, vs);
    xs = x + dt * k3;
    if (!solve_network(xs, q_open, vs)) return false;
    const Eigen::VectorXd k4 = derivative(xs, vs);
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    clamp_states(x_next);
    return x_next.allFinite();
  }

  void record(Trajectory& traj, Eigen::Index row, const Eigen::VectorXd& x,
              const Eigen::VectorXcd& v) const {
    traj.times.push_back(static_cast<double>(row) * cfg_.dt);
    traj.v_mag.row(row) = v.cwiseAbs().transpose();
    for (std::size_t k = 0; k < dev_.svcs.size(); ++k) {
      const double m = std::norm(v(static_cast<Eigen::Index>(svc_bus_[k])));
      traj.svc_q(row, static_cast<Eigen::Index>(k)) =
          svc_output(k, x(svc_off_ + static_cast<Eigen::Index>(k)), m) * base_;
    }
  }

  Trajectory& fail(Trajectory& traj, std::size_t step, SimStatus status) const {
    const auto kept = static_cast<Eigen::Index>(step);
    traj.v_mag.conservativeResize(kept, Eigen::NoChange);
    traj.svc_q.conservativeResize(kept, Eigen::NoChange);
    traj.times.resize(step);
    traj.status = status;
    traj.failure_time = static_cast<double>(step) * cfg_.dt;
    std::ostringstream msg;
    msg << (status == SimStatus::NetworkDiverged
                ? "network solution failed to converge"
                : "state blow-up")
        << " at t=" << traj.failure_time << " s";
    traj.message = msg.str();
    return traj;
  }

  const Network& net_;
  DeviceSet dev_;
  std::optional<ContingencySpec> contingency_;
  SimConfig cfg_;
  std::vector<InjectionSchedule> open_loop_;

  Eigen::Index n_ = 0, nx_ = 0, load_off_ = 0, svc_off_ = 0;
  double base_ = 100.0;
  std::vector<std::size_t> gen_bus_, load_bus_, svc_bus_, open_bus_;
  std::vector<double> online_;
  ComplexMatrix y_branch_;
  Eigen::MatrixXd jac_linear_;
  std::size_t steps_ = 0;
  std::size_t fault_on_step_ = 0, fault_off_step_ = 0;
  bool fault_active_ = false;
};

}  // namespace

std::string_view to_string(SimStatus status) {
  switch (status) {
    case SimStatus::Completed: return "completed";
    case SimStatus::NetworkDiverged: return "network-diverged";
    case SimStatus::StateBlowUp: return "state-blow-up";
  }
  return "?";
}

DeviceSet default_devices(const Network& net) {
  DeviceSet set;
  for (const auto& bus : net.buses) {
    if (bus.kind != BusKind::PQ) {
      GeneratorParams p = net.dynamics.generator_for(bus.id);
      GeneratorModel g;
      g.bus = bus.id;
      g.h = p.h;
      g.d = p.d;
      g.xd_prime = p.xd_prime;
      set.generators.push_back(g);
    }
    if (bus.p_load != 0.0 || bus.q_load != 0.0) {
      LoadDynParams p = net.dynamics.load_for(bus.id);
      RecoveryLoadModel l;
      l.bus = bus.id;
      l.static_fraction = p.static_fraction;
      l.alpha_t = p.alpha_t;
      l.alpha_s = p.alpha_s;
      l.tp = p.tp;
      l.tq = p.tq;
      set.loads.push_back(l);
    }
  }
  return set;
}

SvcDevice make_svc(const Network& net, int bus,
                   std::optional<double> rating_mvar) {
  if (!net.has_bus(bus))
    invalid("SVC at unknown bus " + std::to_string(bus));
  SvcParams p = net.dynamics.svc_for(bus);
  SvcDevice s;
  s.bus = bus;
  s.rating = rating_mvar.value_or(p.rating);
  s.tr = p.tr;
  s.kr = p.kr;
  s.deadband = p.deadband;
  s.v_ref = p.v_ref;
  check_positive(s.rating, "SVC rating");
  check_positive(s.tr, "SVC tr");
  if (!(s.kr >= 0.0) || !(s.deadband >= 0.0))
    invalid("SVC kr and deadband must be non-negative");
  return s;
}

void initialize_dynamics(const Network& net, const PowerFlowSolution& pf,
                         DeviceSet& devices) {
  if (!pf.converged)
    invalid("cannot initialize dynamics from an unconverged power flow");
  if (pf.v_mag.size() != static_cast<Eigen::Index>(net.bus_count()))
    invalid("power-flow solution does not match the network");

  for (const auto& [bus, fields] : net.dynamics.generators) {
    if (!net.has_bus(bus))
      invalid("[[generator]] refers to unknown bus " + std::to_string(bus));
    if (net.bus(bus).kind == BusKind::PQ)
      invalid("[[generator]] placed at PQ bus " + std::to_string(bus));
  }
  for (const auto& [bus, fields] : net.dynamics.loads) {
    if (!net.has_bus(bus))
      invalid("[[load_dyn]] refers to unknown bus " + std::to_string(bus));
  }
  for (const auto& [bus, fields] : net.dynamics.svcs) {
    if (!net.has_bus(bus))
      invalid("[[svc]] refers to unknown bus " + std::to_string(bus));
  }

  const Eigen::VectorXcd v = pf.voltage();
  const double base = net.base_mva;

  for (auto& g : devices.generators) {
    if (!net.has_bus(g.bus))
      invalid("generator at unknown bus " + std::to_string(g.bus));
    const Bus& bus = net.bus(g.bus);
    if (bus.kind == BusKind::PQ)
      invalid("generator at PQ bus " + std::to_string(g.bus));
    check_positive(g.h, "generator H");
    check_positive(g.xd_prime, "generator xd_prime");
    if (!(g.d >= 0.0)) invalid("generator damping must be non-negative");
    const auto i = static_cast<Eigen::Index>(net.index_of(g.bus));
    const cplx s_gen = cplx(pf.p_inj(i), pf.q_inj(i)) +
                       cplx(bus.p_load, bus.q_load) / base;
    const cplx current = std::conj(s_gen / v(i));
    const cplx e = v(i) + cplx(0.0, g.xd_prime) * current;
    g.e_prime = std::abs(e);
    g.delta = std::arg(e);
    g.omega = 0.0;
    g.pm = s_gen.real();
    g.online = 1.0;
  }

  for (auto& l : devices.loads) {
    if (!net.has_bus(l.bus))
      invalid("load model at unknown bus " + std::to_string(l.bus));
    check_positive(l.tp, "load tp");
    check_positive(l.tq, "load tq");
    if (!(l.static_fraction >= 0.0 && l.static_fraction <= 1.0))
      invalid("load static_fraction must lie in [0, 1]");
    if (!(l.alpha_t >= l.alpha_s && l.alpha_s >= 0.0))
      invalid("load exponents must satisfy alpha_t >= alpha_s >= 0");
    const Bus& bus = net.bus(l.bus);
    l.p0 = bus.p_load / base;
    l.q0 = bus.q_load / base;
    l.v0 = pf.v_mag(static_cast<Eigen::Index>(net.index_of(l.bus)));
    l.xp = 0.0;
    l.xq = 0.0;
  }

  for (auto& s : devices.svcs) {
    if (!net.has_bus(s.bus))
      invalid("SVC at unknown bus " + std::to_string(s.bus));
    const double v0 = pf.v_mag(static_cast<Eigen::Index>(net.index_of(s.bus)));
    if (!s.v_ref) s.v_ref = v0;
    if (std::abs(*s.v_ref - v0) > s.deadband + 1e-12)
      invalid("SVC at bus " + std::to_string(s.bus) +
              ": v_ref is outside the deadband around the initial voltage");
    s.b = 0.0;
  }

  devices.v_init = v;
  devices.initialized = true;
}

void ContingencySpec::validate(const Network& net) const {
  if (!net.has_bus(fault_bus))
    invalid("contingency fault bus " + std::to_string(fault_bus) +
            " does not exist");
  const Branch& br = net.branch(faulted_branch);
  if (br.from_bus != fault_bus && br.to_bus != fault_bus)
    invalid("faulted branch " + std::to_string(faulted_branch) +
            " is not incident to bus " + std::to_string(fault_bus));
  if (!(fault_duration > 0.0)) invalid("fault duration must be positive");
  if (gen_loss) {
    if (!net.has_bus(gen_loss->bus))
      invalid("generation loss at unknown bus " + std::to_string(gen_loss->bus));
    if (!(gen_loss->fraction >= 0.0 && gen_loss->fraction <= 1.0))
      invalid("generation loss fraction must lie in [0, 1]");
  }
}

InjectionSchedule InjectionSchedule::pulse(int bus, double q1, double q2,
                                           double t1, double t2) {
  InjectionSchedule s;
  s.bus = bus;
  s.mode = ScheduleMode::Pulse;
  s.q1 = q1;
  s.q2 = q2;
  s.t1 = t1;
  s.t2 = t2;
  return s;
}

InjectionSchedule InjectionSchedule::step(int bus, double q, double onset) {
  InjectionSchedule s;
  s.bus = bus;
  s.mode = ScheduleMode::Steps;
  s.steps = {{onset, q}};
  return s;
}

InjectionSchedule InjectionSchedule::svc(SvcDevice device) {
  InjectionSchedule s;
  s.bus = device.bus;
  s.mode = ScheduleMode::Device;
  s.capacity = device.rating;
  s.device = device;
  return s;
}

void InjectionSchedule::validate(const Network& net) const {
  if (!net.has_bus(bus))
    invalid("injection schedule at unknown bus " + std::to_string(bus));
  if (mode == ScheduleMode::Device) {
    if (!device) invalid("device schedule without a device");
    if (device->bus != bus) invalid("device schedule bus mismatch");
    return;
  }
  if (mode == ScheduleMode::Pulse && !(t1 < t2))
    invalid("pulse schedule needs t1 < t2");
  // Piecewise constant: the extremes occur right at the breakpoints.
  std::vector<double> probes{0.0};
  if (mode == ScheduleMode::Pulse) {
    probes.push_back(t1);
    probes.push_back(t2);
  }
  for (const auto& st : steps) probes.push_back(st.first);
  for (double t : probes) {
    if (!(t >= 0.0)) invalid("schedule times must be non-negative");
    if (std::abs(evaluate_schedule(*this, t)) > capacity + 1e-9)
      invalid("schedule at bus " + std::to_string(bus) + " exceeds its capacity");
  }
}

double evaluate_schedule(const InjectionSchedule& schedule, double t) {
  auto unit_step = [](double tau) { return tau >= 0.0 ? 1.0 : 0.0; };
  switch (schedule.mode) {
    case ScheduleMode::Device: return 0.0;
    case ScheduleMode::Pulse:
      return schedule.q1 * unit_step(t - schedule.t1) -
             schedule.q2 * unit_step(t - schedule.t2);
    case ScheduleMode::Steps: {
      double q = 0.0;
      for (const auto& [onset, size] : schedule.steps) q += size * unit_step(t - onset);
      return q;
    }
  }
  return 0.0;
}

std::size_t SimConfig::steps() const {
  return static_cast<std::size_t>(std::llround(t_f / dt));
}

void SimConfig::validate(double frequency_hz) const {
  if (!(dt > 0.0) || !(t_f > 0.0)) invalid("dt and t_f must be positive");
  const double ratio = t_f / dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-6 * std::max(1.0, ratio))
    invalid("dt must divide t_f");
  if (dt > 0.5 / frequency_hz + 1e-15) invalid("dt must not exceed half a cycle");
  if (!(network_solve_tol > 0.0)) invalid("network_solve_tol must be positive");
  if (!(fault_time >= 0.0)) invalid("fault_time must be non-negative");
  if (max_network_iterations < 1) invalid("max_network_iterations must be >= 1");
}

Trajectory simulate(const Network& net, const DeviceSet& devices,
                    const std::optional<ContingencySpec>& contingency,
                    const std::vector<InjectionSchedule>& schedules,
                    const SimConfig& cfg) {
  if (!devices.initialized)
    invalid("devices must be initialized before simulation");
  cfg.validate(net.frequency_hz);
  if (contingency) contingency->validate(net);
  for (const auto& s : schedules) s.validate(net);
  Simulator sim(net, devices, contingency, schedules, cfg);
  return sim.run();
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
  out << "t";
  for (int id : traj.bus_ids) out << ",bus_" << id;
  out << "\n";
  for (Eigen::Index k = 0; k < traj.samples(); ++k) {
    out << format_double(traj.times[static_cast<std::size_t>(k)]);
    for (Eigen::Index j = 0; j < traj.v_mag.cols(); ++j)
      out << ',' << format_double(traj.v_mag(k, j));
    out << "\n";
  }
}

}  // namespace varplace
