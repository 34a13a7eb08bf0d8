#include "varplace/vsi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "varplace/error.hpp"
#include "varplace/io.hpp"
#include "varplace/parallel.hpp"

namespace varplace {

namespace {

constexpr double kTimeEps = 1e-9;

[[noreturn]] void invalid(const std::string& msg) { throw ValidationError(msg); }

void check_fraction(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0)) invalid(std::string(name) + " must lie in (0, 1)");
}

std::vector<int> rank_descending(const std::vector<int>& ids, const std::vector<double>& values) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return ids[a] < ids[b];
  });
  std::vector<int> out;
  for (auto i : order) out.push_back(ids[i]);
  return out;
}

}  // namespace

void CriteriaSpec::validate(double t_f) const {
  check_fraction(load_dip_max, "load_dip_max");
  check_fraction(gen_dip_max, "gen_dip_max");
  check_fraction(sustained_dip, "sustained_dip");
  check_fraction(post_transient_dev, "post_transient_dev");
  if (!(sustained_cycles > 0.0)) invalid("sustained_cycles must be positive");
  if (!(transient_window > 0.0 && transient_window < t_f))
    invalid("transient_window must lie inside the simulation horizon");
  if (absolute_band && !(band_low < band_high)) invalid("band_low must be below band_high");
}

Eigen::MatrixXd deviation_ratio(const Eigen::MatrixXd& v_mag, const Eigen::VectorXd& pre_fault) {
  if (pre_fault.size() != v_mag.cols()) invalid("pre-fault vector does not match the bus count");
  if ((pre_fault.array() <= 0.0).any()) invalid("pre-fault voltages must be positive");
  Eigen::MatrixXd r(v_mag.rows(), v_mag.cols());
  for (Eigen::Index j = 0; j < v_mag.cols(); ++j)
    r.col(j) = ((v_mag.col(j).array() - pre_fault(j)).abs() / pre_fault(j)).matrix();
  return r;
}

Eigen::MatrixXd deviation_ratio(const Trajectory& traj, const Eigen::VectorXd& pre_fault) {
  return deviation_ratio(traj.v_mag, pre_fault);
}

CriteriaResult check_criteria(const Eigen::MatrixXd& v_mag, const Eigen::VectorXd& pre_fault,
                              const CriteriaSpec& spec, const std::vector<BusKind>& kinds,
                              double clearing_time, double dt, double frequency_hz) {
  if (static_cast<Eigen::Index>(kinds.size()) != v_mag.cols())
    invalid("bus kinds do not match the trajectory");
  if (!(dt > 0.0) || !(frequency_hz > 0.0)) invalid("dt and frequency must be positive");
  if (!(clearing_time < spec.transient_window))
    invalid("clearing time must precede the end of the transient window");

  const Eigen::MatrixXd r = deviation_ratio(v_mag, pre_fault);
  const Eigen::Index samples = v_mag.rows(), n = v_mag.cols();
  CriteriaResult out;
  out.flags.setZero(samples, n);
  out.si.setZero(samples, n);

  auto time = [&](Eigen::Index k) { return static_cast<double>(k) * dt; };
  auto in_transient = [&](Eigen::Index k) {
    return time(k) >= clearing_time - kTimeEps && time(k) < spec.transient_window - kTimeEps;
  };
  const double max_run = spec.sustained_cycles / (frequency_hz * dt) + 1e-9;

  for (Eigen::Index j = 0; j < n; ++j) {
    const bool load = kinds[static_cast<std::size_t>(j)] == BusKind::PQ;
    const double dip_max = load ? spec.load_dip_max : spec.gen_dip_max;
    Eigen::Index run_start = -1;
    auto close_run = [&](Eigen::Index end) {
      if (run_start >= 0 && static_cast<double>(end - run_start) > max_run) {
        for (Eigen::Index k = run_start; k < end; ++k) out.flags(k, j) |= kSustainedDip;
      }
      run_start = -1;
    };
    for (Eigen::Index k = 0; k < samples; ++k) {
      const double rk = r(k, j);
      if (in_transient(k)) {
        if (rk > dip_max) out.flags(k, j) |= kTransientDip;
        if (load && rk > spec.sustained_dip) {
          if (run_start < 0) run_start = k;
        } else {
          close_run(k);
        }
      } else {
        close_run(k);
        if (time(k) >= spec.transient_window - kTimeEps) {
          const double v = v_mag(k, j);
          const bool bad = spec.absolute_band ? (v < spec.band_low || v > spec.band_high)
                                              : rk > spec.post_transient_dev;
          if (bad) out.flags(k, j) |= kPostTransient;
        }
      }
    }
    close_run(samples);
  }
  for (Eigen::Index k = 0; k < samples; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (out.flags(k, j)) {
        out.si(k, j) = r(k, j);
        out.criteria |= out.flags(k, j);
      }
    }
  }
  return out;
}

double severity_index(const CriteriaResult& r) {
  const Eigen::Index samples = r.si.rows();
  if (samples <= 1 || r.si.cols() == 0) return 0.0;
  return r.si.bottomRows(samples - 1).mean();
}

SeverityReport severity_rank(const Network& net, const Eigen::VectorXd& pre_fault,
                             const std::vector<int>& contingency_ids,
                             const std::vector<Trajectory>& trajectories,
                             const CriteriaSpec& spec) {
  if (contingency_ids.size() != trajectories.size())
    invalid("one trajectory per contingency is required");
  std::vector<BusKind> kinds;
  for (const auto& b : net.buses) kinds.push_back(b.kind);
  SeverityReport rep;
  std::vector<double> values;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& t = trajectories[k];
    if (!t.clearing_time) invalid("trajectory without a fault cannot be ranked");
    SeverityEntry e;
    e.contingency = contingency_ids[k];
    e.diverged = t.diverged();
    if (t.samples() > 0) {
      const auto res =
          check_criteria(t.v_mag, pre_fault, spec, kinds, *t.clearing_time, t.dt, net.frequency_hz);
      e.si = severity_index(res);
      e.criteria = res.criteria;
    }
    values.push_back(e.si);
    rep.entries.push_back(e);
  }
  rep.ranking = rank_descending(contingency_ids, values);
  return rep;
}

VsiResult vsi_rank(const SimulateFn& sim, const std::vector<WeightedContingency>& contingencies,
                   const std::vector<int>& candidates, const VsiOptions& opts) {
  if (!(opts.q_probe > 0.0)) invalid("probe size must be positive");
  if (candidates.empty()) invalid("VSI needs at least one candidate");
  VsiResult out;
  out.candidates = candidates;
  out.q_probe = opts.q_probe;
  out.overall.assign(candidates.size(), 0.0);
  out.degenerate = true;
  const auto nc = static_cast<Eigen::Index>(candidates.size());

  for (const auto& wc : contingencies) {
    VsiComponent comp;
    comp.contingency = wc.id;
    comp.si = wc.si;
    comp.average.assign(candidates.size(), 0.0);
    comp.normalized.assign(candidates.size(), 0.0);

    const Trajectory base = sim(wc.spec, {});
    if (base.diverged() || !base.clearing_time) {
      out.flags.push_back("contingency " + std::to_string(wc.id) + ": baseline " +
                          (base.diverged() ? base.message : "has no clearing time"));
      comp.pair.setZero(nc, base.v_mag.cols());
      out.components.push_back(std::move(comp));
      continue;
    }
    const double onset = *base.clearing_time;
    comp.pair.setZero(nc, base.v_mag.cols());
    std::vector<std::string> run_flags(candidates.size());
    parallel_for(candidates.size(), opts.workers, [&](std::size_t i) {
      const Trajectory probe =
          sim(wc.spec, {InjectionSchedule::step(candidates[i], opts.q_probe, onset)});
      if (probe.diverged()) {
        run_flags[i] = "contingency " + std::to_string(wc.id) + ", candidate " +
                       std::to_string(candidates[i]) + ": probe " + probe.message;
        return;
      }
      const auto rows = std::min(probe.samples(), base.samples());
      const Eigen::MatrixXd diff = probe.v_mag.topRows(rows) - base.v_mag.topRows(rows);
      comp.pair.row(static_cast<Eigen::Index>(i)) = diff.colwise().maxCoeff() / opts.q_probe;
    });
    for (auto& f : run_flags) {
      if (!f.empty()) out.flags.push_back(std::move(f));
    }

    double best = 0.0;
    for (Eigen::Index i = 0; i < nc; ++i) {
      Eigen::RowVectorXd row = comp.pair.row(i);
      if (opts.clip_negative) row = row.cwiseMax(0.0);
      comp.average[static_cast<std::size_t>(i)] = row.size() ? row.mean() : 0.0;
      best = std::max(best, comp.average[static_cast<std::size_t>(i)]);
    }
    if (best > 0.0) {
      out.degenerate = false;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        comp.normalized[i] = comp.average[i] / best;
        out.overall[i] += wc.si * comp.normalized[i];
      }
    }
    out.components.push_back(std::move(comp));
  }
  if (out.degenerate) out.flags.push_back("degenerate: no probe improved any voltage");
  out.ranking = rank_descending(candidates, out.overall);
  return out;
}

std::string severity_csv(const SeverityReport& r) {
  std::ostringstream os;
  os << "contingency,si,criteria,diverged\n";
  for (const auto& e : r.entries) {
    os << e.contingency << ',' << format_double(e.si) << ',' << static_cast<int>(e.criteria) << ','
       << (e.diverged ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string vsi_csv(const VsiResult& r) {
  std::ostringstream os;
  os << "candidate,vsi";
  for (const auto& c : r.components) os << ",k" << c.contingency;
  os << '\n';
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    os << r.candidates[i] << ',' << format_double(r.overall[i]);
    for (const auto& c : r.components) os << ',' << format_double(c.normalized[i]);
    os << '\n';
  }
  return os.str();
}

}  // namespace varplace
