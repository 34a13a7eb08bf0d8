#include "varplace/ecc.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "varplace/io.hpp"

namespace varplace {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw ValidationError(msg); }

std::vector<Eigen::Index> monitored_columns(const std::vector<int>& bus_ids,
                                            const std::vector<int>& monitored) {
  std::vector<Eigen::Index> cols;
  if (monitored.empty()) {
    for (std::size_t j = 0; j < bus_ids.size(); ++j)
      cols.push_back(static_cast<Eigen::Index>(j));
    return cols;
  }
  for (int id : monitored) {
    auto it = std::find(bus_ids.begin(), bus_ids.end(), id);
    if (it == bus_ids.end()) invalid("monitored bus " + std::to_string(id) + " not in trajectory");
    cols.push_back(it - bus_ids.begin());
  }
  return cols;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m,
                               const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
  return out;
}

std::vector<int> select_ids(const std::vector<int>& ids,
                            const std::vector<Eigen::Index>& cols) {
  std::vector<int> out;
  for (auto c : cols) out.push_back(ids[static_cast<std::size_t>(c)]);
  return out;
}

Eigen::VectorXd svc_output_column(const Trajectory& t, int bus) {
  for (std::size_t k = 0; k < t.svc_buses.size(); ++k) {
    if (t.svc_buses[k] == bus)
      return t.svc_q.col(static_cast<Eigen::Index>(k)).cwiseAbs();
  }
  invalid("trajectory has no SVC at bus " + std::to_string(bus));
}

void require_converged(const Trajectory& t, const std::string& what) {
  if (t.diverged())
    throw ConvergenceError(what + " diverged: " + t.message,
                           std::numeric_limits<double>::quiet_NaN(), 0);
}

std::string mvar_label(double q) { return format_double(q) + " Mvar"; }

}  // namespace

CovarianceMatrix CovarianceMatrix::zero(std::vector<int> bus_index) {
  CovarianceMatrix c;
  const auto n = static_cast<Eigen::Index>(bus_index.size());
  c.bus_index = std::move(bus_index);
  c.w = Eigen::MatrixXd::Zero(n, n);
  return c;
}

std::string_view to_string(ExcitationShape shape) {
  switch (shape) {
    case ExcitationShape::Impulse: return "impulse";
    case ExcitationShape::StepSchedule: return "step-schedule";
    case ExcitationShape::Pulse: return "pulse";
  }
  return "?";
}

void ExcitationPlan::validate() const {
  if (directions.empty()) invalid("excitation plan needs at least one direction");
  if (sizes.empty()) invalid("excitation plan needs at least one size");
  for (double d : directions) {
    if (d != 1.0 && d != -1.0) invalid("directions must be +1 or -1");
  }
  for (double c : sizes) {
    if (!(c > 0.0) || !std::isfinite(c)) invalid("excitation sizes must be positive");
  }
  if (shape == ExcitationShape::Pulse && !(t1 < t2))
    invalid("pulse needs t1 < t2");
}

std::string ExcitationPlan::canonical() const {
  json j;
  j["directions"] = directions;
  j["sizes"] = sizes;
  j["shape"] = std::string(to_string(shape));
  if (shape == ExcitationShape::Pulse) {
    j["t1"] = t1;
    j["t2"] = t2;
  }
  return j.dump();
}

ExcitationPlan ExcitationPlan::impulse(std::vector<double> sizes) {
  ExcitationPlan p;
  p.sizes = std::move(sizes);
  p.shape = ExcitationShape::Impulse;
  return p;
}

ExcitationPlan ExcitationPlan::fault_specified(std::vector<double> capacities) {
  ExcitationPlan p;
  p.sizes = std::move(capacities);
  p.shape = ExcitationShape::StepSchedule;
  return p;
}

ExcitationPlan ExcitationPlan::fault_unspecified(std::vector<double> sizes,
                                                 double t1, double t2) {
  ExcitationPlan p;
  p.directions = {-1.0};
  p.sizes = std::move(sizes);
  p.shape = ExcitationShape::Pulse;
  p.t1 = t1;
  p.t2 = t2;
  return p;
}

std::vector<double> default_capacities() { return {10, 20, 40, 80, 160, 200}; }

CovarianceMatrix empirical_covariance(const Eigen::MatrixXd& baseline,
                                      const std::vector<PerturbedRun>& runs,
                                      const ExcitationPlan& plan, double dt,
                                      std::vector<int> bus_index,
                                      const EccOptions& opts) {
  plan.validate();
  if (!(dt > 0.0)) invalid("dt must be positive");
  const Eigen::Index n = baseline.cols();
  if (static_cast<Eigen::Index>(bus_index.size()) != n)
    invalid("bus index does not match the state dimension");
  if (baseline.rows() == 0) invalid("empty baseline");
  const bool constant = baseline.rows() == 1;
  const double rs = static_cast<double>(plan.r() * plan.s());

  std::map<std::size_t, Eigen::MatrixXd> per_input;
  for (const auto& run : runs) {
    if (run.x.cols() != n) invalid("perturbed run has a different state dimension");
    if (run.direction >= plan.r() || run.size >= plan.s())
      invalid("run tag outside the excitation plan");
    if (!constant && run.x.rows() > baseline.rows())
      invalid("perturbed run is longer than the baseline grid");
    const bool inst = opts.weighting == Weighting::InstantaneousOutput;
    if (inst && run.output.size() < run.x.rows())
      invalid("instantaneous weighting needs one output sample per state sample");

    auto [it, fresh] = per_input.try_emplace(run.input, Eigen::MatrixXd::Zero(n, n));
    Eigen::MatrixXd& acc = it->second;
    const double c = plan.sizes[run.size];
    const double floor = opts.output_floor * c;
    Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(n, n);
    // Left rectangle: samples 0..K-1 cover the K intervals of the run.
    for (Eigen::Index k = 0; k + 1 < run.x.rows(); ++k) {
      const Eigen::RowVectorXd dev =
          run.x.row(k) - (constant ? baseline.row(0) : baseline.row(k));
      double weight = 1.0 / (c * c);
      if (inst) {
        const double q = std::abs(run.output(k));
        if (!(q > floor)) continue;
        weight = 1.0 / (q * q);
      }
      psi.noalias() += weight * dev.transpose() * dev;
    }
    acc += psi * (dt / rs);
  }

  CovarianceMatrix out = CovarianceMatrix::zero(std::move(bus_index));
  for (auto& [input, w] : per_input) out.w += w;
  out.w = 0.5 * (out.w + out.w.transpose());
  return out;
}

CovarianceMatrix empirical_covariance(const Trajectory& baseline,
                                      const std::vector<TaggedTrajectory>& runs,
                                      const ExcitationPlan& plan,
                                      const SimConfig& cfg,
                                      const EccOptions& opts,
                                      const std::vector<int>& monitored,
                                      bool constant_baseline) {
  const auto cols = monitored_columns(baseline.bus_ids, monitored);
  const double tol = 1e-12 * cfg.dt;
  if (std::abs(baseline.dt - cfg.dt) > tol)
    invalid("baseline grid does not match the simulation config");

  Eigen::MatrixXd base = select_columns(baseline.v_mag, cols);
  if (constant_baseline) base = base.topRows(1).eval();

  std::vector<PerturbedRun> prepared;
  for (const auto& tag : runs) {
    if (!tag.traj) invalid("tagged trajectory is null");
    const Trajectory& t = *tag.traj;
    if (std::abs(t.dt - cfg.dt) > tol) invalid("perturbed run grid mismatch");
    if (t.bus_ids != baseline.bus_ids) invalid("perturbed run bus ordering mismatch");
    PerturbedRun r;
    r.input = tag.input;
    r.direction = tag.direction;
    r.size = tag.size;
    r.x = select_columns(t.v_mag, cols);
    if (opts.weighting == Weighting::InstantaneousOutput)
      r.output = svc_output_column(t, tag.output_bus);
    prepared.push_back(std::move(r));
  }
  return empirical_covariance(base, prepared, plan, cfg.dt,
                              select_ids(baseline.bus_ids, cols), opts);
}

SimulateFn network_simulator(Network net, DeviceSet devices, SimConfig cfg) {
  return [net = std::move(net), devices = std::move(devices),
          cfg](const std::optional<ContingencySpec>& c,
               const std::vector<InjectionSchedule>& s) {
    return simulate(net, devices, c, s, cfg);
  };
}

CandidateCovariance ecc_fault_specified(const SimulateFn& sim,
                                        const Network& net,
                                        const ContingencySpec& contingency,
                                        int candidate,
                                        const std::vector<double>& capacities,
                                        const SimConfig& cfg,
                                        const EccRunOptions& opts,
                                        const Trajectory* baseline) {
  const ExcitationPlan plan = ExcitationPlan::fault_specified(capacities);
  plan.validate();
  if (!net.has_bus(candidate)) invalid("unknown candidate bus " + std::to_string(candidate));

  Trajectory own_baseline;
  if (!baseline) {
    own_baseline = sim(contingency, {});
    baseline = &own_baseline;
  }
  require_converged(*baseline, "faulted baseline");

  CandidateCovariance out;
  out.candidate = candidate;
  std::vector<Trajectory> runs;
  runs.reserve(capacities.size());
  for (double q : capacities) {
    runs.push_back(sim(contingency, {InjectionSchedule::svc(make_svc(net, candidate, q))}));
    if (runs.back().diverged())
      out.flags.push_back("SVC " + mvar_label(q) + ": " + runs.back().message);
  }
  std::vector<TaggedTrajectory> tags;
  for (std::size_t m = 0; m < runs.size(); ++m)
    tags.push_back({0, 0, m, &runs[m], candidate});
  out.cov = empirical_covariance(*baseline, tags, plan, cfg, opts.ecc, opts.monitored,
                                 opts.baseline == FaultBaseline::PreFault);
  out.runs = runs.size();
  return out;
}

CandidateCovariance ecc_fault_unspecified(const SimulateFn& sim,
                                          const Network& net, int candidate,
                                          const std::vector<double>& sizes,
                                          double t1, double t2,
                                          const SimConfig& cfg,
                                          const EccRunOptions& opts,
                                          const Trajectory* baseline) {
  const ExcitationPlan plan = ExcitationPlan::fault_unspecified(sizes, t1, t2);
  plan.validate();
  if (!(t2 <= cfg.t_f)) invalid("pulse must end within the simulation horizon");
  if (!net.has_bus(candidate)) invalid("unknown candidate bus " + std::to_string(candidate));

  Trajectory own_baseline;
  if (!baseline) {
    own_baseline = sim(std::nullopt, {});
    baseline = &own_baseline;
  }
  require_converged(*baseline, "flat baseline");

  CandidateCovariance out;
  out.candidate = candidate;
  std::vector<Trajectory> runs;
  runs.reserve(sizes.size());
  for (double c : sizes) {
    // T^v = {-I}: a reactive-load reduction, i.e. an injection of +c.
    const double q = -plan.directions[0] * c;
    auto sched = InjectionSchedule::pulse(candidate, q, q, t1, t2);
    sched.capacity = c;
    runs.push_back(sim(std::nullopt, {sched}));
    if (runs.back().diverged())
      out.flags.push_back("pulse " + mvar_label(c) + ": " + runs.back().message);
  }
  std::vector<TaggedTrajectory> tags;
  for (std::size_t m = 0; m < runs.size(); ++m) tags.push_back({0, 0, m, &runs[m], candidate});
  EccOptions ecc = opts.ecc;
  ecc.weighting = Weighting::PlanSize;
  out.cov = empirical_covariance(*baseline, tags, plan, cfg, ecc, opts.monitored, true);
  out.runs = runs.size();
  return out;
}

CovarianceMatrix assemble(const std::vector<bool>& z,
                          const std::vector<CovarianceMatrix>& ws) {
  if (z.size() != ws.size())
    invalid("selection has " + std::to_string(z.size()) + " entries for " +
            std::to_string(ws.size()) + " covariances");
  if (ws.empty()) invalid("no covariances to assemble");
  CovarianceMatrix out = CovarianceMatrix::zero(ws.front().bus_index);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    if (ws[i].bus_index != out.bus_index || ws[i].w.rows() != out.w.rows())
      invalid("covariance " + std::to_string(i) + " uses a different bus index");
    if (z[i]) out.w += ws[i].w;
  }
  return out;
}

namespace {

std::filesystem::path cov_stem(const std::string& dir, int candidate) {
  return std::filesystem::path(dir) / ("cov_bus_" + std::to_string(candidate));
}

}  // namespace

void write_covariance(const std::string& dir, const CandidateCovariance& c,
                      const CovarianceKey& key, const std::string& provenance_json) {
  const auto stem = cov_stem(dir, c.candidate);
  std::ostringstream csv;
  for (std::size_t j = 0; j < c.cov.bus_index.size(); ++j)
    csv << (j ? "," : "") << "bus_" << c.cov.bus_index[j];
  csv << "\n";
  for (Eigen::Index i = 0; i < c.cov.w.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.cov.w.cols(); ++j)
      csv << (j ? "," : "") << format_double(c.cov.w(i, j));
    csv << "\n";
  }
  json side;
  side["candidate"] = c.candidate;
  side["bus_index"] = c.cov.bus_index;
  side["plan_hash"] = key.plan_hash;
  side["case_hash"] = key.case_hash;
  side["sim_hash"] = key.sim_hash;
  side["runs"] = c.runs;
  side["flags"] = c.flags;
  side["provenance"] = provenance_json.empty() ? json::object() : json::parse(provenance_json);
  write_file_atomic(stem.string() + ".csv", csv.str());
  write_file_atomic(stem.string() + ".json", side.dump(2) + "\n");
}

std::optional<CandidateCovariance> read_covariance(const std::string& dir,
                                                   int candidate,
                                                   const CovarianceKey& key) {
  const auto stem = cov_stem(dir, candidate);
  const std::string csv_path = stem.string() + ".csv";
  const std::string json_path = stem.string() + ".json";
  if (!std::filesystem::exists(csv_path) || !std::filesystem::exists(json_path))
    return std::nullopt;

  json side;
  try {
    side = json::parse(read_file(json_path));
  } catch (const json::exception& e) {
    throw IoError("corrupt covariance sidecar '" + json_path + "': " + e.what());
  }
  auto field = [&](const char* name) {
    return side.contains(name) && side[name].is_string() ? side[name].get<std::string>()
                                                         : std::string();
  };
  const char* which = nullptr;
  if (field("plan_hash") != key.plan_hash) which = "excitation plan";
  else if (field("case_hash") != key.case_hash) which = "case";
  else if (field("sim_hash") != key.sim_hash) which = "simulation config";
  if (which)
    throw CacheMismatchError("cached covariance '" + json_path + "' was built for a different " +
                             which + "; refusing to mix studies (rerun with --rebuild)");

  CandidateCovariance c;
  c.candidate = candidate;
  try {
    c.cov.bus_index = side.at("bus_index").get<std::vector<int>>();
    c.runs = side.value("runs", std::size_t{0});
    c.flags = side.value("flags", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw IoError("corrupt covariance sidecar '" + json_path + "': " + e.what());
  }

  const auto rows = read_csv(read_file(csv_path));
  const auto n = static_cast<Eigen::Index>(c.cov.bus_index.size());
  if (static_cast<Eigen::Index>(rows.size()) != n + 1)
    throw IoError("covariance '" + csv_path + "' has the wrong number of rows");
  c.cov.w.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i + 1)];
    if (static_cast<Eigen::Index>(row.size()) != n)
      throw IoError("covariance '" + csv_path + "' has a ragged row");
    for (Eigen::Index j = 0; j < n; ++j) {
      try {
        c.cov.w(i, j) = parse_double(row[static_cast<std::size_t>(j)]);
      } catch (const ValidationError&) {
        throw IoError("covariance '" + csv_path + "' has a non-numeric entry");
      }
    }
  }
  return c;
}

}  // namespace varplace
