#include "varplace/study.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "varplace/error.hpp"
#include "varplace/io.hpp"
#include "varplace/parallel.hpp"

namespace varplace {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw ValidationError(msg); }

json parse_json(const std::string& text, const std::string& what) {
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    invalid(what + " is not valid JSON: " + e.what());
  }
}

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) invalid(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
      invalid("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    invalid(where + "." + key + " has the wrong type");
  }
}

std::string integrator_name(Integrator i) { return i == Integrator::Rk4 ? "rk4" : "trapezoidal"; }

Integrator parse_integrator(const std::string& s) {
  if (s == "trapezoidal") return Integrator::Trapezoidal;
  if (s == "rk4") return Integrator::Rk4;
  invalid("unknown integrator '" + s + "' (trapezoidal, rk4)");
}

std::string report(json j) { return j.dump(2) + "\n"; }

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

std::vector<BusKind> kinds_of(const Network& net) {
  std::vector<BusKind> k;
  for (const auto& b : net.buses) k.push_back(b.kind);
  return k;
}

}  // namespace

std::string_view to_string(EccMode mode) {
  return mode == EccMode::FaultSpecified ? "fault-specified" : "fault-unspecified";
}

EccMode parse_ecc_mode(std::string_view name) {
  if (name == "fault-specified") return EccMode::FaultSpecified;
  if (name == "fault-unspecified") return EccMode::FaultUnspecified;
  invalid("unknown ECC mode '" + std::string(name) + "' (fault-specified, fault-unspecified)");
}

StudyConfig StudyConfig::from_json(const std::string& text, const std::string& base_dir) {
  const json j = parse_json(text, "study config");
  only_keys(j, "config", {"case", "out", "seed", "workers", "sim", "criteria", "durations",
                          "default_duration", "ecc", "placement", "vsi", "cost"});
  StudyConfig c;
  c.workers = default_workers();
  read(j, "case", c.case_path, "config");
  if (!c.case_path.empty() && !base_dir.empty() && fs::path(c.case_path).is_relative())
    c.case_path = (fs::path(base_dir) / c.case_path).lexically_normal().string();
  read(j, "out", c.out_dir, "config");
  read(j, "seed", c.seed, "config");
  read(j, "workers", c.workers, "config");
  read(j, "durations", c.durations, "config");
  read(j, "default_duration", c.default_duration, "config");

  if (j.contains("sim")) {
    const json& s = j["sim"];
    only_keys(s, "sim", {"dt", "t_f", "integrator", "fault_time"});
    read(s, "dt", c.sim.dt, "sim");
    read(s, "t_f", c.sim.t_f, "sim");
    read(s, "fault_time", c.sim.fault_time, "sim");
    std::string integ = integrator_name(c.sim.integrator);
    read(s, "integrator", integ, "sim");
    c.sim.integrator = parse_integrator(integ);
  }
  if (j.contains("criteria")) {
    const json& s = j["criteria"];
    only_keys(s, "criteria",
              {"load_dip_max", "gen_dip_max", "sustained_dip", "sustained_cycles",
               "post_transient_dev", "transient_window", "absolute_band", "band_low", "band_high"});
    auto& k = c.criteria;
    read(s, "load_dip_max", k.load_dip_max, "criteria");
    read(s, "gen_dip_max", k.gen_dip_max, "criteria");
    read(s, "sustained_dip", k.sustained_dip, "criteria");
    read(s, "sustained_cycles", k.sustained_cycles, "criteria");
    read(s, "post_transient_dev", k.post_transient_dev, "criteria");
    read(s, "transient_window", k.transient_window, "criteria");
    read(s, "absolute_band", k.absolute_band, "criteria");
    read(s, "band_low", k.band_low, "criteria");
    read(s, "band_high", k.band_high, "criteria");
  }
  if (j.contains("ecc")) {
    const json& s = j["ecc"];
    only_keys(s, "ecc",
              {"mode", "capacities", "t1", "t2", "contingency", "baseline", "weighting",
               "monitored"});
    std::string mode(to_string(c.mode));
    read(s, "mode", mode, "ecc");
    c.mode = parse_ecc_mode(mode);
    read(s, "capacities", c.capacities, "ecc");
    read(s, "t1", c.t1, "ecc");
    read(s, "t2", c.t2, "ecc");
    read(s, "monitored", c.monitored, "ecc");
    if (s.contains("contingency")) {
      const json& k = s["contingency"];
      if (k.is_string() && k.get<std::string>() == "most_severe") {
        c.contingency = {true, 0};
      } else if (k.is_number_integer()) {
        c.contingency = {false, k.get<int>()};
      } else {
        invalid("ecc.contingency must be an N-1 id or \"most_severe\"");
      }
    }
    if (s.contains("baseline")) {
      const std::string b = s["baseline"].is_string() ? s["baseline"].get<std::string>() : "";
      if (b == "faulted") c.baseline = FaultBaseline::FaultedRun;
      else if (b == "pre_fault") c.baseline = FaultBaseline::PreFault;
      else invalid("ecc.baseline must be \"faulted\" or \"pre_fault\"");
    }
    if (s.contains("weighting")) {
      const std::string w = s["weighting"].is_string() ? s["weighting"].get<std::string>() : "";
      if (w == "instantaneous") c.weighting = Weighting::InstantaneousOutput;
      else if (w == "plan_size") c.weighting = Weighting::PlanSize;
      else invalid("ecc.weighting must be \"instantaneous\" or \"plan_size\"");
    }
  }
  if (j.contains("placement")) {
    const json& s = j["placement"];
    only_keys(s, "placement",
              {"svcs", "solver", "initial_mesh", "max_evaluations", "vns_shake_sizes", "start"});
    read(s, "svcs", c.svcs, "placement");
    std::string solver(to_string(c.solver));
    read(s, "solver", solver, "placement");
    c.solver = parse_solver(solver);
    read(s, "initial_mesh", c.mads.initial_mesh, "placement");
    read(s, "max_evaluations", c.mads.max_evaluations, "placement");
    read(s, "vns_shake_sizes", c.mads.vns_shake_sizes, "placement");
    std::string start = c.mads.start == MadsStart::Greedy ? "greedy" : "random";
    read(s, "start", start, "placement");
    if (start == "greedy") c.mads.start = MadsStart::Greedy;
    else if (start == "random") c.mads.start = MadsStart::Random;
    else invalid("placement.start must be \"greedy\" or \"random\"");
  }
  if (j.contains("vsi")) {
    const json& s = j["vsi"];
    only_keys(s, "vsi", {"q_probe", "n_cont"});
    read(s, "q_probe", c.q_probe, "vsi");
    read(s, "n_cont", c.n_cont_vsi, "vsi");
  }
  if (j.contains("cost")) {
    const json& s = j["cost"];
    only_keys(s, "cost", {"c_svc", "c_fidvr", "n_cont_total"});
    read(s, "c_svc", c.cost.c_svc, "cost");
    read(s, "c_fidvr", c.cost.c_fidvr, "cost");
    if (s.contains("n_cont_total") && !s["n_cont_total"].is_null()) {
      std::size_t n = 0;
      read(s, "n_cont_total", n, "cost");
      c.n_cont_total = n;
    }
  }
  c.mads.seed = c.seed;
  c.mads.workers = c.workers;
  return c;
}

std::string StudyConfig::to_json() const {
  json j;
  j["case"] = case_path;
  j["out"] = out_dir;
  j["seed"] = seed;
  j["workers"] = workers;
  j["durations"] = durations;
  j["default_duration"] = default_duration;
  j["sim"] = {{"dt", sim.dt},
              {"t_f", sim.t_f},
              {"fault_time", sim.fault_time},
              {"integrator", integrator_name(sim.integrator)}};
  j["criteria"] = {{"load_dip_max", criteria.load_dip_max},
                   {"gen_dip_max", criteria.gen_dip_max},
                   {"sustained_dip", criteria.sustained_dip},
                   {"sustained_cycles", criteria.sustained_cycles},
                   {"post_transient_dev", criteria.post_transient_dev},
                   {"transient_window", criteria.transient_window},
                   {"absolute_band", criteria.absolute_band},
                   {"band_low", criteria.band_low},
                   {"band_high", criteria.band_high}};
  j["ecc"] = {{"mode", std::string(to_string(mode))},
              {"capacities", capacities},
              {"t1", t1},
              {"t2", t2},
              {"baseline", baseline == FaultBaseline::FaultedRun ? "faulted" : "pre_fault"},
              {"weighting",
               weighting == Weighting::InstantaneousOutput ? "instantaneous" : "plan_size"},
              {"monitored", monitored}};
  j["ecc"]["contingency"] =
      contingency.most_severe ? json("most_severe") : json(contingency.id);
  j["placement"] = {{"svcs", svcs},
                    {"solver", std::string(to_string(solver))},
                    {"initial_mesh", mads.initial_mesh},
                    {"max_evaluations", mads.max_evaluations},
                    {"vns_shake_sizes", mads.vns_shake_sizes},
                    {"start", mads.start == MadsStart::Greedy ? "greedy" : "random"}};
  j["vsi"] = {{"q_probe", q_probe}, {"n_cont", n_cont_vsi}};
  j["cost"] = {{"c_svc", cost.c_svc}, {"c_fidvr", cost.c_fidvr}};
  j["cost"]["n_cont_total"] = n_cont_total ? json(*n_cont_total) : json(nullptr);
  return j.dump();
}

void StudyConfig::validate() const {
  if (durations.empty()) invalid("durations must not be empty");
  for (double d : durations) {
    if (!(d > 0.0)) invalid("durations must be positive");
  }
  if (!(default_duration > 0.0)) invalid("default_duration must be positive");
  if (capacities.empty()) invalid("ecc.capacities must not be empty");
  for (double q : capacities) {
    if (!(q > 0.0)) invalid("ecc.capacities must be positive");
  }
  if (!(0.0 <= t1 && t1 < t2 && t2 <= sim.t_f)) invalid("ecc pulse needs 0 <= t1 < t2 <= t_f");
  if (svcs == 0) invalid("placement.svcs must be at least 1");
  if (!(q_probe > 0.0)) invalid("vsi.q_probe must be positive");
  cost.validate();
  criteria.validate(sim.t_f);
}

std::string StudyConfig::hash() const {
  json j = json::parse(to_json());
  j.erase("out");
  j.erase("workers");
  return hash_hex(j.dump());
}

StudyConfig load_study_config(const std::string& config_path, const std::string& overrides_json) {
  json base = json::object();
  std::string base_dir;
  if (!config_path.empty()) {
    base = parse_json(read_file(config_path), "config file '" + config_path + "'");
    base_dir = fs::path(config_path).parent_path().string();
    if (base.contains("case") && base["case"].is_string()) {
      const fs::path p(base["case"].get<std::string>());
      if (p.is_relative() && !base_dir.empty())
        base["case"] = (fs::path(base_dir) / p).lexically_normal().string();
    }
  }
  base.merge_patch(parse_json(overrides_json, "overrides"));
  return StudyConfig::from_json(base.dump());
}

Study::Study(StudyConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.case_path.empty()) invalid("no case file given (--case or \"case\" in the config)");
  cfg_.validate();
  case_text_ = read_file(cfg_.case_path);
  case_hash_ = hash_hex(case_text_);
  net_ = load_case(case_text_);
  cfg_.sim.validate(net_.frequency_hz);
  pf_ = solve_power_flow(net_);
  devices_ = default_devices(net_);
  initialize_dynamics(net_, pf_, devices_);
  sim_ = network_simulator(net_, devices_, cfg_.sim);
  list_ = generate_n1(net_, cfg_.default_duration);
}

SeverityReport Study::severity() const {
  if (severity_) return *severity_;
  const auto& list = list_;
  std::vector<Trajectory> trajs(list.entries.size());
  parallel_for(trajs.size(), cfg_.workers,
               [&](std::size_t i) { trajs[i] = sim_(list.entries[i].spec, {}); });
  severity_ = severity_rank(net_, pf_.v_mag, list.ids(), trajs, cfg_.criteria);
  return *severity_;
}

const ContingencyEntry& Study::chosen_contingency() const {
  const auto& list = list_;
  if (list.entries.empty()) invalid("the case has no N-1 contingencies");
  if (!cfg_.contingency.most_severe) return list.find(cfg_.contingency.id);
  return list.find(severity().ranking.front());
}

FidvrFilter Study::screen() const {
  return fidvr_filter(contingencies(), sim_, net_, cfg_.criteria, cfg_.durations, cfg_.workers);
}

CovarianceKey Study::covariance_key() const {
  json plan;
  plan["mode"] = std::string(to_string(cfg_.mode));
  plan["capacities"] = cfg_.capacities;
  plan["monitored"] = cfg_.monitored;
  if (cfg_.mode == EccMode::FaultSpecified) {
    const auto& e = chosen_contingency();
    plan["fault_bus"] = e.spec.fault_bus;
    plan["branch"] = e.spec.faulted_branch;
    plan["duration"] = e.spec.fault_duration;
    plan["baseline"] = cfg_.baseline == FaultBaseline::FaultedRun ? "faulted" : "pre_fault";
    plan["weighting"] =
        cfg_.weighting == Weighting::InstantaneousOutput ? "instantaneous" : "plan_size";
  } else {
    plan["t1"] = cfg_.t1;
    plan["t2"] = cfg_.t2;
  }
  const json sim = {{"dt", cfg_.sim.dt},
                    {"t_f", cfg_.sim.t_f},
                    {"fault_time", cfg_.sim.fault_time},
                    {"integrator", integrator_name(cfg_.sim.integrator)},
                    {"tol", cfg_.sim.network_solve_tol},
                    {"max_iter", cfg_.sim.max_network_iterations}};
  return {hash_hex(plan.dump()), case_hash_, hash_hex(sim.dump())};
}

std::vector<CandidateCovariance> Study::covariances(bool rebuild) const {
  const auto& cands = net_.candidate_buses;
  if (cands.empty()) invalid("the case lists no candidate buses");
  const std::string dir = (fs::path(cfg_.out_dir) / "covariances").string();
  const CovarianceKey key = covariance_key();
  std::vector<std::optional<CandidateCovariance>> cached(cands.size());
  if (!rebuild) {
    for (std::size_t i = 0; i < cands.size(); ++i) cached[i] = read_covariance(dir, cands[i], key);
  }

  EccRunOptions opts;
  opts.baseline = cfg_.baseline;
  opts.ecc.weighting = cfg_.weighting;
  opts.monitored = cfg_.monitored;
  const bool need = std::any_of(cached.begin(), cached.end(), [](auto& c) { return !c; });
  Trajectory baseline;
  std::optional<ContingencySpec> spec;
  if (need) {
    if (cfg_.mode == EccMode::FaultSpecified) {
      spec = chosen_contingency().spec;
      baseline = sim_(spec, {});
    } else {
      baseline = sim_(std::nullopt, {});
    }
  }

  std::vector<CandidateCovariance> out(cands.size());
  parallel_for(cands.size(), cfg_.workers, [&](std::size_t i) {
    if (cached[i]) {
      out[i] = std::move(*cached[i]);
      return;
    }
    out[i] = cfg_.mode == EccMode::FaultSpecified
                 ? ecc_fault_specified(sim_, net_, *spec, cands[i], cfg_.capacities, cfg_.sim,
                                       opts, &baseline)
                 : ecc_fault_unspecified(sim_, net_, cands[i], cfg_.capacities, cfg_.t1, cfg_.t2,
                                         cfg_.sim, opts, &baseline);
  });
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (!cached[i]) write_covariance(dir, out[i], key, provenance_json());
  }
  return out;
}

PlacementSolution Study::place(const std::vector<CandidateCovariance>& covs, std::size_t v) const {
  PlacementProblem p;
  for (const auto& c : covs) {
    p.candidate_ids.push_back(c.candidate);
    p.covariances.push_back(c.cov);
  }
  p.v = v;
  switch (cfg_.solver) {
    case Solver::Exhaustive:
      return solve_exhaustive(p);
    case Solver::Greedy:
      return solve_greedy(p);
    case Solver::Mads:
      break;
  }
  return solve_mads(p, cfg_.mads);
}

VsiResult Study::vsi(std::optional<int> only) const {
  const auto rep = severity();
  const auto& list = list_;
  std::vector<WeightedContingency> ks;
  if (only) {
    double si = 1.0;
    for (const auto& e : rep.entries) {
      if (e.contingency == *only && e.si > 0.0) si = e.si;
    }
    ks.push_back({*only, list.find(*only).spec, si});
  } else {
    for (int id : rep.ranking) {
      const auto it = std::find_if(rep.entries.begin(), rep.entries.end(),
                                   [&](const SeverityEntry& e) { return e.contingency == id; });
      if (it->si <= 0.0) break;
      if (cfg_.n_cont_vsi && ks.size() >= cfg_.n_cont_vsi) break;
      ks.push_back({id, list.find(id).spec, it->si});
    }
  }
  VsiOptions opts;
  opts.q_probe = cfg_.q_probe;
  opts.workers = cfg_.workers;
  return vsi_rank(sim_, ks, net_.candidate_buses, opts);
}

bool Study::resolves(const std::vector<int>& buses, int id, double duration) const {
  auto spec = contingencies().find(id).spec;
  spec.fault_duration = duration;
  std::vector<InjectionSchedule> svcs;
  for (int b : buses) svcs.push_back(InjectionSchedule::svc(make_svc(net_, b)));
  const Trajectory t = sim_(spec, svcs);
  if (t.diverged() || !t.clearing_time) return false;
  const auto res = check_criteria(t.v_mag, pf_.v_mag, cfg_.criteria, kinds_of(net_),
                                  *t.clearing_time, t.dt, net_.frequency_hz);
  return !res.violated();
}

std::string Study::provenance_json() const {
  const json p = {{"tool", "varplace"},
                  {"version", VARPLACE_VERSION},
                  {"config_hash", cfg_.hash()},
                  {"case_hash", case_hash_},
                  {"seed", cfg_.seed}};
  return p.dump();
}

namespace {

json provenance(const StudyConfig& cfg, const std::string& case_hash) {
  return {{"tool", "varplace"},
          {"version", VARPLACE_VERSION},
          {"config_hash", cfg.hash()},
          {"case_hash", case_hash},
          {"seed", cfg.seed}};
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
  return s;
}

json objective_json(double v) { return std::isfinite(v) ? json(v) : json("inf"); }

struct Request {
  StudyConfig cfg;
  json args;
};

Request parse_request(const std::string& request_json) {
  const json r = parse_json(request_json, "request");
  only_keys(r, "request", {"config", "overrides", "args"});
  std::string config_path;
  read(r, "config", config_path, "request");
  const json overrides = r.value("overrides", json::object());
  Request out{load_study_config(config_path, overrides.dump()), r.value("args", json::object())};
  if (!out.args.is_object()) invalid("request.args must be an object");
  return out;
}

template <class T>
T arg(const json& args, const char* key, T fallback) {
  if (!args.contains(key) || args[key].is_null()) return fallback;
  try {
    return args[key].get<T>();
  } catch (const json::exception&) {
    invalid(std::string("argument ") + key + " has the wrong type");
  }
}

json cmd_powerflow(const StudyConfig& cfg) {
  if (cfg.case_path.empty()) invalid("no case file given (--case or \"case\" in the config)");
  const std::string text = read_file(cfg.case_path);
  const Network net = load_case(text);
  const PowerFlowSolution pf = solve_power_flow(net);
  const fs::path out(cfg.out_dir);
  json buses = json::array();
  std::ostringstream csv;
  csv << "bus,kind,v_mag,v_ang_deg,p_inj,q_inj\n";
  for (std::size_t i = 0; i < net.bus_count(); ++i) {
    const double deg = pf.v_ang(static_cast<Eigen::Index>(i)) * 180.0 / M_PI;
    const auto k = static_cast<Eigen::Index>(i);
    buses.push_back({{"id", net.buses[i].id},
                     {"kind", std::string(to_string(net.buses[i].kind))},
                     {"v_mag", pf.v_mag(k)},
                     {"v_ang_deg", deg},
                     {"p_inj", pf.p_inj(k)},
                     {"q_inj", pf.q_inj(k)}});
    csv << net.buses[i].id << ',' << to_string(net.buses[i].kind) << ','
        << format_double(pf.v_mag(k)) << ',' << format_double(deg) << ','
        << format_double(pf.p_inj(k)) << ',' << format_double(pf.q_inj(k)) << '\n';
  }
  json rep = {{"converged", pf.converged},
              {"iterations", pf.iterations},
              {"max_mismatch", pf.max_mismatch},
              {"buses", buses},
              {"provenance", provenance(cfg, hash_hex(text))}};
  write_file_atomic(join(out, "powerflow.json"), report(rep));
  write_file_atomic(join(out, "powerflow.csv"), csv.str());
  return {{"iterations", pf.iterations},
          {"max_mismatch", pf.max_mismatch},
          {"files", {join(out, "powerflow.json"), join(out, "powerflow.csv")}}};
}

json cmd_simulate(const Study& st, const json& args) {
  const auto& cfg = st.config();
  std::optional<ContingencySpec> spec;
  const int id = arg<int>(args, "contingency", 0);
  if (id > 0) {
    spec = st.contingencies().find(id).spec;
    if (args.contains("duration") && !args["duration"].is_null())
      spec->fault_duration = arg<double>(args, "duration", spec->fault_duration);
  }
  std::vector<InjectionSchedule> svcs;
  for (int b : arg<std::vector<int>>(args, "buses", {}))
    svcs.push_back(InjectionSchedule::svc(make_svc(st.network(), b)));
  const Trajectory t = st.simulator()(spec, svcs);
  std::ostringstream csv;
  write_trajectory_csv(t, csv);
  const fs::path out(cfg.out_dir);
  json rep = {{"status", std::string(to_string(t.status))},
              {"samples", t.samples()},
              {"message", t.message},
              {"contingency", id > 0 ? json(id) : json(nullptr)},
              {"svc_buses", t.svc_buses},
              {"provenance", json::parse(st.provenance_json())}};
  write_file_atomic(join(out, "trajectory.csv"), csv.str());
  write_file_atomic(join(out, "simulate.json"), report(rep));
  if (t.diverged())
    throw ConvergenceError("simulation stopped at t = " + format_double(t.failure_time) + " s: " +
                               t.message,
                           0.0, 0);
  return {{"status", rep["status"]},
          {"files", {join(out, "trajectory.csv"), join(out, "simulate.json")}}};
}

json cmd_screen(const Study& st) {
  const auto& cfg = st.config();
  const auto& list = st.contingencies();
  const auto filter = st.screen();
  const auto sev = st.severity();
  json violating = json::object();
  for (const auto& [d, ids] : filter.violating) violating[format_double(d)] = ids;
  json rep = {{"n_contingencies", list.entries.size()},
              {"kept", filter.kept.ids()},
              {"violating", violating},
              {"most_severe", sev.ranking.empty() ? json(nullptr) : json(sev.ranking.front())},
              {"severity_ranking", sev.ranking},
              {"flags", filter.flags},
              {"provenance", json::parse(st.provenance_json())}};
  const fs::path out(cfg.out_dir);
  write_file_atomic(join(out, "contingencies.csv"), contingencies_csv(list));
  write_file_atomic(join(out, "severity.csv"), severity_csv(sev));
  write_file_atomic(join(out, "screen.json"), report(rep));
  return {{"kept", filter.kept.entries.size()},
          {"most_severe", rep["most_severe"]},
          {"files",
           {join(out, "contingencies.csv"), join(out, "severity.csv"), join(out, "screen.json")}}};
}

json cmd_ecc(const Study& st, const json& args) {
  const auto covs = st.covariances(arg<bool>(args, "rebuild", false));
  json cands = json::array();
  for (const auto& c : covs) {
    cands.push_back({{"candidate", c.candidate},
                     {"trace", c.cov.w.trace()},
                     {"runs", c.runs},
                     {"flags", c.flags}});
  }
  const auto key = st.covariance_key();
  json rep = {{"mode", std::string(to_string(st.config().mode))},
              {"candidates", cands},
              {"plan_hash", key.plan_hash},
              {"provenance", json::parse(st.provenance_json())}};
  if (st.config().mode == EccMode::FaultSpecified) rep["contingency"] = st.chosen_contingency().id;
  const fs::path out(st.config().out_dir);
  write_file_atomic(join(out, "ecc.json"), report(rep));
  return {{"candidates", covs.size()},
          {"files", {join(out, "ecc.json"), join(out, "covariances")}}};
}

json cmd_place(const Study& st, const json& args) {
  const auto& cfg = st.config();
  const auto covs = st.covariances(arg<bool>(args, "rebuild", false));
  if (cfg.svcs > covs.size())
    invalid("cannot place " + std::to_string(cfg.svcs) + " SVCs on " +
            std::to_string(covs.size()) + " candidates");
  const auto sol = st.place(covs, cfg.svcs);
  json rep = json::parse(placement_json(sol, true));
  rep["mode"] = std::string(to_string(cfg.mode));
  if (cfg.mode == EccMode::FaultSpecified) rep["contingency"] = st.chosen_contingency().id;
  rep["provenance"] = json::parse(st.provenance_json());
  const fs::path out(cfg.out_dir);
  std::vector<std::string> files{join(out, "placement.json")};
  if (arg<bool>(args, "compare_vsi", false)) {
    const auto v = st.vsi();
    std::ostringstream csv;
    csv << "v,ecc,ecc_objective,vsi\n";
    for (std::size_t k = 1; k <= cfg.svcs; ++k) {
      const auto s = k == cfg.svcs ? sol : st.place(covs, k);
      std::vector<int> top(v.ranking.begin(), v.ranking.begin() + static_cast<long>(k));
      std::sort(top.begin(), top.end());
      csv << k << ',' << join_ids(s.selected) << ','
          << (std::isfinite(s.objective) ? format_double(s.objective) : "inf") << ','
          << join_ids(top) << '\n';
    }
    write_file_atomic(join(out, "comparison.csv"), csv.str());
    write_file_atomic(join(out, "vsi.csv"), vsi_csv(v));
    files.push_back(join(out, "comparison.csv"));
    files.push_back(join(out, "vsi.csv"));
    rep["vsi_ranking"] = v.ranking;
  }
  write_file_atomic(join(out, "placement.json"), report(rep));
  return {{"selected", sol.selected}, {"objective", objective_json(sol.objective)},
          {"files", files}};
}

json cmd_vsi(const Study& st) {
  const auto v = st.vsi();
  json comps = json::array();
  for (const auto& c : v.components)
    comps.push_back({{"contingency", c.contingency}, {"si", c.si}, {"normalized", c.normalized}});
  json rep = {{"candidates", v.candidates},
              {"q_probe", v.q_probe},
              {"vsi", v.overall},
              {"ranking", v.ranking},
              {"degenerate", v.degenerate},
              {"components", comps},
              {"flags", v.flags},
              {"provenance", json::parse(st.provenance_json())}};
  const fs::path out(st.config().out_dir);
  write_file_atomic(join(out, "vsi.csv"), vsi_csv(v));
  write_file_atomic(join(out, "vsi.json"), report(rep));
  return {{"ranking", v.ranking}, {"files", {join(out, "vsi.csv"), join(out, "vsi.json")}}};
}

json cmd_coverage(const Study& st, const json& args) {
  const auto& cfg = st.config();
  const fs::path out(cfg.out_dir);
  std::vector<int> buses;
  if (args.contains("buses") && !args["buses"].is_null()) {
    buses = arg<std::vector<int>>(args, "buses", {});
  } else if (fs::exists(out / "placement.json")) {
    const json p = parse_json(read_file(join(out, "placement.json")), "placement.json");
    if (!p.contains("selected")) invalid("placement.json has no selected buses");
    buses = p["selected"].get<std::vector<int>>();
  } else {
    invalid("coverage needs --buses or a placement.json in the output directory");
  }
  const auto filter = st.screen();
  const auto r = coverage(buses, filter, st.simulator(), st.network(), cfg.criteria, cfg.workers);
  json rep = json::parse(coverage_json(r));
  rep["provenance"] = json::parse(st.provenance_json());
  write_file_atomic(join(out, "coverage.csv"), coverage_csv(r));
  write_file_atomic(join(out, "coverage.json"), report(rep));
  return {{"counts", r.counts()},
          {"n_cont_total", r.n_cont_total},
          {"files", {join(out, "coverage.csv"), join(out, "coverage.json")}}};
}

json cmd_cost(const StudyConfig& cfg, const json& args) {
  const std::string path = arg<std::string>(args, "coverage_csv", "");
  if (path.empty()) invalid("cost needs a coverage curve CSV (--coverage-csv)");
  const std::string text = read_file(path);
  const CoverageCurve curve = parse_coverage_curve(text);
  std::size_t total = 0;
  if (cfg.n_cont_total) {
    total = *cfg.n_cont_total;
  } else {
    for (const auto& row : curve.counts) {
      for (auto c : row) total = std::max(total, c);
    }
  }
  const auto o = optimal_svc_count(cfg.cost, curve, total);
  json rep = {{"optimal_n_svc", o.n_svc},
              {"optimal_cost", o.cost},
              {"n_cont_total", total},
              {"durations", curve.durations},
              {"c_svc", cfg.cost.c_svc},
              {"c_fidvr", cfg.cost.c_fidvr},
              {"provenance", provenance(cfg, hash_hex(text))}};
  const fs::path out(cfg.out_dir);
  write_file_atomic(join(out, "cost.csv"), cost_csv(o));
  write_file_atomic(join(out, "cost.json"), report(rep));
  return {{"optimal_n_svc", o.n_svc},
          {"optimal_cost", o.cost},
          {"files", {join(out, "cost.csv"), join(out, "cost.json")}}};
}

}  // namespace

std::string run_command(const std::string& command, const std::string& request_json) {
  const Request req = parse_request(request_json);
  json result;
  if (command == "powerflow") {
    result = cmd_powerflow(req.cfg);
  } else if (command == "cost") {
    req.cfg.cost.validate();
    result = cmd_cost(req.cfg, req.args);
  } else {
    static const std::set<std::string> known{"simulate", "screen", "ecc", "place", "vsi",
                                             "coverage"};
    if (!known.count(command)) invalid("unknown command '" + command + "'");
    const Study st(req.cfg);
    if (command == "simulate") result = cmd_simulate(st, req.args);
    else if (command == "screen") result = cmd_screen(st);
    else if (command == "ecc") result = cmd_ecc(st, req.args);
    else if (command == "place") result = cmd_place(st, req.args);
    else if (command == "vsi") result = cmd_vsi(st);
    else result = cmd_coverage(st, req.args);
  }
  result["command"] = command;
  return result.dump();
}

}  // namespace varplace
