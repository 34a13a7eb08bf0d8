#include "varplace/screening.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "varplace/error.hpp"
#include "varplace/io.hpp"
#include "varplace/parallel.hpp"

namespace varplace {

using nlohmann::json;

namespace {

std::vector<BusKind> bus_kinds(const Network& net) {
  std::vector<BusKind> kinds;
  for (const auto& b : net.buses) kinds.push_back(b.kind);
  return kinds;
}

struct RunVerdict {
  bool violated = false;
  std::string flag;
};

RunVerdict judge(const Trajectory& t, const Network& net, const CriteriaSpec& spec,
                 const std::string& what) {
  if (t.diverged()) return {true, what + ": " + std::string(to_string(t.status)) + " " + t.message};
  if (t.samples() == 0 || !t.clearing_time) return {true, what + ": empty trajectory"};
  const Eigen::VectorXd pre = t.v_mag.row(0).transpose();
  const auto res =
      check_criteria(t.v_mag, pre, spec, bus_kinds(net), *t.clearing_time, t.dt, net.frequency_hz);
  return {res.violated(), {}};
}

ContingencySpec with_duration(ContingencySpec s, double cycles) {
  s.fault_duration = cycles;
  return s;
}

void check_durations(const std::vector<double>& durations) {
  if (durations.empty()) throw ValidationError("at least one fault duration is required");
  for (double d : durations) {
    if (!(d > 0.0)) throw ValidationError("fault durations must be positive");
  }
}

}  // namespace

const ContingencyEntry& ContingencyList::find(int id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw ValidationError("unknown contingency id " + std::to_string(id));
}

std::vector<int> ContingencyList::ids() const {
  std::vector<int> out;
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

ContingencyList generate_n1(const Network& net, double duration_cycles) {
  ContingencyList list;
  int next = 1;
  for (const auto& br : net.branches) {
    if (!br.in_service) continue;
    const bool islands = !net.is_connected(br.id);
    for (int end : {br.from_bus, br.to_bus}) {
      ContingencyEntry e;
      e.id = next++;
      e.spec.fault_bus = end;
      e.spec.faulted_branch = br.id;
      e.spec.fault_duration = duration_cycles;
      e.label = "br" + std::to_string(br.id) + "@" + std::to_string(end);
      e.islanding = islands;
      list.entries.push_back(std::move(e));
    }
  }
  return list;
}

FidvrFilter fidvr_filter(const ContingencyList& list, const SimulateFn& sim, const Network& net,
                         const CriteriaSpec& spec, const std::vector<double>& durations,
                         unsigned workers) {
  check_durations(durations);
  const std::size_t nd = durations.size(), n = list.entries.size();
  std::vector<RunVerdict> verdicts(n * nd);
  parallel_for(n * nd, workers, [&](std::size_t job) {
    const auto& e = list.entries[job / nd];
    const double d = durations[job % nd];
    const Trajectory t = sim(with_duration(e.spec, d), {});
    verdicts[job] = judge(t, net, spec, "contingency " + std::to_string(e.id) + " at " +
                                            format_double(d) + " cycles");
  });

  FidvrFilter out;
  out.durations = durations;
  for (double d : durations) out.violating[d];
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t k = 0; k < nd; ++k) {
      const auto& v = verdicts[i * nd + k];
      if (!v.flag.empty()) out.flags.push_back(v.flag);
      if (v.violated) {
        out.violating[durations[k]].push_back(list.entries[i].id);
        any = true;
      }
    }
    if (any) out.kept.entries.push_back(list.entries[i]);
  }
  return out;
}

std::vector<std::size_t> CoverageReport::counts() const {
  std::vector<std::size_t> out;
  for (const auto& d : per_duration) out.push_back(d.addressed.size());
  return out;
}

CoverageReport coverage(const std::vector<int>& placement, const FidvrFilter& filter,
                        const SimulateFn& sim, const Network& net, const CriteriaSpec& spec,
                        unsigned workers) {
  std::set<int> unique(placement.begin(), placement.end());
  if (unique.size() != placement.size()) throw ValidationError("placement repeats a bus");
  for (int b : placement) {
    if (!std::binary_search(net.candidate_buses.begin(), net.candidate_buses.end(), b))
      throw ValidationError("placement bus " + std::to_string(b) + " is not a candidate");
  }
  std::vector<InjectionSchedule> svcs;
  for (int b : unique) svcs.push_back(InjectionSchedule::svc(make_svc(net, b)));

  struct Job {
    std::size_t duration;
    int id;
  };
  std::vector<Job> jobs;
  for (std::size_t k = 0; k < filter.durations.size(); ++k) {
    for (int id : filter.violating.at(filter.durations[k])) jobs.push_back({k, id});
  }
  std::vector<RunVerdict> verdicts(jobs.size());
  if (!svcs.empty()) {
    parallel_for(jobs.size(), workers, [&](std::size_t j) {
      const double d = filter.durations[jobs[j].duration];
      const auto& e = filter.kept.find(jobs[j].id);
      verdicts[j] = judge(sim(with_duration(e.spec, d), svcs), net, spec,
                          "contingency " + std::to_string(e.id) + " at " + format_double(d) +
                              " cycles with SVCs");
    });
  }

  CoverageReport r;
  r.placement.assign(unique.begin(), unique.end());
  r.n_cont_total = filter.kept.entries.size();
  for (double d : filter.durations) {
    DurationCoverage dc;
    dc.duration = d;
    dc.violating = filter.violating.at(d).size();
    r.per_duration.push_back(dc);
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (!verdicts[j].flag.empty()) r.flags.push_back(verdicts[j].flag);
    if (!svcs.empty() && !verdicts[j].violated)
      r.per_duration[jobs[j].duration].addressed.push_back(jobs[j].id);
  }
  return r;
}

void CostModel::validate() const {
  if (!(c_svc > 0.0) || !(c_fidvr > 0.0)) throw ValidationError("costs must be positive");
}

double total_cost(const CostModel& model, const std::vector<std::size_t>& counts,
                  std::size_t n_svc, std::size_t n_cont_total) {
  model.validate();
  std::size_t missed = 0;
  for (auto c : counts) {
    if (c > n_cont_total)
      throw ValidationError("addressed count " + std::to_string(c) + " exceeds total " +
                            std::to_string(n_cont_total));
    missed += n_cont_total - c;
  }
  return model.c_svc * static_cast<double>(n_svc) + model.c_fidvr * static_cast<double>(missed);
}

CoverageCurve parse_coverage_curve(const std::string& csv_text) {
  const auto rows = read_csv(csv_text);
  if (rows.empty()) throw ValidationError("coverage CSV is empty");
  const auto& head = rows.front();
  if (head.size() < 2 || head[0] != "n_svc")
    throw ValidationError("coverage CSV header must start with n_svc");
  CoverageCurve c;
  for (std::size_t i = 1; i < head.size(); ++i) {
    const std::string prefix = "cycles_";
    if (head[i].rfind(prefix, 0) != 0)
      throw ValidationError("coverage CSV column '" + head[i] + "' is not cycles_<d>");
    c.durations.push_back(parse_double(std::string_view(head[i]).substr(prefix.size())));
  }
  auto count = [](const std::string& s, std::size_t line) {
    double v = 0.0;
    try {
      v = parse_double(s);
    } catch (const ValidationError&) {
      throw ValidationError("coverage CSV line " + std::to_string(line) + ": bad number '" + s +
                            "'");
    }
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e15)
      throw ValidationError("coverage CSV line " + std::to_string(line) +
                            ": counts must be non-negative integers");
    return static_cast<std::size_t>(v);
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != head.size())
      throw ValidationError("coverage CSV line " + std::to_string(r + 1) + " has " +
                            std::to_string(rows[r].size()) + " fields, expected " +
                            std::to_string(head.size()));
    c.n_svc.push_back(count(rows[r][0], r + 1));
    std::vector<std::size_t> row;
    for (std::size_t i = 1; i < head.size(); ++i) row.push_back(count(rows[r][i], r + 1));
    c.counts.push_back(std::move(row));
  }
  return c;
}

CostOptimum optimal_svc_count(const CostModel& model, const CoverageCurve& curve,
                              std::size_t n_cont_total) {
  if (curve.n_svc.empty()) throw ValidationError("coverage curve is empty");
  CostOptimum o;
  bool first = true;
  for (std::size_t i = 0; i < curve.n_svc.size(); ++i) {
    const double c = total_cost(model, curve.counts[i], curve.n_svc[i], n_cont_total);
    o.curve.push_back({curve.n_svc[i], c});
    if (first || c < o.cost || (c == o.cost && curve.n_svc[i] < o.n_svc)) {
      o.n_svc = curve.n_svc[i];
      o.cost = c;
      first = false;
    }
  }
  return o;
}

std::string coverage_csv(const CoverageReport& r) {
  std::ostringstream os;
  os << "duration,n_svc,addressed,percentage\n";
  for (const auto& d : r.per_duration) {
    const double pct = r.n_cont_total ? 100.0 * static_cast<double>(d.addressed.size()) /
                                            static_cast<double>(r.n_cont_total)
                                      : 0.0;
    os << format_double(d.duration) << ',' << r.placement.size() << ',' << d.addressed.size()
       << ',' << format_double(pct) << '\n';
  }
  return os.str();
}

std::string coverage_json(const CoverageReport& r) {
  json j;
  j["placement"] = r.placement;
  j["n_cont_total"] = r.n_cont_total;
  j["flags"] = r.flags;
  json per = json::array();
  for (const auto& d : r.per_duration) {
    per.push_back({{"duration", d.duration},
                   {"violating", d.violating},
                   {"addressed", d.addressed},
                   {"n_cont", d.addressed.size()}});
  }
  j["per_duration"] = per;
  return j.dump(2);
}

std::string cost_csv(const CostOptimum& o) {
  std::ostringstream os;
  os << "n_svc,cost\n";
  for (const auto& p : o.curve) os << p.n_svc << ',' << format_double(p.cost) << '\n';
  return os.str();
}

std::string contingencies_csv(const ContingencyList& list) {
  std::ostringstream os;
  os << "id,label,branch,fault_bus,duration,islanding\n";
  for (const auto& e : list.entries) {
    os << e.id << ',' << e.label << ',' << e.spec.faulted_branch << ',' << e.spec.fault_bus << ','
       << format_double(e.spec.fault_duration) << ',' << (e.islanding ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace varplace
