#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "varplace/dynsim.hpp"
#include "varplace/ecc.hpp"
#include "varplace/gramian.hpp"
#include "varplace/io.hpp"
#include "varplace/placement.hpp"
#include "varplace/screening.hpp"
#include "varplace/study.hpp"
#include "varplace/vsi.hpp"

using namespace varplace;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fixture(const std::string& name) { return std::string(VARPLACE_FIXTURES) + "/" + name; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (int x : v) s += (s.empty() ? "" : " ") + std::to_string(x);
  return "{" + s + "}";
}

Eigen::MatrixXd random_psd(std::mt19937_64& rng, int n, int rank) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd f(n, rank);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < rank; ++j) f(i, j) = g(rng);
  return f * f.transpose();
}

LinearSystem random_hurwitz(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dn(1, 6), dv(1, 3);
  std::normal_distribution<double> g;
  const int n = dn(rng), v = dv(rng);
  LinearSystem s{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, v)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) s.a(i, j) = 0.5 * g(rng);
    for (int j = 0; j < v; ++j) s.b(i, j) = g(rng);
  }
  const Eigen::VectorXcd ev = s.a.eigenvalues();
  s.a -= (ev.real().maxCoeff() + 0.3 + 0.2 * std::abs(g(rng))) * Eigen::MatrixXd::Identity(n, n);
  return s;
}

std::vector<int> iota_ids(Eigen::Index n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i + 1);
  return ids;
}

Outcome gramian_oracle() {
  std::mt19937_64 rng(1);
  const double dt = 1e-3;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_hurwitz(rng);
    const double t_f = 10.0 * s.slowest_time_constant();
    std::vector<PerturbedRun> runs;
    for (Eigen::Index i = 0; i < s.inputs(); ++i)
      runs.push_back({static_cast<std::size_t>(i), 0, 0, linear_impulse_response(s, i, 1.0, dt, t_f), {}});
    const auto w = empirical_covariance(Eigen::MatrixXd::Zero(1, s.states()), runs,
                                        ExcitationPlan::impulse({1.0}), dt, iota_ids(s.states()));
    const Eigen::MatrixXd exact = analytic_gramian(s);
    worst = std::max(worst, (w.w - exact).norm() / exact.norm());
  }
  return {worst <= 1e-3, "worst relative Frobenius error " + fmt(worst)};
}

Outcome additivity() {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 5;
    const std::size_t inputs = 2 + static_cast<std::size_t>(trial % 3);
    const auto plan = ExcitationPlan::impulse({1.0, 2.0, 4.0});
    Eigen::MatrixXd base(60, n);
    for (Eigen::Index i = 0; i < base.size(); ++i) base.data()[i] = g(rng);
    std::vector<PerturbedRun> all;
    std::vector<std::vector<PerturbedRun>> each(inputs);
    for (std::size_t input = 0; input < inputs; ++input) {
      for (std::size_t m = 0; m < 3; ++m) {
        PerturbedRun r{input, 0, m, base, {}};
        for (Eigen::Index i = 0; i < r.x.size(); ++i) r.x.data()[i] += g(rng);
        all.push_back(r);
        each[input].push_back(r);
      }
    }
    const auto ids = iota_ids(n);
    const auto joint = empirical_covariance(base, all, plan, 0.01, ids);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
    for (const auto& runs : each) sum += empirical_covariance(base, runs, plan, 0.01, ids).w;
    worst = std::max(worst, (joint.w - sum).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "largest entrywise difference " + fmt(worst)};
}

PlacementProblem random_problem(std::mt19937_64& rng, std::size_t l, std::size_t v) {
  PlacementProblem p;
  p.v = v;
  for (std::size_t i = 0; i < l; ++i) {
    p.candidate_ids.push_back(static_cast<int>(i + 1));
    p.covariances.push_back({iota_ids(6), random_psd(rng, 6, 2)});
  }
  return p;
}

Outcome optimizer() {
  std::mt19937_64 rng(3);
  auto matches = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
  int big = 0, small = 0, greedy_better = 0;
  for (auto [l, v, count] : {std::tuple{12, 4, &big}, std::tuple{8, 3, &small}}) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = random_problem(rng, static_cast<std::size_t>(l), static_cast<std::size_t>(v));
      MadsConfig cfg;
      cfg.seed = static_cast<std::uint64_t>(trial + 1);
      const auto ex = solve_exhaustive(p);
      if (matches(solve_mads(p, cfg).objective, ex.objective)) ++*count;
      if (solve_greedy(p).objective < ex.objective - 1e-12) ++greedy_better;
    }
  }
  return {big >= 48 && small == 50 && greedy_better == 0,
          "L=12 v=4 " + std::to_string(big) + "/50, L=8 v=3 " + std::to_string(small) +
              "/50, greedy better than optimum " + std::to_string(greedy_better) + " times"};
}

Outcome cost_arithmetic() {
  const auto curve = parse_coverage_curve(read_file(fixture("coverage_ecc2.csv")));
  const auto opt = optimal_svc_count({1.0, 5.0}, curve, 40);
  std::map<std::size_t, double> at;
  for (const auto& p : opt.curve) at[p.n_svc] = p.cost;
  const bool ok = opt.n_svc == 25 && opt.cost == 230.0 && at[20] == 250.0 && at[25] == 230.0 &&
                  at[30] == 235.0;
  return {ok, "n*=" + std::to_string(opt.n_svc) + " C*=" + fmt(opt.cost) + " C(20)=" + fmt(at[20]) +
                  " C(30)=" + fmt(at[30])};
}

// Per v: does the ECC placement resolve the most severe contingency, and
// does the VSI1 top-v placement.
const std::map<std::size_t, std::pair<bool, bool>> kFixtureGolden{
    {1, {true, true}},  {2, {false, true}}, {3, {false, true}},
    {4, {true, true}},  {5, {true, true}},  {6, {true, true}}};

Outcome fidvr_end_to_end(const std::string& scratch) {
  StudyConfig cfg;
  cfg.case_path = fixture("fidvr9.case");
  cfg.out_dir = scratch + "/e2e";
  cfg.solver = Solver::Exhaustive;
  cfg.workers = 1;
  const Study st(cfg);
  const auto& k = st.chosen_contingency();
  const auto covs = st.covariances(true);
  const auto vsi = st.vsi(k.id);
  const std::size_t l = st.network().candidate_buses.size();

  std::string table;
  bool ecc_wins = false, tie_everywhere = true, golden = true;
  for (std::size_t v = 1; v <= l; ++v) {
    const auto ecc = st.place(covs, v).selected;
    std::vector<int> top(vsi.ranking.begin(), vsi.ranking.begin() + static_cast<long>(v));
    std::sort(top.begin(), top.end());
    const bool e = st.resolves(ecc, k.id, cfg.default_duration);
    const bool s = st.resolves(top, k.id, cfg.default_duration);
    ecc_wins = ecc_wins || (e && !s);
    tie_everywhere = tie_everywhere && e == s;
    golden = golden && kFixtureGolden.count(v) && kFixtureGolden.at(v) == std::pair{e, s};
    table += " v=" + std::to_string(v) + ":ECC" + join(ecc) + (e ? "+" : "-") + "/VSI" + join(top) +
             (s ? "+" : "-");
  }
  const std::string verdict = ecc_wins ? "ECC resolves where VSI1 does not"
                              : tie_everywhere ? "tie at every v"
                                               : "VSI1 resolves where ECC does not";
  return {golden && (ecc_wins || tie_everywhere),
          "contingency " + std::to_string(k.id) + " (" + k.label + "); " + verdict +
              (golden ? "; matches golden" : "; DIFFERS from golden") + ";" + table};
}

Outcome criteria_properties() {
  const double dt = 1.0 / 240.0, clear = 1.0 + 5.0 / 60.0;
  const std::vector<BusKind> kinds{BusKind::PQ, BusKind::PV};
  const Eigen::VectorXd v0 = Eigen::VectorXd::Ones(2);
  auto base = [] { return Eigen::MatrixXd::Ones(1441, 2); };
  auto check = [&](const Eigen::MatrixXd& v) {
    return check_criteria(v, v0, {}, kinds, clear, dt, 60.0);
  };
  auto k_at = [&](double t) { return static_cast<Eigen::Index>(std::lround(t / dt)); };
  std::vector<std::string> failed;

  const auto flat = check(base());
  if (flat.violated() || severity_index(flat) != 0.0) failed.push_back("flat");

  Eigen::MatrixXd a = base();
  a.block(k_at(clear), 0, 20, 1).setConstant(0.70);
  if (check(a).criteria != kTransientDip) failed.push_back("(a)");

  Eigen::MatrixXd b = base();
  b.block(k_at(clear), 0, 100, 1).setConstant(0.78);
  if (check(b).criteria != kSustainedDip) failed.push_back("(b)");

  Eigen::MatrixXd c = base();
  c.block(k_at(3.5), 0, 100, 1).setConstant(0.93);
  if (check(c).criteria != kPostTransient) failed.push_back("(c)");

  Eigen::MatrixXd edge = base();
  edge.block(k_at(1.5), 0, 80, 1).setConstant(0.78);
  if (check(edge).violated()) failed.push_back("20-cycle boundary");
  edge.block(k_at(1.5), 0, 81, 1).setConstant(0.78);
  if (check(edge).criteria != kSustainedDip) failed.push_back("20-cycle boundary + 1 step");

  std::string detail = "flat, (a), (b), (c) and the 80/81-sample boundary";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

Outcome simulation_invariants() {
  struct Loaded {
    Network net;
    DeviceSet devices;
    explicit Loaded(const std::string& name) : net(load_case_file(fixture(name))) {
      const auto pf = solve_power_flow(net);
      devices = default_devices(net);
      initialize_dynamics(net, pf, devices);
    }
  };
  double flat_dev = 0.0;
  for (const char* name : {"flat.case", "two_bus.case", "three_bus.case", "fidvr9.case"}) {
    const Loaded c(name);
    const auto t = simulate(c.net, c.devices, std::nullopt, {}, {});
    for (Eigen::Index k = 0; k < t.samples(); ++k)
      flat_dev = std::max(flat_dev, (t.v_mag.row(k) - t.v_mag.row(0)).cwiseAbs().maxCoeff());
  }

  const Loaded f("fidvr9.case");
  ContingencySpec fault;
  fault.fault_bus = 5;
  fault.faulted_branch = 5;
  auto run = [&](double dt) {
    SimConfig cfg;
    cfg.dt = dt;
    return simulate(f.net, f.devices, fault, {}, cfg);
  };
  const auto t1 = run(1.0 / 240.0), t2 = run(1.0 / 480.0), t3 = run(1.0 / 960.0);
  auto sup = [](const Trajectory& coarse, const Trajectory& fine) {
    double d = 0.0;
    for (Eigen::Index k = 0; k < coarse.samples(); ++k)
      d = std::max(d, (coarse.v_mag.row(k) - fine.v_mag.row(2 * k)).cwiseAbs().maxCoeff());
    return d;
  };
  const double ratio = sup(t1, t2) / sup(t2, t3);

  double excess = -1e300;
  for (double rating : {10.0, 40.0, 200.0}) {
    const auto t = simulate(f.net, f.devices, fault, {InjectionSchedule::svc(make_svc(f.net, 6, rating))}, {});
    excess = std::max(excess, t.svc_q.cwiseAbs().maxCoeff() - rating);
  }
  const bool ok = flat_dev <= 1e-6 && ratio >= 1.5 && ratio <= 2.5 && excess <= 1e-9;
  return {ok, "flat deviation " + fmt(flat_dev) + " pu; step-halving ratio " + fmt(ratio) +
                  " (required [1.5, 2.5]); max |Q| - rating " + fmt(excess) + " Mvar"};
}

std::map<std::string, std::string> snapshot(const std::string& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path().string());
  return files;
}

Outcome determinism(const std::string& scratch) {
  const std::vector<std::pair<std::string, json>> pipeline{
      {"powerflow", json::object()},
      {"simulate", {{"contingency", 10}}},
      {"screen", json::object()},
      {"ecc", json::object()},
      {"place", {{"compare_vsi", true}}},
      {"vsi", json::object()},
      {"coverage", json::object()},
      {"cost", {{"coverage_csv", fixture("coverage_ecc2.csv")}}},
  };
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* tag : {"run_a", "run_b"}) {
    const std::string out = scratch + "/" + tag;
    fs::remove_all(out);
    for (const auto& [command, args] : pipeline) {
      const json req{{"overrides", {{"case", fixture("fidvr9.case")}, {"out", out}, {"seed", 7}}},
                     {"args", args}};
      run_command(command, req.dump());
    }
    runs.push_back(snapshot(out));
  }
  std::vector<std::string> differing;
  for (const auto& [name, text] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != text) differing.push_back(name);
  }
  const bool ok = differing.empty() && runs[0].size() == runs[1].size() && !runs[0].empty();
  std::string detail = std::to_string(runs[0].size()) + " report files compared";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {ok, detail};
}

std::set<int> parse_ids(const std::string& text) {
  std::set<int> ids;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) ids.insert(std::stoi(item));
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"varplace acceptance criteria"};
  std::string expect_red, only;
  std::string scratch = (fs::temp_directory_path() / "varplace_acceptance").string();
  app.add_option("--expect-red", expect_red, "Comma-separated criteria known to fail");
  app.add_option("--only", only, "Comma-separated criteria to run");
  app.add_option("--scratch", scratch, "Directory for pipeline outputs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "linear gramian oracle", 30.0, gramian_oracle},
      {2, "additivity", 5.0, additivity},
      {3, "optimizer correctness", 60.0, optimizer},
      {4, "cost arithmetic", 1.0, cost_arithmetic},
      {5, "FIDVR fixture end-to-end", 300.0, [&] { return fidvr_end_to_end(scratch); }},
      {6, "criteria checker properties", 5.0, criteria_properties},
      {7, "simulation invariants", 60.0, simulation_invariants},
      {8, "determinism", 300.0, [&] { return determinism(scratch); }},
  };
  const auto selected = parse_ids(only);
  const auto expected = parse_ids(expect_red);

  std::set<int> red;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) red.insert(c.id);
    std::cout << "criterion " << c.id << " " << (pass ? "PASS" : "FAIL") << " [" << c.name << "] "
              << o.detail << " (" << fmt(secs, 3) << " s of " << fmt(c.budget_s, 3) << " s"
              << (in_time ? "" : ", over budget") << ")" << std::endl;
  }
  fs::remove_all(scratch);

  std::set<int> expected_here;
  for (int id : expected)
    if (selected.empty() || selected.count(id)) expected_here.insert(id);
  if (red == expected_here) {
    if (!red.empty()) std::cout << "known failures only: " << join({red.begin(), red.end()}) << std::endl;
    return 0;
  }
  std::cout << "unexpected outcome: failing " << join({red.begin(), red.end()}) << ", expected "
            << join({expected_here.begin(), expected_here.end()}) << std::endl;
  return 1;
}
