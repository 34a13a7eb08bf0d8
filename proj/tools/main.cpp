#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "varplace/varplace.h"

namespace {

using nlohmann::json;

struct Options {
  std::string case_path;
  std::string config;
  std::string out;
  std::optional<unsigned> workers;
  std::optional<unsigned long long> seed;
  std::string mode;
  std::optional<std::size_t> svcs;
  std::string solver;
  std::string durations;
  std::string contingency;
  std::optional<double> duration;
  std::optional<double> c_fidvr;
  std::optional<double> c_svc;
  std::optional<std::size_t> n_cont;
  std::optional<std::size_t> vsi_top;
  std::string buses;
  std::string coverage_csv;
  bool compare_vsi = false;
  bool rebuild = false;
};

std::vector<double> parse_list(const std::string& s, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected a comma-separated number list, got '" + s + "'");
    }
  }
  return out;
}

std::vector<int> parse_ids(const std::string& s, const char* flag) {
  std::vector<int> out;
  for (double v : parse_list(s, flag)) {
    if (v != static_cast<int>(v)) throw CLI::ValidationError(flag, "bus ids must be integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

json build_request(const std::string& command, const Options& o) {
  json ov = json::object();
  if (!o.case_path.empty()) ov["case"] = o.case_path;
  if (!o.out.empty()) ov["out"] = o.out;
  if (o.workers) ov["workers"] = *o.workers;
  if (o.seed) ov["seed"] = *o.seed;
  if (!o.durations.empty()) ov["durations"] = parse_list(o.durations, "--durations");
  if (!o.mode.empty()) ov["ecc"]["mode"] = o.mode;
  if (!o.solver.empty()) ov["placement"]["solver"] = o.solver;
  if (o.svcs) ov["placement"]["svcs"] = *o.svcs;
  if (o.vsi_top) ov["vsi"]["n_cont"] = *o.vsi_top;
  if (o.c_fidvr) ov["cost"]["c_fidvr"] = *o.c_fidvr;
  if (o.c_svc) ov["cost"]["c_svc"] = *o.c_svc;
  if (o.n_cont) ov["cost"]["n_cont_total"] = *o.n_cont;

  json args = json::object();
  if (!o.contingency.empty()) {
    json id;
    if (o.contingency == "most_severe") {
      id = "most_severe";
    } else {
      try {
        std::size_t used = 0;
        id = std::stoi(o.contingency, &used);
        if (used != o.contingency.size()) throw std::invalid_argument(o.contingency);
      } catch (const std::exception&) {
        throw CLI::ValidationError("--contingency", "expected an id or most_severe");
      }
    }
    if (command == "simulate") {
      if (!id.is_number()) throw CLI::ValidationError("--contingency", "simulate needs an id");
      args["contingency"] = id;
    } else {
      ov["ecc"]["contingency"] = id;
    }
  }
  if (o.duration) args["duration"] = *o.duration;
  if (!o.buses.empty()) args["buses"] = parse_ids(o.buses, "--buses");
  if (!o.coverage_csv.empty()) args["coverage_csv"] = o.coverage_csv;
  if (o.compare_vsi) args["compare_vsi"] = true;
  if (o.rebuild) args["rebuild"] = true;
  return {{"config", o.config}, {"overrides", ov}, {"args", args}};
}

int exit_code(vp_status s) {
  switch (s) {
    case VP_OK:
      return 0;
    case VP_ERR_VALIDATION:
    case VP_ERR_IO:
      return 2;
    default:
      return 1;
  }
}

void common(CLI::App* sub, Options& o) {
  sub->add_option("--case", o.case_path, "Case file");
  sub->add_option("--config", o.config, "Study config (JSON)");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--workers", o.workers,
                  "Worker threads (default: VARPLACE_WORKERS, else 1)");
  sub->add_option("--seed", o.seed, "Seed for randomized search");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"varplace: SVC placement by empirical controllability covariance"};
  app.set_version_flag("--version", std::string(vp_version()));
  app.require_subcommand(1);
  Options o;

  auto* pf = app.add_subcommand("powerflow", "Solve the power flow");
  common(pf, o);

  auto* sim = app.add_subcommand("simulate", "Simulate one N-1 contingency (or none)");
  common(sim, o);
  sim->add_option("--contingency", o.contingency, "N-1 contingency id");
  sim->add_option("--duration", o.duration, "Fault duration, cycles");
  sim->add_option("--buses", o.buses, "Closed-loop SVC buses, comma-separated");

  auto* screen = app.add_subcommand("screen", "Run the N-1 FIDVR screen");
  common(screen, o);
  screen->add_option("--durations", o.durations, "Fault durations in cycles, e.g. 4,5,6");

  auto* ecc = app.add_subcommand("ecc", "Build per-candidate covariances");
  common(ecc, o);
  ecc->add_option("--mode", o.mode, "fault-specified or fault-unspecified");
  ecc->add_option("--contingency", o.contingency, "N-1 id or most_severe");
  ecc->add_flag("--rebuild", o.rebuild, "Ignore cached covariances");

  auto* place = app.add_subcommand("place", "Choose SVC buses");
  common(place, o);
  place->add_option("--mode", o.mode, "fault-specified or fault-unspecified");
  place->add_option("--contingency", o.contingency, "N-1 id or most_severe");
  place->add_option("--svcs", o.svcs, "Number of SVCs to place");
  place->add_option("--solver", o.solver, "exhaustive, greedy or mads");
  place->add_flag("--compare-vsi", o.compare_vsi, "Also rank by VSI and tabulate both");
  place->add_option("--vsi-top", o.vsi_top, "Contingencies weighted into VSI (0 = all)");
  place->add_flag("--rebuild", o.rebuild, "Ignore cached covariances");

  auto* vsi = app.add_subcommand("vsi", "Rank candidates by voltage sensitivity index");
  common(vsi, o);
  vsi->add_option("--vsi-top", o.vsi_top, "Contingencies weighted into VSI (0 = all)");

  auto* cov = app.add_subcommand("coverage", "Count contingencies addressed by a placement");
  common(cov, o);
  cov->add_option("--buses", o.buses, "SVC buses (default: placement.json in --out)");
  cov->add_option("--durations", o.durations, "Fault durations in cycles, e.g. 4,5,6");

  auto* cost = app.add_subcommand("cost", "Cost curve and optimal SVC count");
  common(cost, o);
  cost->add_option("--coverage-csv", o.coverage_csv, "Coverage curve: n_svc,cycles_<d>,...")
      ->required();
  cost->add_option("--c-fidvr", o.c_fidvr, "Cost per unaddressed contingency, in SVC units");
  cost->add_option("--c-svc", o.c_svc, "Cost per SVC");
  cost->add_option("--n-cont", o.n_cont, "Contingencies with FIDVR issues (default: max count)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  std::string request;
  try {
    request = build_request(command, o).dump();
  } catch (const CLI::ValidationError& e) {
    std::cerr << "varplace: error: " << e.what() << "\n";
    return 2;
  }
  char* result = nullptr;
  const vp_status st = vp_command_run(command.c_str(), request.c_str(), &result);
  if (st != VP_OK) {
    std::cerr << "varplace " << command << ": error: " << vp_last_error() << "\n";
    return exit_code(st);
  }
  std::cout << json::parse(result).dump(2) << "\n";
  vp_string_free(result);
  return 0;
}
