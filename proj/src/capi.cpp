#include "varplace/varplace.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "varplace/error.hpp"
#include "varplace/io.hpp"
#include "varplace/netmodel.hpp"
#include "varplace/screening.hpp"
#include "varplace/study.hpp"

struct vp_case {
  varplace::Network net;
};

namespace {

thread_local std::string g_last_error;

template <class F>
vp_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return VP_OK;
  } catch (const varplace::ConvergenceError& e) {
    g_last_error = e.what();
    return VP_ERR_CONVERGENCE;
  } catch (const varplace::ValidationError& e) {
    g_last_error = e.what();
    return VP_ERR_VALIDATION;
  } catch (const varplace::IoError& e) {
    g_last_error = e.what();
    return VP_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return VP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VP_ERR_INTERNAL;
  }
}

vp_status null_arg(const char* name) {
  g_last_error = std::string(name) + " must not be NULL";
  return VP_ERR_VALIDATION;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* vp_version(void) { return VARPLACE_VERSION; }

const char* vp_last_error(void) { return g_last_error.c_str(); }

vp_status vp_case_load_file(const char* path, vp_case** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new vp_case{varplace::load_case_file(path)}; });
}

vp_status vp_case_load_text(const char* text, vp_case** out) {
  if (!text) return null_arg("text");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new vp_case{varplace::load_case(text)}; });
}

void vp_case_free(vp_case* c) { delete c; }

size_t vp_case_bus_count(const vp_case* c) { return c ? c->net.bus_count() : 0; }

size_t vp_case_branch_count(const vp_case* c) { return c ? c->net.branches.size() : 0; }

size_t vp_case_candidate_count(const vp_case* c) {
  return c ? c->net.candidate_buses.size() : 0;
}

size_t vp_case_bus_ids(const vp_case* c, int* ids, size_t n) {
  if (!c || !ids) return 0;
  size_t k = 0;
  for (; k < n && k < c->net.bus_count(); ++k) ids[k] = c->net.buses[k].id;
  return k;
}

vp_status vp_powerflow(const vp_case* c, double* v_mag, double* v_ang, int* iterations) {
  if (!c) return null_arg("case");
  return guarded([&] {
    const auto pf = varplace::solve_power_flow(c->net);
    for (Eigen::Index i = 0; i < pf.v_mag.size(); ++i) {
      if (v_mag) v_mag[i] = pf.v_mag(i);
      if (v_ang) v_ang[i] = pf.v_ang(i);
    }
    if (iterations) *iterations = pf.iterations;
  });
}

vp_status vp_total_cost(double c_svc, double c_fidvr, const size_t* counts, size_t k,
                        size_t n_svc, size_t n_total, double* out) {
  if (!out) return null_arg("out");
  if (k > 0 && !counts) return null_arg("counts");
  return guarded([&] {
    const std::vector<std::size_t> v(counts, counts + k);
    *out = varplace::total_cost({c_svc, c_fidvr}, v, n_svc, n_total);
  });
}

vp_status vp_command_run(const char* command, const char* request_json, char** result_json) {
  if (!command) return null_arg("command");
  if (!result_json) return null_arg("result_json");
  *result_json = nullptr;
  return guarded([&] {
    *result_json = copy_string(varplace::run_command(command, request_json ? request_json : ""));
  });
}

void vp_string_free(char* s) { std::free(s); }

}  // extern "C"
