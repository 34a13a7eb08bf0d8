#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "varplace/varplace.h"

namespace {

std::string fixture(const std::string& name) { return std::string(VARPLACE_FIXTURES) + "/" + name; }

struct CaseHandle {
  vp_case* c = nullptr;
  ~CaseHandle() { vp_case_free(c); }
};

}  // namespace

TEST_CASE("version string is available") {
  CHECK(std::strlen(vp_version()) > 0);
}

TEST_CASE("load a case and solve its power flow") {
  CaseHandle h;
  REQUIRE(vp_case_load_file(fixture("two_bus.case").c_str(), &h.c) == VP_OK);
  CHECK(std::string(vp_last_error()).empty());
  REQUIRE(vp_case_bus_count(h.c) == 2);
  CHECK(vp_case_branch_count(h.c) == 1);

  int ids[4] = {0, 0, 0, 0};
  CHECK(vp_case_bus_ids(h.c, ids, 4) == 2);
  CHECK(ids[0] == 1);
  CHECK(ids[1] == 2);

  double v[2], a[2];
  int iterations = -1;
  CHECK(vp_powerflow(h.c, v, a, &iterations) == VP_OK);
  CHECK(v[1] == doctest::Approx(0.994936).epsilon(1e-6));
  CHECK(a[0] == 0.0);
  CHECK(iterations > 0);
  CHECK(vp_powerflow(h.c, nullptr, nullptr, nullptr) == VP_OK);
}

TEST_CASE("errors map to status codes with a message") {
  vp_case* c = reinterpret_cast<vp_case*>(1);
  CHECK(vp_case_load_file("/nonexistent/x.case", &c) == VP_ERR_IO);
  CHECK(c == nullptr);
  CHECK(std::string(vp_last_error()).size() > 0);

  CHECK(vp_case_load_text("[[bus]]\nid = 1\nkind = \"PQ\"\n", &c) == VP_ERR_VALIDATION);
  CHECK(vp_case_load_text(nullptr, &c) == VP_ERR_VALIDATION);
  CHECK(std::string(vp_last_error()).find("NULL") != std::string::npos);

  CaseHandle h;
  REQUIRE(vp_case_load_file(fixture("two_bus_overload.case").c_str(), &h.c) == VP_OK);
  CHECK(vp_powerflow(h.c, nullptr, nullptr, nullptr) == VP_ERR_CONVERGENCE);
  CHECK(vp_powerflow(nullptr, nullptr, nullptr, nullptr) == VP_ERR_VALIDATION);
  CHECK(vp_case_bus_count(nullptr) == 0);
}

TEST_CASE("total cost through the C interface") {
  const size_t counts[3] = {28, 27, 24};
  double cost = 0.0;
  CHECK(vp_total_cost(1.0, 5.0, counts, 3, 25, 40, &cost) == VP_OK);
  CHECK(cost == 230.0);
  CHECK(vp_total_cost(1.0, 5.0, counts, 3, 25, 20, &cost) == VP_ERR_VALIDATION);
  CHECK(vp_total_cost(1.0, 5.0, nullptr, 3, 25, 40, &cost) == VP_ERR_VALIDATION);
}

TEST_CASE("commands return JSON summaries") {
  const auto dir = std::filesystem::temp_directory_path() / "varplace_capi_out";
  const std::string req = std::string(R"({"overrides":{"case":")") + fixture("three_bus.case") +
                          R"(","out":")" + dir.string() + R"("}})";
  char* out = nullptr;
  REQUIRE(vp_command_run("powerflow", req.c_str(), &out) == VP_OK);
  REQUIRE(out != nullptr);
  CHECK(std::string(out).find("\"command\":\"powerflow\"") != std::string::npos);
  vp_string_free(out);

  out = nullptr;
  CHECK(vp_command_run("nope", req.c_str(), &out) == VP_ERR_VALIDATION);
  CHECK(out == nullptr);
  CHECK(vp_command_run("powerflow", "{bad", &out) == VP_ERR_VALIDATION);
  CHECK(vp_command_run(nullptr, req.c_str(), &out) == VP_ERR_VALIDATION);
  std::filesystem::remove_all(dir);
}
