#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "support.hpp"
#include "varplace/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kOut = fs::temp_directory_path() / "varplace_cli_test";

// Runs the CLI with stdout and stderr captured; returns the exit status.
int cli(const std::string& args, std::string* output = nullptr) {
  fs::create_directories(kOut);
  const std::string log = (kOut / "log.txt").string();
  const std::string cmd = std::string(VARPLACE_CLI) + " " + args + " > " + log + " 2>&1";
  const int raw = std::system(cmd.c_str());
  if (output) *output = varplace::read_file(log);
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string with_case(const std::string& command, const std::string& name) {
  return command + " --case " + testing::fixture(name) + " --out " + (kOut / "run").string();
}

}  // namespace

TEST_CASE("successful commands exit 0 and print JSON") {
  std::string out;
  CHECK(cli(with_case("powerflow", "fidvr9.case"), &out) == 0);
  CHECK(out.find("\"command\"") != std::string::npos);
  CHECK(fs::exists(kOut / "run" / "powerflow.csv"));
  CHECK(cli("--help") == 0);
}

TEST_CASE("cost command on a coverage curve") {
  std::string out;
  CHECK(cli("cost --coverage-csv " + testing::fixture("coverage_ecc2.csv") +
                " --n-cont 40 --out " + (kOut / "run").string(),
            &out) == 0);
  CHECK(out.find("230") != std::string::npos);
}

TEST_CASE("validation and IO errors exit 2") {
  CHECK(cli(with_case("powerflow", "missing.case")) == 2);
  CHECK(cli(with_case("place", "fidvr9.case") + " --svcs 9") == 2);
  CHECK(cli("powerflow --no-such-flag") == 2);
  CHECK(cli("bogus") == 2);
  CHECK(cli("cost --coverage-csv " + testing::fixture("coverage_ecc2.csv") + " --c-fidvr -1") == 2);
}

TEST_CASE("convergence failures exit 1") {
  std::string out;
  CHECK(cli(with_case("powerflow", "two_bus_overload.case"), &out) == 1);
  CHECK(out.find("error") != std::string::npos);
  fs::remove_all(kOut);
}
