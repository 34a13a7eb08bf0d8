#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "varplace/error.hpp"
#include "varplace/vsi.hpp"

using namespace varplace;
using testing::Loaded;

namespace {

constexpr double kDt = 1.0 / 240.0;
constexpr double kFreq = 60.0;
constexpr double kClear = 1.0 + 5.0 / 60.0;

struct Scenario {
  Eigen::MatrixXd v;
  Eigen::VectorXd v0;
  std::vector<BusKind> kinds;

  Scenario(std::vector<BusKind> k, double t_f = 6.0)
      : v(Eigen::MatrixXd::Ones(std::lround(t_f / kDt) + 1, static_cast<Eigen::Index>(k.size()))),
        v0(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k.size()))),
        kinds(std::move(k)) {}

  Eigen::Index at(double t) const { return std::lround(t / kDt); }
  // Holds bus j at `value` for `count` samples starting at time t.
  void hold(Eigen::Index j, double t, Eigen::Index count, double value) {
    v.block(at(t), j, count, 1).setConstant(value);
  }
  CriteriaResult check(const CriteriaSpec& spec = {}) const {
    return check_criteria(v, v0, spec, kinds, kClear, kDt, kFreq);
  }
};

const std::vector<BusKind> kLoadAndGen{BusKind::PQ, BusKind::PV};

ContingencySpec fault_ten() {
  ContingencySpec c;
  c.fault_bus = 5;
  c.faulted_branch = 5;
  c.fault_duration = 5.0;
  return c;
}

}  // namespace

TEST_CASE("deviation ratio") {
  Eigen::MatrixXd v(1, 3);
  v << 0.9, 1.05, 1.0;
  const Eigen::VectorXd v0 = Eigen::VectorXd::Ones(3);
  const Eigen::MatrixXd r = deviation_ratio(v, v0);
  CHECK(r(0, 0) == doctest::Approx(0.10));
  CHECK(r(0, 1) == doctest::Approx(0.05));
  CHECK(r(0, 2) == 0.0);
  CHECK(deviation_ratio(Eigen::MatrixXd::Constant(4, 3, 1.0), v0).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(deviation_ratio(v, Eigen::Vector3d(1.0, 0.0, 1.0)), ValidationError);
}

TEST_CASE("flat trajectories raise no flags") {
  const Scenario s(kLoadAndGen);
  const auto r = s.check();
  CHECK_FALSE(r.violated());
  CHECK(r.flags.cwiseAbs().maxCoeff() == 0);
  CHECK(severity_index(r) == 0.0);
}

TEST_CASE("each criterion triggers in isolation") {
  SUBCASE("deep short dip at a load bus") {
    Scenario s(kLoadAndGen);
    s.hold(0, kClear, 20, 0.70);
    CHECK(s.check().criteria == kTransientDip);
  }
  SUBCASE("moderate long dip at a load bus") {
    Scenario s(kLoadAndGen);
    s.hold(0, kClear, 100, 0.78);
    CHECK(s.check().criteria == kSustainedDip);
  }
  SUBCASE("small deviation after the transient window") {
    Scenario s(kLoadAndGen);
    s.hold(0, 3.5, 100, 0.93);
    CHECK(s.check().criteria == kPostTransient);
  }
  SUBCASE("generator buses tolerate a deeper dip and are not held to the sustained limit") {
    Scenario s(kLoadAndGen);
    s.hold(1, kClear, 200, 0.72);
    CHECK_FALSE(s.check().violated());
    s.hold(1, kClear, 10, 0.69);
    CHECK(s.check().criteria == kTransientDip);
  }
  SUBCASE("dips before clearing are ignored") {
    Scenario s(kLoadAndGen);
    s.hold(0, 1.0, 20, 0.0);
    CHECK_FALSE(s.check().violated());
  }
  SUBCASE("a 21 percent dip for 10 cycles is tolerated") {
    Scenario s(kLoadAndGen);
    s.hold(0, kClear, 40, 0.79);
    CHECK_FALSE(s.check().violated());
  }
}

TEST_CASE("sustained dip boundary is strict") {
  // 20 cycles at 240 samples per second is 80 samples.
  Scenario exact(kLoadAndGen);
  exact.hold(0, 1.5, 80, 0.78);
  CHECK_FALSE(exact.check().violated());

  Scenario longer(kLoadAndGen);
  longer.hold(0, 1.5, 81, 0.78);
  const auto r = longer.check();
  CHECK(r.criteria == kSustainedDip);
  CHECK((r.flags.col(0).array() != 0).count() == 81);
}

TEST_CASE("severity index by hand") {
  Scenario s({BusKind::PQ, BusKind::PQ, BusKind::PQ, BusKind::PQ});
  const auto total = s.v.rows() - 1;  // 1440 steps over 6 s
  s.hold(1, 0.0, s.v.rows(), 1.0);
  s.v.block(total / 2 + 1, 2, total / 2, 1).setConstant(0.9);
  const auto r = s.check();
  CHECK(r.criteria == kPostTransient);
  CHECK(severity_index(r) == doctest::Approx(0.0125).epsilon(1e-12));
}

TEST_CASE("severity is non-negative and zero exactly without violations") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.6, 1.1);
  for (int trial = 0; trial < 30; ++trial) {
    Scenario s(kLoadAndGen);
    for (int m = 0; m < 3; ++m)
      s.hold(static_cast<Eigen::Index>(rng() % 2), 1.1 + 4.0 * u(rng) - 2.4, 1 + rng() % 200, u(rng));
    const auto r = s.check();
    const double si = severity_index(r);
    CHECK(si >= 0.0);
    CHECK((si == 0.0) == !r.violated());
  }
}

TEST_CASE("nested violations rank the superset first") {
  const Loaded c("fidvr9.case");
  Trajectory small;
  small.dt = kDt;
  small.t_f = 6.0;
  small.clearing_time = kClear;
  small.v_mag = Eigen::MatrixXd(1441, static_cast<Eigen::Index>(c.net.bus_count()));
  for (Eigen::Index k = 0; k < small.v_mag.rows(); ++k) small.v_mag.row(k) = c.pf.v_mag.transpose();
  Trajectory large = small;
  const auto j6 = static_cast<Eigen::Index>(c.net.index_of(6));
  const auto j8 = static_cast<Eigen::Index>(c.net.index_of(8));
  small.v_mag.block(900, j6, 200, 1) *= 0.9;
  large.v_mag.block(900, j6, 200, 1) *= 0.9;
  large.v_mag.block(900, j8, 200, 1) *= 0.9;
  const auto rep = severity_rank(c.net, c.pf.v_mag, {1, 2}, {small, large}, {});
  CHECK(rep.ranking == std::vector<int>{2, 1});
  CHECK(rep.entries[1].si > rep.entries[0].si);
  CHECK(rep.entries[0].criteria == kPostTransient);
}

TEST_CASE("all-flat contingencies give zero severity") {
  const Loaded c("fidvr9.case");
  Trajectory t;
  t.dt = kDt;
  t.clearing_time = kClear;
  t.v_mag = c.pf.v_mag.transpose().replicate(1441, 1);
  const auto rep = severity_rank(c.net, c.pf.v_mag, {3, 1}, {t, t}, {});
  CHECK(rep.entries[0].si == 0.0);
  CHECK(rep.entries[1].si == 0.0);
  CHECK(rep.ranking == std::vector<int>{1, 3});
}

TEST_CASE("probe without effect gives a degenerate index") {
  const Loaded c("fidvr9.case");
  const auto real = network_simulator(c.net, c.devices, {});
  const Trajectory base = real(fault_ten(), {});
  SimulateFn stub = [&](const std::optional<ContingencySpec>&,
                        const std::vector<InjectionSchedule>&) { return base; };
  const auto r = vsi_rank(stub, {{10, fault_ten(), 0.01}}, {9, 4, 6}, {});
  CHECK(r.degenerate);
  CHECK(r.ranking == std::vector<int>{4, 6, 9});
  for (double v : r.overall) CHECK(v == 0.0);
}

TEST_CASE("a dominating candidate normalizes to one") {
  const Loaded c("fidvr9.case");
  const auto real = network_simulator(c.net, c.devices, {});
  const Trajectory base = real(fault_ten(), {});
  SimulateFn stub = [&](const std::optional<ContingencySpec>&,
                        const std::vector<InjectionSchedule>& s) {
    Trajectory t = base;
    if (!s.empty()) t.v_mag.array() += s.front().bus == 7 ? 0.02 : 0.005;
    return t;
  };
  const auto r = vsi_rank(stub, {{10, fault_ten(), 1.0}}, {4, 7, 9}, {});
  CHECK_FALSE(r.degenerate);
  CHECK(r.components[0].normalized[1] == 1.0);
  CHECK(r.components[0].normalized[0] == doctest::Approx(0.25));
  CHECK(r.ranking.front() == 7);
}

TEST_CASE("golden VSI ranking on the FIDVR fixture") {
  const Loaded c("fidvr9.case");
  const auto sim = network_simulator(c.net, c.devices, {});
  const auto full = vsi_rank(sim, {{10, fault_ten(), 0.01227}}, c.net.candidate_buses, {});
  CHECK(full.ranking == std::vector<int>{6, 4, 9, 7, 5, 8});
  CHECK_FALSE(full.degenerate);
  double top = 0.0;
  for (double v : full.components[0].normalized) top = std::max(top, v);
  CHECK(top == doctest::Approx(1.0).epsilon(1e-12));

  VsiOptions half;
  half.q_probe = 12.5;
  const auto small = vsi_rank(sim, {{10, fault_ten(), 0.01227}}, c.net.candidate_buses, half);
  const Eigen::MatrixXd& a = full.components[0].pair;
  const Eigen::MatrixXd& b = small.components[0].pair;
  const double scale = a.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (std::abs(a(i, j)) > 0.01 * scale) CHECK(std::abs(b(i, j) - a(i, j)) <= 0.25 * std::abs(a(i, j)));
}

TEST_CASE("criteria and probe validation") {
  CriteriaSpec spec;
  spec.transient_window = 7.0;
  CHECK_THROWS_AS(spec.validate(6.0), ValidationError);
  spec = {};
  spec.load_dip_max = 1.2;
  CHECK_THROWS_AS(spec.validate(6.0), ValidationError);
  const Scenario s(kLoadAndGen);
  CHECK_THROWS_AS(check_criteria(s.v, s.v0, {}, {BusKind::PQ}, kClear, kDt, kFreq), ValidationError);
  CHECK_THROWS_AS(check_criteria(s.v, s.v0, {}, s.kinds, 3.5, kDt, kFreq), ValidationError);
  SimulateFn none = [](const std::optional<ContingencySpec>&, const std::vector<InjectionSchedule>&) {
    return Trajectory{};
  };
  VsiOptions bad;
  bad.q_probe = 0.0;
  CHECK_THROWS_AS(vsi_rank(none, {}, {1}, bad), ValidationError);
}
