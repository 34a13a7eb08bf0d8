#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "support.hpp"
#include "varplace/error.hpp"
#include "varplace/placement.hpp"

using namespace varplace;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

// Laplace expansion along the first row.
double cofactor_det(const Eigen::MatrixXd& m) {
  const auto n = m.rows();
  if (n == 1) return m(0, 0);
  double det = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::MatrixXd minor(n - 1, n - 1);
    for (Eigen::Index r = 1; r < n; ++r)
      for (Eigen::Index c = 0, cc = 0; c < n; ++c)
        if (c != j) minor(r - 1, cc++) = m(r, c);
    det += ((j % 2) ? -1.0 : 1.0) * m(0, j) * cofactor_det(minor);
  }
  return det;
}

PlacementProblem make_problem(std::vector<Eigen::MatrixXd> ws, std::size_t v) {
  PlacementProblem p;
  p.v = v;
  std::vector<int> index;
  for (Eigen::Index i = 0; i < ws.front().rows(); ++i) index.push_back(static_cast<int>(i + 1));
  for (std::size_t i = 0; i < ws.size(); ++i) {
    p.candidate_ids.push_back(static_cast<int>(10 + i));
    p.covariances.push_back({index, std::move(ws[i])});
  }
  return p;
}

PlacementProblem random_problem(std::mt19937_64& rng, std::size_t l, std::size_t v, int n,
                                int rank) {
  std::vector<Eigen::MatrixXd> ws;
  for (std::size_t i = 0; i < l; ++i) ws.push_back(testing::random_psd(rng, n, rank));
  return make_problem(std::move(ws), v);
}

Eigen::MatrixXd outer(double a, double b, double scale) {
  Eigen::Vector2d u(a, b);
  return scale * u * u.transpose();
}

// Greedy takes the large diagonal direction first and can then only add
// half of either axis; the two axes together are better.
PlacementProblem anti_greedy() {
  return make_problem({outer(1, 1, 2.5), outer(1, 0, 4.0), outer(0, 1, 4.0)}, 2);
}

void check_swap_local(const PlacementProblem& p, const PlacementSolution& sol) {
  for (int a : sol.selected) {
    for (int b : p.candidate_ids) {
      if (std::count(sol.selected.begin(), sol.selected.end(), b)) continue;
      auto s = sol.selected;
      *std::find(s.begin(), s.end(), a) = b;
      std::sort(s.begin(), s.end());
      const double f = objective(s, p);
      if (std::isfinite(sol.objective)) CHECK(f >= sol.objective - 1e-12);
    }
  }
}

}  // namespace

TEST_CASE("objective of diagonal covariances") {
  auto p = make_problem({Eigen::Vector2d(1, 0).asDiagonal(), Eigen::Vector2d(0, 1).asDiagonal()}, 2);
  CHECK(objective({10, 11}, p) == doctest::Approx(0.0));
  CHECK(objective({10}, p) == kInf);
  CHECK(objective({}, p) == kInf);
  CHECK_THROWS_AS(objective({12}, p), ValidationError);
  CHECK_THROWS_AS(objective({10, 10}, p), ValidationError);

  auto q = make_problem({Eigen::MatrixXd::Identity(3, 3), 2.0 * Eigen::MatrixXd::Identity(3, 3)}, 1);
  CHECK(objective({10}, q) == doctest::Approx(0.0));
  CHECK(objective({11}, q) == doctest::Approx(-3.0 * std::log(2.0)));
}

TEST_CASE("objective matches a cofactor-expansion determinant") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_problem(rng, 2, 2, 4, 4);
    const double det = cofactor_det(p.covariances[0].w + p.covariances[1].w);
    CHECK(objective({10, 11}, p) == doctest::Approx(-std::log(det)).epsilon(1e-9));
  }
}

TEST_CASE("exhaustive search equals an independent enumeration") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_problem(rng, 6, 2, 4, 2);
    double best = kInf, best_det = 0.0;
    std::vector<int> arg;
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = i + 1; j < 6; ++j) {
        const Eigen::MatrixXd w = p.covariances[i].w + p.covariances[j].w;
        const double det = cofactor_det(w);
        if (det > best_det) {
          best_det = det;
          arg = {p.candidate_ids[i], p.candidate_ids[j]};
        }
        best = std::min(best, objective({p.candidate_ids[i], p.candidate_ids[j]}, p));
      }
    }
    const auto sol = solve_exhaustive(p);
    CHECK(sol.objective == doctest::Approx(best).epsilon(1e-12));
    CHECK(sol.objective == doctest::Approx(-std::log(best_det)).epsilon(1e-9));
    CHECK(sol.selected == arg);
    CHECK(sol.evaluations == 15);
  }
}

TEST_CASE("full and singleton selections") {
  std::mt19937_64 rng(29);
  auto p = random_problem(rng, 5, 5, 3, 1);
  Eigen::MatrixXd all = Eigen::MatrixXd::Zero(3, 3);
  for (const auto& c : p.covariances) all += c.w;
  for (const auto& sol : {solve_exhaustive(p), solve_greedy(p), solve_mads(p, {})}) {
    CHECK(sol.selected == p.candidate_ids);
    CHECK(sol.objective == doctest::Approx(neg_log_det(all)));
  }
  CHECK(solve_mads(p, {}).evaluations == 1);

  auto q = random_problem(rng, 5, 1, 2, 2);
  double best = kInf;
  for (int id : q.candidate_ids) best = std::min(best, objective({id}, q));
  CHECK(solve_exhaustive(q).objective == best);
}

TEST_CASE("exhaustive ties go to the smallest set") {
  auto p = make_problem({Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                         Eigen::MatrixXd::Identity(2, 2)},
                        2);
  CHECK(solve_exhaustive(p).selected == std::vector<int>{10, 11});
  p.v = 1;
  CHECK(solve_greedy(p).selected == std::vector<int>{10});
}

TEST_CASE("greedy builds a basis from rank-one covariances") {
  std::vector<Eigen::MatrixXd> ws;
  for (int i = 0; i < 4; ++i) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(4, 4);
    e(i, i) = 1.0 + i;
    ws.push_back(e);
  }
  const auto sol = solve_greedy(make_problem(ws, 4));
  CHECK(std::isfinite(sol.objective));
}

TEST_CASE("greedy is never better than the optimum") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = random_problem(rng, 8, 1 + trial % 4, 4, 2);
    CHECK(solve_greedy(p).objective >= solve_exhaustive(p).objective - 1e-12);
  }
}

TEST_CASE("direct search escapes a greedy trap") {
  const auto p = anti_greedy();
  const auto g = solve_greedy(p);
  const auto ex = solve_exhaustive(p);
  CHECK(g.selected == std::vector<int>{10, 11});
  CHECK(ex.selected == std::vector<int>{11, 12});
  CHECK(g.objective > ex.objective);
  const auto m = solve_mads(p, {});
  CHECK(m.objective < g.objective);
  CHECK(m.objective == doctest::Approx(ex.objective).epsilon(1e-12));
}

TEST_CASE("direct search matches exhaustive search on random instances") {
  std::mt19937_64 rng(2025);
  int matched = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_problem(rng, 12, 4, 6, 2);
    MadsConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(trial + 1);
    const auto m = solve_mads(p, cfg);
    const auto ex = solve_exhaustive(p);
    if (std::abs(m.objective - ex.objective) <= 1e-9 * std::max(1.0, std::abs(ex.objective)))
      ++matched;
    CHECK(m.selected.size() == 4);
    CHECK(m.objective == objective(m.selected, p));
    check_swap_local(p, m);
  }
  MESSAGE("matched ", matched, "/50");
  CHECK(matched >= 48);
}

TEST_CASE("direct search trace is monotone and reproducible") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_problem(rng, 10, 3, 5, 2);
    MadsConfig cfg;
    cfg.seed = 7;
    cfg.start = trial % 2 ? MadsStart::Random : MadsStart::Greedy;
    const auto a = solve_mads(p, cfg);
    const auto b = solve_mads(p, cfg);
    REQUIRE(a.trace.size() >= 2);
    for (std::size_t i = 1; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].objective <= a.trace[i - 1].objective);
      CHECK(a.trace[i].evaluations >= a.trace[i - 1].evaluations);
      CHECK(a.trace[i].selected.size() == p.v);
    }
    CHECK(a.selected == b.selected);
    CHECK(a.evaluations == b.evaluations);
    CHECK(placement_json(a, true) == placement_json(b, true));
    CHECK(a.evaluations <= cfg.max_evaluations);
  }
}

TEST_CASE("log-det minimum is the determinant maximum") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_problem(rng, 7, 3, 3, 3);
    const auto ex = solve_exhaustive(p);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3, 3);
    for (int id : ex.selected) w += p.covariances[static_cast<std::size_t>(id - 10)].w;
    const double best_det = w.determinant();
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = i + 1; j < 7; ++j)
        for (std::size_t k = j + 1; k < 7; ++k) {
          const Eigen::MatrixXd s = p.covariances[i].w + p.covariances[j].w + p.covariances[k].w;
          CHECK(s.determinant() <= best_det * (1.0 + 1e-12));
        }
  }
}

TEST_CASE("problem and configuration validation") {
  std::mt19937_64 rng(47);
  auto p = random_problem(rng, 4, 2, 3, 2);
  p.v = 0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p.v = 5;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p.v = 2;
  p.candidate_ids = {10, 12, 11, 13};
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p.candidate_ids = {10, 11, 12, 13};
  p.covariances[3].bus_index = {1, 2, 4};
  CHECK_THROWS_AS(p.validate(), ValidationError);

  MadsConfig cfg;
  cfg.max_evaluations = 3;
  CHECK_THROWS_AS(cfg.validate(4), ValidationError);
  cfg = {};
  cfg.vns_shake_sizes = {0};
  CHECK_THROWS_AS(cfg.validate(4), ValidationError);
  CHECK(parse_solver("mads") == Solver::Mads);
  CHECK_THROWS_AS(parse_solver("nomad"), ValidationError);

  auto big = random_problem(rng, 40, 20, 2, 1);
  CHECK_THROWS_WITH_AS(solve_exhaustive(big), doctest::Contains("mads"), ValidationError);
}
