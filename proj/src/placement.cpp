#include "varplace/placement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "varplace/error.hpp"
#include "varplace/parallel.hpp"

namespace varplace {

namespace {

using Selection = std::vector<std::size_t>;  // sorted candidate indices
constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void invalid(const std::string& msg) { throw ValidationError(msg); }

struct Score {
  double value = kInf;
  Eigen::Index rank = 0;
  double pseudo_log_det = -kInf;
};

Score score_matrix(const Eigen::MatrixXd& w) {
  Score s;
  if (w.rows() == 0) return s;
  const Eigen::MatrixXd sym = 0.5 * (w + w.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lmax = lam.maxCoeff();
  if (!(lmax > 0.0) || !std::isfinite(lmax)) return s;
  const double floor = kSingularFloor * lmax;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam(i) > floor) {
      ++s.rank;
      sum += std::log(lam(i));
    }
  }
  s.pseudo_log_det = sum;
  if (s.rank == lam.size()) s.value = -sum;
  return s;
}

// Strictly better by value; among equal values (both singular included),
// higher rank and then larger pseudo-determinant.
bool better(const Score& a, const Score& b) {
  if (a.value != b.value) return a.value < b.value;
  if (a.rank != b.rank) return a.rank > b.rank;
  return a.pseudo_log_det > b.pseudo_log_det;
}

class Evaluator {
 public:
  Evaluator(const PlacementProblem& p, unsigned workers) : p_(p), workers_(workers) {}

  Score operator()(const Selection& s) {
    auto it = memo_.find(s);
    if (it != memo_.end()) return it->second;
    return memo_.emplace(s, compute(s)).first->second;
  }

  // Scores a batch, computing unseen selections concurrently.
  std::vector<Score> batch(const std::vector<Selection>& sels) {
    std::vector<Selection> fresh;
    for (const auto& s : sels) {
      if (!memo_.count(s) && std::find(fresh.begin(), fresh.end(), s) == fresh.end())
        fresh.push_back(s);
    }
    std::vector<Score> computed(fresh.size());
    parallel_for(fresh.size(), workers_, [&](std::size_t i) { computed[i] = compute(fresh[i]); });
    for (std::size_t i = 0; i < fresh.size(); ++i) memo_.emplace(fresh[i], computed[i]);
    std::vector<Score> out;
    for (const auto& s : sels) out.push_back(memo_.at(s));
    return out;
  }

  bool known(const Selection& s) const { return memo_.count(s) != 0; }
  std::size_t count() const { return memo_.size(); }

 private:
  Score compute(const Selection& s) const {
    if (s.empty()) return {};
    Eigen::MatrixXd w = p_.covariances[s.front()].w;
    for (std::size_t k = 1; k < s.size(); ++k) w += p_.covariances[s[k]].w;
    return score_matrix(w);
  }

  const PlacementProblem& p_;
  unsigned workers_;
  std::map<Selection, Score> memo_;
};

std::vector<int> to_ids(const Selection& s, const PlacementProblem& p) {
  std::vector<int> ids;
  for (auto i : s) ids.push_back(p.candidate_ids[i]);
  return ids;
}

double choose(std::size_t n, std::size_t k) {
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i)
    c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(c);
}

Selection greedy_indices(const PlacementProblem& p, Evaluator& ev) {
  Selection s;
  std::vector<bool> used(p.size(), false);
  for (std::size_t step = 0; step < p.v; ++step) {
    std::size_t best = p.size();
    Score best_score;
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (used[c]) continue;
      Selection trial = s;
      trial.insert(std::upper_bound(trial.begin(), trial.end(), c), c);
      const Score sc = ev(trial);
      if (best == p.size() || better(sc, best_score)) {
        best = c;
        best_score = sc;
      }
    }
    used[best] = true;
    s.insert(std::upper_bound(s.begin(), s.end(), best), best);
  }
  return s;
}

class SwapSearch {
 public:
  SwapSearch(const PlacementProblem& p, const MadsConfig& cfg)
      : p_(p), cfg_(cfg), ev_(p, cfg.workers), rng_(cfg.seed) {
    max_mesh_ = static_cast<int>(std::min(p.v, p.size() - p.v));
  }

  PlacementSolution run() {
    PlacementSolution sol;
    sol.solver = Solver::Mads;
    sol.seed = cfg_.seed;

    Selection x;
    if (p_.v == p_.size()) {
      for (std::size_t i = 0; i < p_.size(); ++i) x.push_back(i);
    } else {
      x = cfg_.start == MadsStart::Greedy ? greedy_indices(p_, ev_) : random_start();
    }
    Score fx = ev_(x);
    note(sol, x, fx, 0, "start");

    if (max_mesh_ > 0) {
      descend(sol, x, fx);
      std::size_t idx = 0;
      while (idx < cfg_.vns_shake_sizes.size() && budget_left()) {
        const int k = std::min(cfg_.vns_shake_sizes[idx], max_mesh_);
        Selection y = shake(x, k);
        Score fy = ev_(y);
        descend(sol, y, fy, false);
        if (better(fy, fx)) {
          x = y;
          fx = fy;
          note(sol, x, fx, k, "shake " + std::to_string(k));
          descend(sol, x, fx);
          idx = 0;
        } else {
          ++idx;
        }
      }
    }

    sol.selected = to_ids(x, p_);
    sol.objective = fx.value;
    sol.evaluations = ev_.count();
    note(sol, x, fx, 1, "end");
    return sol;
  }

 private:
  bool budget_left() const { return ev_.count() < cfg_.max_evaluations; }

  Selection complement(const Selection& s) const {
    Selection out;
    for (std::size_t i = 0, j = 0; i < p_.size(); ++i) {
      if (j < s.size() && s[j] == i) ++j;
      else out.push_back(i);
    }
    return out;
  }

  std::size_t draw(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

  // k distinct positions out of n, by a partial Fisher-Yates shuffle.
  std::vector<std::size_t> pick(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(pos[i], pos[i + draw(n - i)]);
    pos.resize(k);
    return pos;
  }

  Selection random_start() {
    Selection s;
    for (auto i : pick(p_.size(), p_.v)) s.push_back(i);
    std::sort(s.begin(), s.end());
    return s;
  }

  Selection apply_swaps(const Selection& s, const Selection& out_pool,
                        const std::vector<std::size_t>& drop,
                        const std::vector<std::size_t>& add) const {
    Selection next;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (std::find(drop.begin(), drop.end(), i) == drop.end()) next.push_back(s[i]);
    }
    for (auto a : add) next.push_back(out_pool[a]);
    std::sort(next.begin(), next.end());
    return next;
  }

  Selection shake(const Selection& s, int k) {
    const Selection out = complement(s);
    const auto kk = static_cast<std::size_t>(k);
    return apply_swaps(s, out, pick(s.size(), kk), pick(out.size(), kk));
  }

  std::vector<Selection> poll_set(const Selection& s, int mesh) {
    const Selection out = complement(s);
    std::vector<Selection> polls;
    if (mesh == 1) {
      for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < out.size(); ++j) polls.push_back(apply_swaps(s, out, {i}, {j}));
    } else {
      const std::size_t target = s.size() * out.size();
      const auto k = static_cast<std::size_t>(mesh);
      std::set<Selection> seen;
      for (std::size_t tries = 0; polls.size() < target && tries < 4 * target; ++tries) {
        Selection y = apply_swaps(s, out, pick(s.size(), k), pick(out.size(), k));
        if (seen.insert(y).second) polls.push_back(std::move(y));
      }
    }
    const std::size_t left = cfg_.max_evaluations > ev_.count() ? cfg_.max_evaluations - ev_.count() : 0;
    std::vector<Selection> capped;
    std::size_t fresh = 0;
    for (auto& y : polls) {
      const bool known = ev_.known(y);
      if (!known && fresh >= left) continue;
      if (!known) ++fresh;
      capped.push_back(std::move(y));
    }
    return capped;
  }

  // Poll until a fine-mesh poll fails or the budget is spent.
  void descend(PlacementSolution& sol, Selection& x, Score& fx, bool record = true) {
    int mesh = std::clamp(cfg_.initial_mesh, 1, max_mesh_);
    while (true) {
      const auto polls = poll_set(x, mesh);
      const auto scores = ev_.batch(polls);
      std::size_t best = polls.size();
      for (std::size_t i = 0; i < polls.size(); ++i) {
        if (best == polls.size() || better(scores[i], scores[best]) ||
            (!better(scores[best], scores[i]) && polls[i] < polls[best]))
          best = i;
      }
      if (best < polls.size() && better(scores[best], fx)) {
        x = polls[best];
        fx = scores[best];
        if (record) note(sol, x, fx, mesh, "poll");
        mesh = std::min(mesh + 1, max_mesh_);
      } else if (mesh > 1) {
        --mesh;
      } else {
        return;
      }
      if (!budget_left()) return;
    }
  }

  void note(PlacementSolution& sol, const Selection& x, const Score& fx, int mesh,
            std::string event) {
    sol.trace.push_back({ev_.count(), fx.value, mesh, std::move(event), to_ids(x, p_)});
  }

  const PlacementProblem& p_;
  const MadsConfig& cfg_;
  Evaluator ev_;
  std::mt19937_64 rng_;
  int max_mesh_ = 0;
};

}  // namespace

void PlacementProblem::validate() const {
  if (candidate_ids.empty()) invalid("placement needs at least one candidate");
  if (covariances.size() != candidate_ids.size())
    invalid("one covariance per candidate is required");
  for (std::size_t i = 1; i < candidate_ids.size(); ++i) {
    if (candidate_ids[i] <= candidate_ids[i - 1])
      invalid("candidate ids must be strictly increasing");
  }
  if (v < 1 || v > candidate_ids.size())
    invalid("number of sources v=" + std::to_string(v) + " must lie in [1, " +
            std::to_string(candidate_ids.size()) + "]");
  const auto& ref = covariances.front();
  for (const auto& c : covariances) {
    if (c.bus_index != ref.bus_index || c.w.rows() != ref.w.rows() || c.w.cols() != ref.w.rows())
      invalid("covariances do not share one bus index");
  }
}

std::string_view to_string(Solver solver) {
  switch (solver) {
    case Solver::Exhaustive: return "exhaustive";
    case Solver::Greedy: return "greedy";
    case Solver::Mads: return "mads";
  }
  return "?";
}

Solver parse_solver(std::string_view name) {
  if (name == "exhaustive") return Solver::Exhaustive;
  if (name == "greedy") return Solver::Greedy;
  if (name == "mads") return Solver::Mads;
  invalid("unknown solver '" + std::string(name) + "' (expected exhaustive, greedy or mads)");
}

void MadsConfig::validate(std::size_t candidates) const {
  if (initial_mesh < 1) invalid("initial_mesh must be >= 1");
  if (max_evaluations < candidates) invalid("max_evaluations must be at least the candidate count");
  for (int k : vns_shake_sizes) {
    if (k < 1) invalid("vns shake sizes must be >= 1");
  }
  if (workers < 1) invalid("workers must be >= 1");
}

double neg_log_det(const Eigen::MatrixXd& w) { return score_matrix(w).value; }

double objective(const std::vector<int>& selection, const PlacementProblem& problem) {
  if (selection.empty()) return kInf;
  Eigen::MatrixXd w;
  std::set<int> seen;
  for (int id : selection) {
    auto it = std::lower_bound(problem.candidate_ids.begin(), problem.candidate_ids.end(), id);
    if (it == problem.candidate_ids.end() || *it != id)
      invalid("bus " + std::to_string(id) + " is not a candidate");
    if (!seen.insert(id).second) invalid("bus " + std::to_string(id) + " selected twice");
    const auto& wi = problem.covariances[static_cast<std::size_t>(it - problem.candidate_ids.begin())].w;
    if (w.size() == 0) w = wi;
    else w += wi;
  }
  return neg_log_det(w);
}

PlacementSolution solve_exhaustive(const PlacementProblem& problem) {
  problem.validate();
  const std::size_t l = problem.size(), v = problem.v;
  if (choose(l, v) > 1e6)
    invalid("C(" + std::to_string(l) + ", " + std::to_string(v) +
            ") exceeds 1e6 combinations; use the mads solver");
  Evaluator ev(problem, 1);
  Selection s(v);
  for (std::size_t i = 0; i < v; ++i) s[i] = i;
  Selection best = s;
  double best_value = ev(s).value;
  while (true) {
    std::size_t i = v;
    while (i > 0 && s[i - 1] == l - v + i - 1) --i;
    if (i == 0) break;
    ++s[i - 1];
    for (std::size_t j = i; j < v; ++j) s[j] = s[j - 1] + 1;
    const double value = ev(s).value;
    if (value < best_value) {
      best_value = value;
      best = s;
    }
  }
  PlacementSolution sol;
  sol.solver = Solver::Exhaustive;
  sol.selected = to_ids(best, problem);
  sol.objective = best_value;
  sol.evaluations = ev.count();
  return sol;
}

PlacementSolution solve_greedy(const PlacementProblem& problem) {
  problem.validate();
  Evaluator ev(problem, 1);
  const Selection s = greedy_indices(problem, ev);
  PlacementSolution sol;
  sol.solver = Solver::Greedy;
  sol.selected = to_ids(s, problem);
  sol.objective = ev(s).value;
  sol.evaluations = ev.count();
  return sol;
}

PlacementSolution solve_mads(const PlacementProblem& problem, const MadsConfig& cfg) {
  problem.validate();
  cfg.validate(problem.size());
  return SwapSearch(problem, cfg).run();
}

std::string placement_json(const PlacementSolution& sol, bool with_trace) {
  using nlohmann::json;
  auto num = [](double x) -> json {
    if (std::isfinite(x)) return x;
    return x > 0 ? "inf" : (x < 0 ? "-inf" : "nan");
  };
  json j;
  j["solver"] = std::string(to_string(sol.solver));
  j["selected"] = sol.selected;
  j["objective"] = num(sol.objective);
  j["evaluations"] = sol.evaluations;
  j["seed"] = sol.seed;
  if (with_trace) {
    json t = json::array();
    for (const auto& e : sol.trace) {
      t.push_back({{"evaluations", e.evaluations},
                   {"objective", num(e.objective)},
                   {"mesh", e.mesh},
                   {"event", e.event},
                   {"selected", e.selected}});
    }
    j["trace"] = t;
  }
  return j.dump();
}

}  // namespace varplace
