#include "varplace/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "varplace/case_document.hpp"
#include "varplace/error.hpp"

namespace varplace {

std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "PV";
    case BusKind::PQ: return "PQ";
  }
  return "?";
}

namespace {

[[noreturn]] void fail_at(int line, const std::string& msg) {
  throw ValidationError("line " + std::to_string(line) + ": " + msg);
}

// Typed accessors over one section. Every field read is recorded so that
// leftovers can be rejected as unknown.
class FieldReader {
 public:
  explicit FieldReader(const Section& s) : s_(s) {}

  const Value* find(const std::string& key) {
    seen_.insert(key);
    auto it = s_.fields.find(key);
    return it == s_.fields.end() ? nullptr : &it->second;
  }

  double number(const std::string& key) {
    const Value* v = find(key);
    if (v == nullptr)
      fail_at(s_.line, "[" + s_.name + "] missing required field '" + key + "'");
    return as_number(*v, key);
  }

  std::optional<double> opt_number(const std::string& key) {
    const Value* v = find(key);
    if (v == nullptr) return std::nullopt;
    return as_number(*v, key);
  }

  int integer(const std::string& key) { return to_int(number(key), key); }

  std::optional<int> opt_integer(const std::string& key) {
    auto v = opt_number(key);
    if (!v) return std::nullopt;
    return to_int(*v, key);
  }

  std::string string(const std::string& key) {
    const Value* v = find(key);
    if (v == nullptr)
      fail_at(s_.line, "[" + s_.name + "] missing required field '" + key + "'");
    if (!v->is_string())
      fail_at(v->line, "field '" + key + "' must be a string");
    return std::get<std::string>(v->data);
  }

  std::vector<int> int_list(const std::string& key) {
    const Value* v = find(key);
    if (v == nullptr)
      fail_at(s_.line, "[" + s_.name + "] missing required field '" + key + "'");
    if (!v->is_array())
      fail_at(v->line, "field '" + key + "' must be an array");
    std::vector<int> out;
    for (const auto& item : std::get<std::vector<Value::Scalar>>(v->data)) {
      if (!std::holds_alternative<double>(item))
        fail_at(v->line, "field '" + key + "' must hold numbers");
      double d = std::get<double>(item);
      if (d != std::floor(d))
        fail_at(v->line, "field '" + key + "' must hold integers");
      out.push_back(static_cast<int>(d));
    }
    return out;
  }

  std::optional<bool> opt_flag(const std::string& key) {
    const Value* v = find(key);
    if (v == nullptr) return std::nullopt;
    if (v->is_bool()) return std::get<bool>(v->data);
    if (v->is_number()) {
      double d = std::get<double>(v->data);
      if (d == 0.0 || d == 1.0) return d == 1.0;
    }
    fail_at(v->line, "field '" + key + "' must be 0, 1, true or false");
  }

  void reject_unknown() const {
    for (const auto& [key, value] : s_.fields) {
      if (!seen_.count(key))
        fail_at(value.line, "unknown field '" + key + "' in [" + s_.name + "]");
    }
  }

  int line() const { return s_.line; }

 private:
  double as_number(const Value& v, const std::string& key) const {
    if (!v.is_number())
      fail_at(v.line, "field '" + key + "' must be a number");
    double d = std::get<double>(v.data);
    if (!std::isfinite(d)) fail_at(v.line, "field '" + key + "' is not finite");
    return d;
  }

  int to_int(double d, const std::string& key) const {
    if (d != std::floor(d) || std::abs(d) > 1e9)
      fail_at(s_.line, "field '" + key + "' must be an integer");
    return static_cast<int>(d);
  }

  const Section& s_;
  std::set<std::string> seen_;
};

BusKind parse_kind(const std::string& s, int line) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(c));
  if (lower == "slack") return BusKind::Slack;
  if (lower == "pv") return BusKind::PV;
  if (lower == "pq") return BusKind::PQ;
  fail_at(line, "unknown bus kind '" + s + "' (expected slack, PV or PQ)");
}

void read_device_table(FieldReader& r, const std::vector<std::string>& keys,
                       DynamicData::Fields& defaults,
                       std::map<int, DynamicData::Fields>& per_bus,
                       const std::string& table) {
  auto bus = r.opt_integer("bus");
  DynamicData::Fields fields;
  for (const auto& key : keys) {
    if (auto v = r.opt_number(key)) fields[key] = *v;
  }
  r.reject_unknown();
  auto& target = bus ? per_bus[*bus] : defaults;
  for (const auto& [k, v] : fields) {
    if (target.count(k))
      fail_at(r.line(), "[[" + table + "]] sets '" + k + "' twice");
    target[k] = v;
  }
}

double pick(const DynamicData::Fields& defaults, const DynamicData::Fields* own,
            const std::string& key, double fallback) {
  if (own != nullptr) {
    auto it = own->find(key);
    if (it != own->end()) return it->second;
  }
  auto it = defaults.find(key);
  return it != defaults.end() ? it->second : fallback;
}

const DynamicData::Fields* lookup(const std::map<int, DynamicData::Fields>& m,
                                  int bus) {
  auto it = m.find(bus);
  return it == m.end() ? nullptr : &it->second;
}

}  // namespace

GeneratorParams DynamicData::generator_for(int bus) const {
  const Fields* own = lookup(generators, bus);
  GeneratorParams p;
  p.h = pick(generator_defaults, own, "h", p.h);
  p.d = pick(generator_defaults, own, "d", p.d);
  p.xd_prime = pick(generator_defaults, own, "xd_prime", p.xd_prime);
  return p;
}

LoadDynParams DynamicData::load_for(int bus) const {
  const Fields* own = lookup(loads, bus);
  LoadDynParams p;
  p.static_fraction =
      pick(load_defaults, own, "static_fraction", p.static_fraction);
  p.alpha_t = pick(load_defaults, own, "alpha_t", p.alpha_t);
  p.alpha_s = pick(load_defaults, own, "alpha_s", p.alpha_s);
  p.tp = pick(load_defaults, own, "tp", p.tp);
  p.tq = pick(load_defaults, own, "tq", p.tq);
  return p;
}

SvcParams DynamicData::svc_for(int bus) const {
  const Fields* own = lookup(svcs, bus);
  SvcParams p;
  p.rating = pick(svc_defaults, own, "rating", p.rating);
  p.tr = pick(svc_defaults, own, "tr", p.tr);
  p.kr = pick(svc_defaults, own, "kr", p.kr);
  p.deadband = pick(svc_defaults, own, "deadband", p.deadband);
  bool has_vref = (own && own->count("v_ref")) || svc_defaults.count("v_ref");
  if (has_vref) p.v_ref = pick(svc_defaults, own, "v_ref", 1.0);
  return p;
}

std::size_t Network::index_of(int bus_id) const {
  auto it = index_.find(bus_id);
  if (it == index_.end())
    throw ValidationError("unknown bus id " + std::to_string(bus_id));
  return it->second;
}

bool Network::has_bus(int bus_id) const { return index_.count(bus_id) != 0; }

const Branch& Network::branch(int branch_id) const {
  for (const auto& br : branches) {
    if (br.id == branch_id) return br;
  }
  throw ValidationError("unknown branch id " + std::to_string(branch_id));
}

std::vector<int> Network::bus_ids() const {
  std::vector<int> ids;
  ids.reserve(buses.size());
  for (const auto& b : buses) ids.push_back(b.id);
  return ids;
}

void Network::reindex() {
  std::sort(buses.begin(), buses.end(),
            [](const Bus& a, const Bus& b) { return a.id < b.id; });
  std::sort(branches.begin(), branches.end(),
            [](const Branch& a, const Branch& b) { return a.id < b.id; });
  std::sort(candidate_buses.begin(), candidate_buses.end());
  index_.clear();
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (!index_.emplace(buses[i].id, i).second)
      throw ValidationError("duplicate bus id " + std::to_string(buses[i].id));
  }
}

void Network::validate() const {
  if (buses.empty()) throw ValidationError("network has no buses");
  if (!(base_mva > 0.0)) throw ValidationError("base_mva must be positive");
  if (!(frequency_hz > 0.0))
    throw ValidationError("frequency_hz must be positive");

  int slack_count = 0;
  for (const auto& b : buses) {
    if (b.kind == BusKind::Slack) ++slack_count;
    if (!(b.v_setpoint > 0.5 && b.v_setpoint < 1.5))
      throw ValidationError("bus " + std::to_string(b.id) +
                            ": v_setpoint must lie in (0.5, 1.5) pu");
    if (!std::isfinite(b.p_load) || !std::isfinite(b.q_load) ||
        !std::isfinite(b.p_gen))
      throw ValidationError("bus " + std::to_string(b.id) +
                            ": loads must be finite");
  }
  if (slack_count == 0) throw ValidationError("network has no slack bus");
  if (slack_count > 1)
    throw ValidationError("network has multiple slack buses (" +
                          std::to_string(slack_count) + ")");

  std::set<int> branch_ids;
  for (const auto& br : branches) {
    const std::string tag = "branch " + std::to_string(br.id);
    if (!branch_ids.insert(br.id).second)
      throw ValidationError("duplicate branch id " + std::to_string(br.id));
    if (!has_bus(br.from_bus))
      throw ValidationError(tag + ": dangling reference to bus " +
                            std::to_string(br.from_bus));
    if (!has_bus(br.to_bus))
      throw ValidationError(tag + ": dangling reference to bus " +
                            std::to_string(br.to_bus));
    if (br.from_bus == br.to_bus)
      throw ValidationError(tag + ": from and to buses are equal");
    if (br.r == 0.0 && br.x == 0.0)
      throw ValidationError(tag + ": zero impedance");
  }

  std::set<int> seen;
  for (int c : candidate_buses) {
    if (!has_bus(c))
      throw ValidationError("candidate bus " + std::to_string(c) +
                            " does not exist");
    if (bus(c).kind != BusKind::PQ)
      throw ValidationError("candidate bus " + std::to_string(c) +
                            " is not a PQ bus");
    if (!seen.insert(c).second)
      throw ValidationError("candidate bus " + std::to_string(c) +
                            " listed twice");
  }

  if (!is_connected())
    throw ValidationError("network is not connected over in-service branches");
}

bool Network::is_connected(std::optional<int> open_branch) const {
  const std::size_t n = buses.size();
  if (n == 0) return true;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& br : branches) {
    if (!br.in_service || (open_branch && *open_branch == br.id)) continue;
    auto i = index_.find(br.from_bus);
    auto j = index_.find(br.to_bus);
    if (i == index_.end() || j == index_.end()) continue;
    adj[i->second].push_back(j->second);
    adj[j->second].push_back(i->second);
  }
  std::vector<bool> visited(n, false);
  std::queue<std::size_t> q;
  q.push(0);
  visited[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    auto u = q.front();
    q.pop();
    for (auto w : adj[u]) {
      if (!visited[w]) {
        visited[w] = true;
        ++count;
        q.push(w);
      }
    }
  }
  return count == n;
}

Network load_case(std::string_view text) {
  CaseDocument doc = parse_case_document(text);
  Network net;
  bool have_system = false, have_candidates = false;

  for (const auto& section : doc.sections) {
    FieldReader r(section);
    const std::string& name = section.name;
    auto expect_array = [&](bool array) {
      if (section.is_array_entry != array)
        fail_at(section.line, array ? "[" + name + "] must be declared as [[" +
                                          name + "]]"
                                    : "[[" + name + "]] must be declared as [" +
                                          name + "]");
    };

    if (name == "system") {
      expect_array(false);
      have_system = true;
      if (auto v = r.opt_number("base_mva")) net.base_mva = *v;
      if (auto v = r.opt_number("frequency_hz")) net.frequency_hz = *v;
      r.reject_unknown();
    } else if (name == "bus") {
      expect_array(true);
      Bus b;
      b.id = r.integer("id");
      b.kind = parse_kind(r.string("kind"), section.line);
      if (auto v = r.opt_number("v_setpoint")) b.v_setpoint = *v;
      if (auto v = r.opt_number("p_load")) b.p_load = *v;
      if (auto v = r.opt_number("q_load")) b.q_load = *v;
      if (auto v = r.opt_number("p_gen")) b.p_gen = *v;
      if (auto v = r.opt_number("nominal_kv")) b.nominal_kv = *v;
      r.reject_unknown();
      net.buses.push_back(b);
    } else if (name == "branch") {
      expect_array(true);
      Branch br;
      br.id = r.integer("id");
      br.from_bus = r.integer("from");
      br.to_bus = r.integer("to");
      br.r = r.number("r");
      br.x = r.number("x");
      if (auto v = r.opt_number("b")) br.b_shunt = *v;
      if (auto v = r.opt_flag("status")) br.in_service = *v;
      r.reject_unknown();
      net.branches.push_back(br);
    } else if (name == "candidates") {
      expect_array(false);
      have_candidates = true;
      net.candidate_buses = r.int_list("buses");
      r.reject_unknown();
    } else if (name == "generator") {
      expect_array(true);
      read_device_table(r, {"h", "d", "xd_prime"},
                        net.dynamics.generator_defaults,
                        net.dynamics.generators, name);
    } else if (name == "load_dyn") {
      expect_array(true);
      read_device_table(r, {"static_fraction", "alpha_t", "alpha_s", "tp", "tq"},
                        net.dynamics.load_defaults, net.dynamics.loads, name);
    } else if (name == "svc") {
      expect_array(true);
      read_device_table(r, {"rating", "tr", "kr", "deadband", "v_ref"},
                        net.dynamics.svc_defaults, net.dynamics.svcs, name);
    } else {
      fail_at(section.line, "unknown table '" + name + "'");
    }
  }
  (void)have_system;
  (void)have_candidates;

  net.reindex();
  net.validate();
  return net;
}

Network load_case_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open case file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return load_case(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

ComplexMatrix admittance_matrix(const Network& net) {
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  for (const auto& br : net.branches) {
    if (!br.in_service) continue;
    const auto i = static_cast<Eigen::Index>(net.index_of(br.from_bus));
    const auto j = static_cast<Eigen::Index>(net.index_of(br.to_bus));
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> ysh(0.0, br.b_shunt / 2.0);
    y(i, i) += ys + ysh;
    y(j, j) += ys + ysh;
    y(i, j) -= ys;
    y(j, i) -= ys;
  }
  return y;
}

Eigen::VectorXcd bus_injections(const ComplexMatrix& y,
                                const Eigen::VectorXcd& v) {
  Eigen::VectorXcd current = y * v;
  return v.array() * current.conjugate().array();
}

Eigen::VectorXcd PowerFlowSolution::voltage() const {
  Eigen::VectorXcd v(v_mag.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::polar(v_mag(i), v_ang(i));
  return v;
}

PowerFlowSolution solve_power_flow(const Network& net,
                                   const PowerFlowOptions& opts) {
  if (!(opts.tol > 0.0)) throw ValidationError("power-flow tol must be > 0");
  if (opts.max_iter < 0) throw ValidationError("max_iter must be >= 0");

  const auto n = static_cast<Eigen::Index>(net.bus_count());
  const ComplexMatrix y = admittance_matrix(net);
  const Eigen::MatrixXd g = y.real();
  const Eigen::MatrixXd b = y.imag();

  Eigen::VectorXd vm(n), va = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd p_sched(n), q_sched(n);
  std::vector<Eigen::Index> pvpq, pq;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Bus& bus = net.buses[static_cast<std::size_t>(i)];
    vm(i) = bus.kind == BusKind::PQ ? 1.0 : bus.v_setpoint;
    p_sched(i) = (bus.p_gen - bus.p_load) / net.base_mva;
    q_sched(i) = -bus.q_load / net.base_mva;
    if (bus.kind != BusKind::Slack) pvpq.push_back(i);
    if (bus.kind == BusKind::PQ) pq.push_back(i);
  }
  const auto npvpq = static_cast<Eigen::Index>(pvpq.size());
  const auto npq = static_cast<Eigen::Index>(pq.size());
  const Eigen::Index dim = npvpq + npq;

  auto injections = [&](Eigen::VectorXd& p, Eigen::VectorXd& q) {
    p.setZero(n);
    q.setZero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < n; ++k) {
        if (g(i, k) == 0.0 && b(i, k) == 0.0) continue;
        const double th = va(i) - va(k);
        const double c = std::cos(th), s = std::sin(th);
        p(i) += vm(i) * vm(k) * (g(i, k) * c + b(i, k) * s);
        q(i) += vm(i) * vm(k) * (g(i, k) * s - b(i, k) * c);
      }
    }
  };

  Eigen::VectorXd p, q, f(dim);
  int iter = 0;
  double mismatch = 0.0;
  while (true) {
    injections(p, q);
    for (Eigen::Index a = 0; a < npvpq; ++a) f(a) = p_sched(pvpq[a]) - p(pvpq[a]);
    for (Eigen::Index a = 0; a < npq; ++a) f(npvpq + a) = q_sched(pq[a]) - q(pq[a]);
    mismatch = dim > 0 ? f.cwiseAbs().maxCoeff() : 0.0;
    if (!std::isfinite(mismatch))
      throw ConvergenceError("power flow diverged (non-finite mismatch)",
                             mismatch, iter);
    if (mismatch <= opts.tol) break;
    if (iter >= opts.max_iter) {
      std::ostringstream msg;
      msg << "power flow did not converge in " << opts.max_iter
          << " iterations (max mismatch " << mismatch << " pu)";
      throw ConvergenceError(msg.str(), mismatch, iter);
    }

    // Jacobian blocks: dP/dth, dP/dV, dQ/dth, dQ/dV.
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(dim, dim);
    std::vector<Eigen::Index> col_v(static_cast<std::size_t>(n), -1);
    for (Eigen::Index a = 0; a < npq; ++a) col_v[pq[a]] = npvpq + a;
    std::vector<Eigen::Index> col_th(static_cast<std::size_t>(n), -1);
    for (Eigen::Index a = 0; a < npvpq; ++a) col_th[pvpq[a]] = a;

    auto fill_row = [&](Eigen::Index row, Eigen::Index i, bool is_p) {
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k != i && g(i, k) == 0.0 && b(i, k) == 0.0) continue;
        const double th = va(i) - va(k);
        const double c = std::cos(th), s = std::sin(th);
        double d_th, d_v;
        if (k == i) {
          if (is_p) {
            d_th = -q(i) - b(i, i) * vm(i) * vm(i);
            d_v = p(i) / vm(i) + g(i, i) * vm(i);
          } else {
            d_th = p(i) - g(i, i) * vm(i) * vm(i);
            d_v = q(i) / vm(i) - b(i, i) * vm(i);
          }
        } else if (is_p) {
          d_th = vm(i) * vm(k) * (g(i, k) * s - b(i, k) * c);
          d_v = vm(i) * (g(i, k) * c + b(i, k) * s);
        } else {
          d_th = -vm(i) * vm(k) * (g(i, k) * c + b(i, k) * s);
          d_v = vm(i) * (g(i, k) * s - b(i, k) * c);
        }
        if (col_th[k] >= 0) jac(row, col_th[k]) += d_th;
        if (col_v[k] >= 0) jac(row, col_v[k]) += d_v;
      }
    };
    for (Eigen::Index a = 0; a < npvpq; ++a) fill_row(a, pvpq[a], true);
    for (Eigen::Index a = 0; a < npq; ++a) fill_row(npvpq + a, pq[a], false);

    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible())
      throw ConvergenceError("power-flow Jacobian is singular", mismatch, iter);
    const Eigen::VectorXd dx = lu.solve(f);
    for (Eigen::Index a = 0; a < npvpq; ++a) va(pvpq[a]) += dx(a);
    for (Eigen::Index a = 0; a < npq; ++a) vm(pq[a]) += dx(npvpq + a);
    ++iter;
  }

  PowerFlowSolution sol;
  sol.v_mag = vm;
  sol.v_ang = va;
  sol.p_inj = p;
  sol.q_inj = q;
  sol.converged = true;
  sol.max_mismatch = mismatch;
  sol.iterations = iter;
  return sol;
}

}  // namespace varplace
