#pragma once

#include <random>
#include <string>

#include <Eigen/Dense>

#include "varplace/dynsim.hpp"
#include "varplace/netmodel.hpp"

namespace testing {

inline std::string fixture(const std::string& name) {
  return std::string(VARPLACE_FIXTURES) + "/" + name;
}

/// Network, equilibrium and initialized devices for a fixture.
struct Loaded {
  varplace::Network net;
  varplace::PowerFlowSolution pf;
  varplace::DeviceSet devices;

  explicit Loaded(const std::string& name) : net(varplace::load_case_file(fixture(name))) {
    pf = varplace::solve_power_flow(net);
    devices = varplace::default_devices(net);
    varplace::initialize_dynamics(net, pf, devices);
  }
};

/// Random PSD matrix of the given rank.
inline Eigen::MatrixXd random_psd(std::mt19937_64& rng, int n, int rank) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd f(n, rank);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < rank; ++j) f(i, j) = g(rng);
  return f * f.transpose();
}

}  // namespace testing
