#pragma once
// Fault-injection scenarios for the remote generation client, shared by the
// unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "stub_server.hpp"

namespace scenarios {

struct Result {
  bool pass = false;
  std::string detail;
};

struct Scenario {
  std::string name;
  scgs::stub::Fault fault;
  std::function<Result()> run;
};

/// Every scenario, at least one per stub fault plus an unreachable endpoint.
std::vector<Scenario> remote_scenarios();

}  // namespace scenarios
