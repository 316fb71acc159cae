#pragma once

#include <cstdint>
#include <string>

namespace scanssc::oracle {

// Randomized comparison suites between the library implementations and
// straight-line brute-force references:
//   masks    — mask builders vs direct enumeration of the cascade rules
//   cumavg   — cumulative-average operators vs a double-loop reference
//   scanloss — scan loss vs a scalar-by-scalar reference
//   fusion   — fusion weight normalization and convex-hull membership
struct OracleOutcome {
  std::string suite;
  int64_t trials = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  uint64_t worst_trial_seed = 0;

  bool passed() const { return max_deviation <= tolerance; }
};

double suite_tolerance(const std::string& suite);

// Runs `trials` independent trials derived from `seed`.
OracleOutcome run_oracle_suite(const std::string& suite, int64_t trials, uint64_t seed);

// Deviation of one trial (used for repro replay).
double oracle_trial(const std::string& suite, uint64_t trial_seed);

// Repro files hold the suite and worst trial seed as JSON.
std::string repro_json(const OracleOutcome& outcome);
OracleOutcome replay_repro(const std::string& json_text);

}  // namespace scanssc::oracle
