#pragma once

#include <string>
#include <vector>

#include "scanssc/run_config.hpp"

namespace scanssc::train {

// Gradient verification over the configured model at tiny dims (proposal
// extents <= 4 and channels <= 8 are enforced). Groups:
//   primitives  — every tensor primitive on random inputs
//   scan-loss   — the cumulative-average / scan CE path w.r.t. logits
//   objective   — the full composite loss w.r.t. logits
//   scan-module — the end-to-end objective w.r.t. the feature volume and
//                 every module parameter group
//   fixture-bad — negative control with a deliberately wrong backward
// An empty filter runs all regular groups.
struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckRun {
  std::vector<GradCheckGroup> groups;
  double threshold = 1e-3;
  bool passed = false;
  std::string text_report;
};

GradCheckRun run_gradient_checks(const RunConfig& config, const std::string& module_filter = "");

}  // namespace scanssc::train
