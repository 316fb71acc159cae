#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scanssc/metrics.hpp"
#include "scanssc/objective.hpp"
#include "scanssc/run_config.hpp"
#include "scanssc/voxel.hpp"

namespace scanssc::train {

// Overfit-one-scene toy training: a learnable feature volume plus all
// module parameters, fitted to a single labeled grid with plain gradient
// descent with momentum. Deterministic given the config seed.
struct TrainResult {
  bool diverged = false;
  int64_t diverged_step = -1;  // step index whose update produced a non-finite loss
  // reports[i] is the loss after i updates (so reports.front() is the
  // initial state and reports.back() the final one)
  std::vector<loss::LossReport> reports;
  metrics::MetricTriple initial_metrics;
  metrics::MetricTriple final_metrics;
  LogitGrid final_logits;
};

// When out_dir is non-empty, writes loss_log.jsonl, final_logits.sscl,
// metrics_initial.json / metrics_final.json, per-axis segment CSVs, the
// serialized config, and a run.log sidecar (the only timestamped output).
TrainResult train_toy(const RunConfig& config, const LabeledGrid& gt, const std::string& out_dir);

// Per-class cross-entropy weights derived from the grid's label histogram
// (w = 1 / ln(1.02 + frequency)); used by ce_weighting = frequency.
std::vector<double> frequency_weights(const LabeledGrid& gt, const ClassTable& table);

}  // namespace scanssc::train
