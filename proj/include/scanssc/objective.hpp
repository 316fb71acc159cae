#pragma once

#include <optional>
#include <string>
#include <vector>

#include "scanssc/scan_loss.hpp"
#include "scanssc/voxel.hpp"

namespace scanssc::loss {

struct LossWeights {
  double lambda_d = 0.001;
  double lambda_scan = 1.0;
};

// Per-term scalars of one objective evaluation. total is always the exact
// sum ce + scal_geo + scal_sem + lambda_d*depth + lambda_scan*(scan terms).
struct LossReport {
  double ce = 0.0;
  double scal_geo = 0.0;
  double scal_sem = 0.0;
  double depth = 0.0;
  double scan_dep = 0.0;
  double scan_wid = 0.0;
  double scan_hgt = 0.0;
  double total = 0.0;

  std::string to_json() const;
};

// Mean over non-ignored voxels of the (optionally class-weighted) negative
// log softmax probability of the true class. With no valid voxels the loss
// is 0 and *no_valid_voxels is set.
Tensor ce_loss(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table,
               const std::optional<std::vector<double>>& class_weights = std::nullopt,
               bool* no_valid_voxels = nullptr);

// Geometric / semantic affinity losses on soft predictions: -log of the
// precision, recall and specificity ratios. The geometric variant works on
// the occupied/empty reduction; the semantic variant averages per-class
// sums over the semantic classes present in the ground truth. Ratio terms
// whose reference set is empty are skipped.
struct ScalLosses {
  Tensor geo;
  Tensor sem;
};
ScalLosses scal_losses(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table);

struct TotalLossResult {
  Tensor total;  // scalar, differentiable through the logits
  LossReport report;
};

// depth_term is a pluggable scalar standing in for the out-of-scope depth
// estimation loss; it enters the total as lambda_d * depth_term.
TotalLossResult total_loss(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table,
                           const ScanLossConfig& scan_config = {}, const LossWeights& weights = {},
                           double depth_term = 0.0,
                           const std::optional<std::vector<double>>& ce_class_weights = std::nullopt);

}  // namespace scanssc::loss
