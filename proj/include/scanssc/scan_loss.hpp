#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scanssc/autodiff.hpp"
#include "scanssc/voxel.hpp"

namespace scanssc::loss {

using ad::Tensor;

// Axis-wise cumulatively averaged logits. Accumulation runs far-to-near:
// from the back for depth, from each side toward the center for width,
// from the bottom for height. Flipping an axis reverses its orientation
// (the operator conjugated by an axis reflection).
struct CumulativeLogits {
  AxisDirection direction;
  Tensor values;  // same dims as the logit grid
};

CumulativeLogits cumulative_average(const Tensor& logits, Axis axis, bool flipped = false);

// Convenience wrappers for the three unflipped operators.
CumulativeLogits cumulative_average_depth(const Tensor& logits);
CumulativeLogits cumulative_average_width(const Tensor& logits);
CumulativeLogits cumulative_average_height(const Tensor& logits);

// Accumulated ground-truth class distributions. Each non-ignored voxel
// contributes its one-hot vector; windows average over non-ignored
// contributors only, and valid_mass counts them per position. Positions
// with valid_mass == 0 are excluded from the loss.
struct CumulativeTargets {
  AxisDirection direction;
  std::array<int64_t, 3> dims{0, 0, 0};
  int64_t classes = 0;
  std::vector<double> dist;        // [X,Y,Z,P], class-fastest
  std::vector<int64_t> valid_mass; // [X,Y,Z]

  int64_t positions() const { return dims[0] * dims[1] * dims[2]; }
};

CumulativeTargets cumulative_targets(const LabeledGrid& gt, Axis axis, const ClassTable& table,
                                     bool flipped = false);

// Mean over positions with valid_mass > 0 of the cross-entropy between the
// accumulated target distribution and softmax of the accumulated logits.
// Zero valid positions yields 0 (a diagnostic is reported via the flag).
Tensor scan_ce(const CumulativeLogits& cl, const CumulativeTargets& ct,
               bool* no_valid_positions = nullptr);

struct ScanLossConfig {
  std::array<bool, 3> axis_enabled{true, true, true};
  std::array<bool, 3> flipped{false, false, false};
};

struct ScanLossTerms {
  Tensor total;                  // scalar
  std::array<double, 3> by_axis; // values of enabled terms, 0 when disabled
};

ScanLossTerms scan_loss_total(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table,
                              const ScanLossConfig& config = {});

}  // namespace scanssc::loss
