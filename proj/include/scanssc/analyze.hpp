#pragma once

#include <array>
#include <string>
#include <vector>

#include "scanssc/voxel.hpp"

namespace scanssc {

// The axis-binned analysis protocol: per-axis bin reports, four-segment
// tables, and SVG curves, written under out_dir. The prediction comes from
// pred_path, or from argmax of logits_path when pred_path is empty.
struct AnalyzeOptions {
  std::string pred_path;
  std::string logits_path;
  std::string gt_path;
  std::vector<Axis> axes{Axis::depth, Axis::width, Axis::height};
  std::array<int64_t, 3> bins{256, 256, 32};
  bool normalize_svg = false;
  std::string out_dir;
};

void run_analyze(const AnalyzeOptions& options);

}  // namespace scanssc
