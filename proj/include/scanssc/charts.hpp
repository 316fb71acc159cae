#pragma once

#include <string>

#include "scanssc/metrics.hpp"

namespace scanssc::io {

// One row per bin: "bin,recall,iou,miou,occupied_gt". Undefined metrics
// serialize as the literal null, never 0. Dot decimals, LF line endings.
std::string bin_report_csv(const metrics::AxisBinReport& rep);

// Four rows "(1)".."(4)" with Recall/IoU/mIoU columns, fractions printed
// with three decimals.
std::string segment_report_csv(const metrics::SegmentReport& rep);

std::string bin_report_json(const metrics::AxisBinReport& rep);
std::string segment_report_json(const metrics::SegmentReport& rep);
std::string global_metrics_json(const metrics::MetricTriple& m, int64_t occupied_gt);

// Deterministic SVG line chart of the per-bin recall/IoU/mIoU curves plus
// the ground-truth occupancy distribution. When normalize is set, each
// curve is rescaled by its own maximum.
std::string bin_report_svg(const metrics::AxisBinReport& rep, bool normalize);

}  // namespace scanssc::io
