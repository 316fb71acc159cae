#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "scanssc/voxel.hpp"

namespace scanssc::metrics {

// Half-open voxel index ranges per axis.
struct Region {
  std::array<int64_t, 3> lo{0, 0, 0};
  std::array<int64_t, 3> hi{0, 0, 0};
};

// Per-class and occupancy confusion counts over one region. Ground-truth
// voxels carrying the ignore label are excluded entirely; occupancy treats
// any non-empty class as occupied.
struct ConfusionCounts {
  int64_t classes = 0;
  std::vector<int64_t> tp, fp, fn;  // per class
  int64_t occ_tp = 0, occ_fp = 0, occ_fn = 0;

  ConfusionCounts() = default;
  explicit ConfusionCounts(int64_t P)
      : classes(P),
        tp(static_cast<size_t>(P), 0),
        fp(static_cast<size_t>(P), 0),
        fn(static_cast<size_t>(P), 0) {}
  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

ConfusionCounts confusion_counts(const LabeledGrid& pred, const LabeledGrid& gt,
                                 const Region& region, const ClassTable& table);

// recall / IoU on occupancy; mIoU = mean per-class IoU over semantic
// classes, skipping classes absent from both prediction and ground truth.
// A metric whose denominator is 0 is undefined (nullopt), never 0/0.
struct MetricTriple {
  std::optional<double> recall;
  std::optional<double> iou;
  std::optional<double> miou;
};

MetricTriple metrics_from_counts(const ConfusionCounts& c);

struct BinRow {
  MetricTriple m;
  int64_t occupied_gt = 0;
};

struct AxisBinReport {
  Axis axis = Axis::depth;
  int64_t bin_count = 0;
  std::vector<BinRow> bins;
};

// Bins tile the axis with width ceil(extent / bin_count); the last bins
// may be short or empty.
AxisBinReport axis_bin_report(const LabeledGrid& pred, const LabeledGrid& gt, Axis axis,
                              int64_t bin_count, const ClassTable& table);

struct SegmentRow {
  std::array<int64_t, 2> range{0, 0};  // half-open index range
  MetricTriple m;
  int64_t occupied_gt = 0;
};

// Four rows aggregated over quarter index ranges of the axis (counts are
// pooled per segment, then metrics computed).
struct SegmentReport {
  Axis axis = Axis::depth;
  std::array<SegmentRow, 4> rows;
};

SegmentReport segment_report(const LabeledGrid& pred, const LabeledGrid& gt, Axis axis,
                             const ClassTable& table);

}  // namespace scanssc::metrics
