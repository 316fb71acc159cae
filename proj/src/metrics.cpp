#include "scanssc/metrics.hpp"

#include <stdexcept>

#include "scanssc/parallel.hpp"

namespace scanssc::metrics {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_pair(const LabeledGrid& pred, const LabeledGrid& gt, const ClassTable& table) {
  if (pred.dims != gt.dims) fail("prediction and ground-truth grids have different dims");
  pred.validate(table);
  gt.validate(table);
}

Region axis_slab(const std::array<int64_t, 3>& dims, Axis axis, int64_t lo, int64_t hi) {
  Region r;
  r.hi = dims;
  r.lo[static_cast<size_t>(axis)] = lo;
  r.hi[static_cast<size_t>(axis)] = hi;
  return r;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  if (classes != o.classes) fail("cannot merge counts over different class tables");
  for (int64_t c = 0; c < classes; ++c) {
    tp[static_cast<size_t>(c)] += o.tp[static_cast<size_t>(c)];
    fp[static_cast<size_t>(c)] += o.fp[static_cast<size_t>(c)];
    fn[static_cast<size_t>(c)] += o.fn[static_cast<size_t>(c)];
  }
  occ_tp += o.occ_tp;
  occ_fp += o.occ_fp;
  occ_fn += o.occ_fn;
  return *this;
}

ConfusionCounts confusion_counts(const LabeledGrid& pred, const LabeledGrid& gt,
                                 const Region& region, const ClassTable& table) {
  check_pair(pred, gt, table);
  for (int i = 0; i < 3; ++i) {
    const auto u = static_cast<size_t>(i);
    if (region.lo[u] < 0 || region.hi[u] > gt.dims[u] || region.lo[u] > region.hi[u])
      fail("region out of bounds");
  }

  ConfusionCounts c(static_cast<int64_t>(table.count()));
  for (int64_t x = region.lo[0]; x < region.hi[0]; ++x)
    for (int64_t y = region.lo[1]; y < region.hi[1]; ++y)
      for (int64_t z = region.lo[2]; z < region.hi[2]; ++z) {
        const uint16_t g = gt.at(x, y, z);
        if (g == table.ignore_label) continue;
        const uint16_t p = pred.at(x, y, z);
        if (p == g)
          c.tp[p]++;
        else {
          c.fp[p]++;
          c.fn[g]++;
        }
        const bool go = g != 0, po = p != 0;
        if (go && po)
          c.occ_tp++;
        else if (po)
          c.occ_fp++;
        else if (go)
          c.occ_fn++;
      }
  return c;
}

MetricTriple metrics_from_counts(const ConfusionCounts& c) {
  MetricTriple m;
  if (c.occ_tp + c.occ_fn > 0)
    m.recall = static_cast<double>(c.occ_tp) / static_cast<double>(c.occ_tp + c.occ_fn);
  if (c.occ_tp + c.occ_fp + c.occ_fn > 0)
    m.iou = static_cast<double>(c.occ_tp) /
            static_cast<double>(c.occ_tp + c.occ_fp + c.occ_fn);

  double sum = 0.0;
  int64_t evaluated = 0;
  for (int64_t cls = 1; cls < c.classes; ++cls) {
    const auto u = static_cast<size_t>(cls);
    const int64_t denom = c.tp[u] + c.fp[u] + c.fn[u];
    if (denom == 0) continue;  // class absent from both grids
    sum += static_cast<double>(c.tp[u]) / static_cast<double>(denom);
    ++evaluated;
  }
  if (evaluated > 0) m.miou = sum / static_cast<double>(evaluated);
  return m;
}

AxisBinReport axis_bin_report(const LabeledGrid& pred, const LabeledGrid& gt, Axis axis,
                              int64_t bin_count, const ClassTable& table) {
  check_pair(pred, gt, table);
  if (bin_count < 1) fail("bin count must be >= 1");
  const int64_t extent = gt.dims[static_cast<size_t>(axis)];
  const int64_t width = (extent + bin_count - 1) / bin_count;

  AxisBinReport rep;
  rep.axis = axis;
  rep.bin_count = bin_count;
  rep.bins.resize(static_cast<size_t>(bin_count));
  parallel_for(bin_count, [&](int64_t b) {
    const int64_t lo = std::min(b * width, extent);
    const int64_t hi = std::min(lo + width, extent);
    const ConfusionCounts c = confusion_counts(pred, gt, axis_slab(gt.dims, axis, lo, hi), table);
    BinRow& row = rep.bins[static_cast<size_t>(b)];
    row.m = metrics_from_counts(c);
    row.occupied_gt = c.occ_tp + c.occ_fn;
  });
  return rep;
}

SegmentReport segment_report(const LabeledGrid& pred, const LabeledGrid& gt, Axis axis,
                             const ClassTable& table) {
  check_pair(pred, gt, table);
  const int64_t extent = gt.dims[static_cast<size_t>(axis)];
  if (extent < 4) fail("segment report needs an axis extent >= 4");

  SegmentReport rep;
  rep.axis = axis;
  for (int s = 0; s < 4; ++s) {
    const int64_t lo = extent * s / 4;
    const int64_t hi = extent * (s + 1) / 4;
    const ConfusionCounts c = confusion_counts(pred, gt, axis_slab(gt.dims, axis, lo, hi), table);
    SegmentRow& row = rep.rows[static_cast<size_t>(s)];
    row.range = {lo, hi};
    row.m = metrics_from_counts(c);
    row.occupied_gt = c.occ_tp + c.occ_fn;
  }
  return rep;
}

}  // namespace scanssc::metrics
