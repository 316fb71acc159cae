#include <doctest.h>

#include <algorithm>

#include "scanssc/metrics.hpp"
#include "scanssc/rng.hpp"
#include "test_helpers.hpp"

using namespace scanssc;
using namespace scanssc::metrics;
using scanssc::testing::rand_labels;

namespace {

// voxel-loop reference counting
ConfusionCounts brute_counts(const LabeledGrid& pred, const LabeledGrid& gt, const Region& r,
                             const ClassTable& table) {
  ConfusionCounts c(static_cast<int64_t>(table.count()));
  for (int64_t x = r.lo[0]; x < r.hi[0]; ++x)
    for (int64_t y = r.lo[1]; y < r.hi[1]; ++y)
      for (int64_t z = r.lo[2]; z < r.hi[2]; ++z) {
        const uint16_t g = gt.at(x, y, z);
        if (g == table.ignore_label) continue;
        const uint16_t p = pred.at(x, y, z);
        for (int64_t cls = 0; cls < c.classes; ++cls) {
          const bool in_p = p == cls, in_g = g == cls;
          if (in_p && in_g) c.tp[static_cast<size_t>(cls)]++;
          if (in_p && !in_g) c.fp[static_cast<size_t>(cls)]++;
          if (!in_p && in_g) c.fn[static_cast<size_t>(cls)]++;
        }
        const bool po = p != 0, go = g != 0;
        if (po && go) c.occ_tp++;
        if (po && !go) c.occ_fp++;
        if (!po && go) c.occ_fn++;
      }
  return c;
}

bool counts_equal(const ConfusionCounts& a, const ConfusionCounts& b) {
  return a.tp == b.tp && a.fp == b.fp && a.fn == b.fn && a.occ_tp == b.occ_tp &&
         a.occ_fp == b.occ_fp && a.occ_fn == b.occ_fn;
}

Region whole(const LabeledGrid& g) {
  Region r;
  r.hi = g.dims;
  return r;
}

}  // namespace

TEST_CASE("confusion counts basics") {
  const ClassTable table = ClassTable::generic(4);
  Rng rng(81);
  const LabeledGrid gt = rand_labels({4, 4, 2}, 4, 0.1, rng);

  // pred == gt: no false positives or negatives
  const auto perfect = confusion_counts(gt, gt, whole(gt), table);
  for (int64_t c = 0; c < 4; ++c) {
    CHECK(perfect.fp[static_cast<size_t>(c)] == 0);
    CHECK(perfect.fn[static_cast<size_t>(c)] == 0);
  }
  CHECK(perfect.occ_fp == 0);
  CHECK(perfect.occ_fn == 0);

  // all-empty prediction: occupancy FN = occupied gt count
  const LabeledGrid empty = LabeledGrid::filled(gt.dims, 0);
  const auto miss = confusion_counts(empty, gt, whole(gt), table);
  int64_t occupied = 0;
  for (uint16_t l : gt.labels)
    if (l != table.ignore_label && l != 0) ++occupied;
  CHECK(miss.occ_tp == 0);
  CHECK(miss.occ_fn == occupied);
}

TEST_CASE("confusion counts match the brute-force voxel loop") {
  const ClassTable table = ClassTable::generic(5);
  Rng rng(82);
  for (int trial = 0; trial < 30; ++trial) {
    const std::array<int64_t, 3> d{4, 4, 2};
    const LabeledGrid gt = rand_labels(d, 5, 0.2, rng);
    const LabeledGrid pred = rand_labels(d, 5, 0.0, rng);
    Region r = whole(gt);
    if (trial % 3 == 0) {
      r.lo = {1, 0, 1};
      r.hi = {3, 4, 2};
    }
    CHECK(counts_equal(confusion_counts(pred, gt, r, table), brute_counts(pred, gt, r, table)));
  }
}

TEST_CASE("metric formulas and undefined markers") {
  ConfusionCounts c(3);
  c.occ_tp = 6;
  c.occ_fp = 2;
  c.occ_fn = 2;
  c.tp = {0, 3, 1};
  c.fp = {0, 1, 0};
  c.fn = {0, 0, 3};
  const auto m = metrics_from_counts(c);
  CHECK(*m.recall == doctest::Approx(6.0 / 8.0));
  CHECK(*m.iou == doctest::Approx(6.0 / 10.0));
  CHECK(*m.miou == doctest::Approx((3.0 / 4.0 + 1.0 / 4.0) / 2.0));

  // zero counts: undefined, never 0/0
  const auto none = metrics_from_counts(ConfusionCounts(3));
  CHECK_FALSE(none.recall.has_value());
  CHECK_FALSE(none.iou.has_value());
  CHECK_FALSE(none.miou.has_value());

  // perfect prediction
  ConfusionCounts perfect(3);
  perfect.occ_tp = 5;
  perfect.tp = {2, 3, 2};
  const auto pm = metrics_from_counts(perfect);
  CHECK(*pm.recall == 1.0);
  CHECK(*pm.iou == 1.0);
  CHECK(*pm.miou == 1.0);
}

TEST_CASE("miou skips classes absent from both grids and stays bounded") {
  Rng rng(83);
  const ClassTable table = ClassTable::generic(6);
  const LabeledGrid gt = rand_labels({4, 4, 2}, 3, 0.0, rng);   // classes 0..2 only
  const LabeledGrid pred = rand_labels({4, 4, 2}, 3, 0.0, rng);
  const auto c = confusion_counts(pred, gt, whole(gt), table);
  const auto m = metrics_from_counts(c);
  REQUIRE(m.miou.has_value());

  double lo = 1.0, hi = 0.0;
  int64_t evaluated = 0;
  for (int64_t cls = 1; cls < 6; ++cls) {
    const auto u = static_cast<size_t>(cls);
    const int64_t denom = c.tp[u] + c.fp[u] + c.fn[u];
    if (denom == 0) continue;
    const double iou = static_cast<double>(c.tp[u]) / static_cast<double>(denom);
    lo = std::min(lo, iou);
    hi = std::max(hi, iou);
    ++evaluated;
  }
  CHECK(evaluated == 2);  // classes 1 and 2
  CHECK(*m.miou >= lo - 1e-12);
  CHECK(*m.miou <= hi + 1e-12);
}

TEST_CASE("bin report edge configurations") {
  Rng rng(84);
  const ClassTable table = ClassTable::generic(4);
  const LabeledGrid gt = rand_labels({6, 4, 2}, 4, 0.0, rng);
  const LabeledGrid pred = rand_labels({6, 4, 2}, 4, 0.0, rng);

  // bin per slab
  const auto per_slab = axis_bin_report(pred, gt, Axis::depth, 6, table);
  CHECK(per_slab.bins.size() == 6);

  // single global bin equals global metrics
  const auto global = axis_bin_report(pred, gt, Axis::depth, 1, table);
  const auto want = metrics_from_counts(confusion_counts(pred, gt, whole(gt), table));
  CHECK(global.bins.size() == 1);
  CHECK(*global.bins[0].m.iou == doctest::Approx(*want.iou));

  CHECK_THROWS_AS(axis_bin_report(pred, gt, Axis::depth, 0, table), std::invalid_argument);
}

TEST_CASE("bins conserve counts against the global tally") {
  Rng rng(85);
  const ClassTable table = ClassTable::generic(5);
  for (int trial = 0; trial < 10; ++trial) {
    const LabeledGrid gt = rand_labels({8, 6, 4}, 5, 0.15, rng);
    const LabeledGrid pred = rand_labels({8, 6, 4}, 5, 0.0, rng);
    for (Axis axis : {Axis::depth, Axis::width, Axis::height}) {
      const int64_t extent = gt.dims[static_cast<size_t>(axis)];
      const int64_t bins = trial % 2 ? extent : 3;
      const int64_t width = (extent + bins - 1) / bins;
      ConfusionCounts sum(5);
      for (int64_t b = 0; b < bins; ++b) {
        Region r = whole(gt);
        r.lo[static_cast<size_t>(axis)] = std::min(b * width, extent);
        r.hi[static_cast<size_t>(axis)] = std::min((b + 1) * width, extent);
        sum += confusion_counts(pred, gt, r, table);
      }
      const auto global = confusion_counts(pred, gt, whole(gt), table);
      CHECK(counts_equal(sum, global));
    }
  }
}

TEST_CASE("segment report pools quarter ranges") {
  Rng rng(86);
  const ClassTable table = ClassTable::generic(4);
  const LabeledGrid gt = rand_labels({8, 8, 4}, 4, 0.1, rng);
  const LabeledGrid pred = rand_labels({8, 8, 4}, 4, 0.0, rng);

  const auto rep = segment_report(pred, gt, Axis::depth, table);
  CHECK(rep.rows[0].range == std::array<int64_t, 2>{0, 2});
  CHECK(rep.rows[1].range == std::array<int64_t, 2>{2, 4});
  CHECK(rep.rows[2].range == std::array<int64_t, 2>{4, 6});
  CHECK(rep.rows[3].range == std::array<int64_t, 2>{6, 8});
  for (int s = 0; s < 4; ++s) {
    Region r = whole(gt);
    r.lo[0] = rep.rows[static_cast<size_t>(s)].range[0];
    r.hi[0] = rep.rows[static_cast<size_t>(s)].range[1];
    const auto want = metrics_from_counts(brute_counts(pred, gt, r, table));
    const auto& got = rep.rows[static_cast<size_t>(s)].m;
    CHECK(got.iou.has_value() == want.iou.has_value());
    if (want.iou) CHECK(*got.iou == doctest::Approx(*want.iou));
    if (want.miou) CHECK(*got.miou == doctest::Approx(*want.miou));
  }

  // perfect prediction: every defined cell is 1
  const auto perfect = segment_report(gt, gt, Axis::height, table);
  for (const auto& row : perfect.rows) {
    if (row.m.recall) CHECK(*row.m.recall == 1.0);
    if (row.m.iou) CHECK(*row.m.iou == 1.0);
    if (row.m.miou) CHECK(*row.m.miou == 1.0);
  }

  const LabeledGrid small = LabeledGrid::filled({3, 4, 4}, 0);
  CHECK_THROWS_AS(segment_report(small, small, Axis::depth, table), std::invalid_argument);
}

TEST_CASE("bin metrics are invariant to within-bin shuffles") {
  Rng rng(87);
  const ClassTable table = ClassTable::generic(4);
  const LabeledGrid gt = rand_labels({4, 4, 4}, 4, 0.1, rng);
  const LabeledGrid pred = rand_labels({4, 4, 4}, 4, 0.0, rng);

  // shuffle voxels inside each depth slab (simultaneously in pred and gt)
  LabeledGrid gt2 = gt, pred2 = pred;
  for (int64_t x = 0; x < 4; ++x) {
    std::vector<int64_t> order;
    for (int64_t i = 0; i < 16; ++i) order.push_back(i);
    for (int64_t i = 15; i > 0; --i) std::swap(order[static_cast<size_t>(i)],
                                               order[static_cast<size_t>(rng.below(i + 1))]);
    for (int64_t i = 0; i < 16; ++i) {
      const int64_t src = order[static_cast<size_t>(i)];
      gt2.labels[static_cast<size_t>(x * 16 + i)] = gt.labels[static_cast<size_t>(x * 16 + src)];
      pred2.labels[static_cast<size_t>(x * 16 + i)] =
          pred.labels[static_cast<size_t>(x * 16 + src)];
    }
  }
  const auto a = axis_bin_report(pred, gt, Axis::depth, 4, table);
  const auto b = axis_bin_report(pred2, gt2, Axis::depth, 4, table);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(a.bins[i].m.iou == b.bins[i].m.iou);
    CHECK(a.bins[i].m.miou == b.bins[i].m.miou);
    CHECK(a.bins[i].occupied_gt == b.bins[i].occupied_gt);
  }
}

TEST_CASE("dimension mismatches are rejected") {
  const ClassTable table = ClassTable::generic(3);
  const LabeledGrid a = LabeledGrid::filled({2, 2, 2}, 0);
  const LabeledGrid b = LabeledGrid::filled({2, 2, 3}, 0);
  CHECK_THROWS_AS(confusion_counts(a, b, Region{}, table), std::invalid_argument);
}
