#include "scanssc/scan_loss.hpp"

#include <stdexcept>

namespace scanssc::loss {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

ad::CumMode mode_for(Axis axis, bool flipped) {
  switch (axis) {
    case Axis::depth:
      return flipped ? ad::CumMode::prefix : ad::CumMode::suffix;
    case Axis::width:
      // reflection swaps the piecewise boundary branch of the middle slice
      return flipped ? ad::CumMode::width_hi : ad::CumMode::width_lo;
    case Axis::height:
      return flipped ? ad::CumMode::suffix : ad::CumMode::prefix;
  }
  fail("bad axis");
}

void check_logits(const Tensor& logits) {
  if (logits.rank() != 4)
    fail("cumulative_average: expected [X,Y,Z,P] logits, got " + ad::shape_str(logits.shape()));
}

}  // namespace

CumulativeLogits cumulative_average(const Tensor& logits, Axis axis, bool flipped) {
  check_logits(logits);
  CumulativeLogits out;
  out.direction = {axis, flipped};
  out.values = ad::cumavg(logits, static_cast<int>(axis), mode_for(axis, flipped));
  return out;
}

CumulativeLogits cumulative_average_depth(const Tensor& logits) {
  return cumulative_average(logits, Axis::depth, false);
}
CumulativeLogits cumulative_average_width(const Tensor& logits) {
  return cumulative_average(logits, Axis::width, false);
}
CumulativeLogits cumulative_average_height(const Tensor& logits) {
  return cumulative_average(logits, Axis::height, false);
}

CumulativeTargets cumulative_targets(const LabeledGrid& gt, Axis axis, const ClassTable& table,
                                     bool flipped) {
  gt.validate(table);
  const int64_t classes = static_cast<int64_t>(table.count());
  CumulativeTargets out;
  out.direction = {axis, flipped};
  out.dims = gt.dims;
  out.classes = classes;
  out.dist.assign(static_cast<size_t>(out.positions() * classes), 0.0);
  out.valid_mass.assign(static_cast<size_t>(out.positions()), 0);

  const int axis_i = static_cast<int>(axis);
  const int64_t n = gt.dims[static_cast<size_t>(axis_i)];

  // boundary between prefix and suffix windows, as in the logit operator
  int64_t boundary = 0;
  switch (axis) {
    case Axis::depth:
      boundary = flipped ? n : 0;
      break;
    case Axis::width:
      boundary = flipped ? (n + 1) / 2 : n / 2;
      break;
    case Axis::height:
      boundary = flipped ? 0 : n;
      break;
  }

  // iterate 1-D lines along the accumulation axis
  std::array<int64_t, 3> strides{gt.dims[1] * gt.dims[2], gt.dims[2], 1};
  const int64_t line_stride = strides[static_cast<size_t>(axis_i)];
  int64_t outer_ext = 1, inner_ext = 1;
  for (int d = 0; d < 3; ++d) {
    if (d < axis_i) outer_ext *= gt.dims[static_cast<size_t>(d)];
    if (d > axis_i) inner_ext *= gt.dims[static_cast<size_t>(d)];
  }

  std::vector<double> hist(static_cast<size_t>(classes));
  for (int64_t line = 0; line < outer_ext * inner_ext; ++line) {
    const int64_t base = (line / inner_ext) * n * inner_ext + line % inner_ext;

    auto accumulate_window = [&](int64_t from, int64_t to, int64_t step) {
      // running histogram over voxels from..to (inclusive), stepping by
      // `step`; emits at each position in turn
      std::fill(hist.begin(), hist.end(), 0.0);
      int64_t count = 0;
      for (int64_t i = from; i != to + step; i += step) {
        const int64_t pos = base + i * line_stride;
        const uint16_t label = gt.labels[static_cast<size_t>(pos)];
        if (label != table.ignore_label) {
          hist[static_cast<size_t>(label)] += 1.0;
          ++count;
        }
        out.valid_mass[static_cast<size_t>(pos)] = count;
        if (count > 0) {
          double* pd = out.dist.data() + pos * classes;
          for (int64_t cidx = 0; cidx < classes; ++cidx)
            pd[cidx] = hist[static_cast<size_t>(cidx)] / static_cast<double>(count);
        }
      }
    };

    // prefix windows grow upward from index 0; suffix windows grow
    // downward from index n-1
    if (boundary > 0) accumulate_window(0, boundary - 1, 1);
    if (boundary < n) accumulate_window(n - 1, boundary, -1);
  }
  return out;
}

Tensor scan_ce(const CumulativeLogits& cl, const CumulativeTargets& ct, bool* no_valid_positions) {
  if (cl.direction.axis != ct.direction.axis || cl.direction.flipped != ct.direction.flipped)
    fail("scan_ce: logit and target accumulations disagree on axis/direction");
  const Tensor& v = cl.values;
  if (v.rank() != 4 || v.dim(0) != ct.dims[0] || v.dim(1) != ct.dims[1] || v.dim(2) != ct.dims[2] ||
      v.dim(3) != ct.classes)
    fail("scan_ce: logit shape " + ad::shape_str(v.shape()) + " does not match targets");

  int64_t valid = 0;
  for (int64_t m : ct.valid_mass)
    if (m > 0) ++valid;
  if (no_valid_positions) *no_valid_positions = valid == 0;
  if (valid == 0) return Tensor::scalar(0.0);

  // -sum_c t_c * log softmax(l)_c, averaged over valid positions. The
  // target weights fold the 1/valid factor so a single sum finishes it.
  std::vector<double> w(ct.dist.size());
  const double inv = 1.0 / static_cast<double>(valid);
  for (int64_t pos = 0; pos < ct.positions(); ++pos) {
    const double m = ct.valid_mass[static_cast<size_t>(pos)] > 0 ? inv : 0.0;
    for (int64_t c = 0; c < ct.classes; ++c)
      w[static_cast<size_t>(pos * ct.classes + c)] =
          -m * ct.dist[static_cast<size_t>(pos * ct.classes + c)];
  }
  const Tensor weights =
      ad::Tensor::constant({ct.dims[0], ct.dims[1], ct.dims[2], ct.classes}, std::move(w));
  return ad::sum_all(ad::mul(ad::log_softmax(v, 3), weights));
}

ScanLossTerms scan_loss_total(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table,
                              const ScanLossConfig& config) {
  check_logits(logits);
  if (logits.dim(0) != gt.dims[0] || logits.dim(1) != gt.dims[1] || logits.dim(2) != gt.dims[2])
    fail("scan_loss_total: logit dims " + ad::shape_str(logits.shape()) +
         " do not match the label grid");
  if (logits.dim(3) != static_cast<int64_t>(table.count()))
    fail("scan_loss_total: class extent does not match the class table");

  ScanLossTerms out;
  out.by_axis = {0.0, 0.0, 0.0};
  Tensor total;
  for (int a = 0; a < 3; ++a) {
    if (!config.axis_enabled[static_cast<size_t>(a)]) continue;
    const Axis axis = static_cast<Axis>(a);
    const bool flip = config.flipped[static_cast<size_t>(a)];
    const CumulativeLogits cl = cumulative_average(logits, axis, flip);
    const CumulativeTargets ct = cumulative_targets(gt, axis, table, flip);
    const Tensor term = scan_ce(cl, ct);
    out.by_axis[static_cast<size_t>(a)] = term.value();
    total = total.defined() ? ad::add(total, term) : term;
  }
  out.total = total.defined() ? total : Tensor::scalar(0.0);
  return out;
}

}  // namespace scanssc::loss
