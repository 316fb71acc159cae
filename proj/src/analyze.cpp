#include "scanssc/analyze.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include "scanssc/charts.hpp"
#include "scanssc/formats.hpp"
#include "scanssc/metrics.hpp"

namespace scanssc {

namespace {

ClassTable table_for(const LabeledGrid& pred, const LabeledGrid& gt) {
  uint16_t max_label = 0;
  auto scan = [&](const LabeledGrid& g) {
    for (uint16_t l : g.labels)
      if (l != 255) max_label = std::max(max_label, l);
  };
  scan(pred);
  scan(gt);
  if (max_label < 20) return ClassTable::semantic_kitti();
  return ClassTable::generic(static_cast<size_t>(max_label) + 1);
}

}  // namespace

void run_analyze(const AnalyzeOptions& options) {
  if (options.gt_path.empty()) throw std::invalid_argument("analyze: ground-truth path required");
  if (options.pred_path.empty() && options.logits_path.empty())
    throw std::invalid_argument("analyze: need a prediction grid or a logit grid");

  const LabeledGrid gt = io::read_voxel_grid(options.gt_path);
  LabeledGrid pred;
  if (!options.pred_path.empty()) {
    pred = io::read_voxel_grid(options.pred_path);
  } else {
    pred = argmax_labels(io::read_logit_grid(options.logits_path));
  }
  if (!options.logits_path.empty() && !options.pred_path.empty()) {
    const LogitGrid lg = io::read_logit_grid(options.logits_path);
    if (lg.dims != pred.dims)
      throw std::invalid_argument("analyze: logit grid dims do not match the prediction grid");
  }
  if (pred.dims != gt.dims)
    throw std::invalid_argument("analyze: prediction and ground-truth dims differ");

  const ClassTable table = table_for(pred, gt);

  namespace fs = std::filesystem;
  fs::create_directories(options.out_dir);
  const fs::path dir(options.out_dir);

  metrics::Region all;
  all.hi = gt.dims;
  const auto global_counts = metrics::confusion_counts(pred, gt, all, table);
  io::write_text_file((dir / "metrics.json").string(),
                      io::global_metrics_json(metrics::metrics_from_counts(global_counts),
                                              global_counts.occ_tp + global_counts.occ_fn));

  for (Axis axis : options.axes) {
    const std::string tag = axis_name(axis);
    const int64_t bins = options.bins[static_cast<size_t>(axis)];
    const auto bin_rep = metrics::axis_bin_report(pred, gt, axis, bins, table);
    io::write_text_file((dir / ("bins_" + tag + ".csv")).string(), io::bin_report_csv(bin_rep));
    io::write_text_file((dir / ("bins_" + tag + ".json")).string(), io::bin_report_json(bin_rep));
    io::write_text_file((dir / ("bins_" + tag + ".svg")).string(),
                        io::bin_report_svg(bin_rep, options.normalize_svg));

    if (gt.dims[static_cast<size_t>(axis)] >= 4) {  // four-segment tables need 4 slabs
      const auto seg_rep = metrics::segment_report(pred, gt, axis, table);
      io::write_text_file((dir / ("segments_" + tag + ".csv")).string(),
                          io::segment_report_csv(seg_rep));
      io::write_text_file((dir / ("segments_" + tag + ".json")).string(),
                          io::segment_report_json(seg_rep));
    }
  }
}

}  // namespace scanssc
