#include "scanssc/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "scanssc/charts.hpp"
#include "scanssc/formats.hpp"
#include "scanssc/rng.hpp"
#include "scanssc/scan_module.hpp"

namespace scanssc::train {

namespace {

using ad::Tensor;

struct ForwardResult {
  Tensor logits;
  loss::TotalLossResult loss;
};

metrics::MetricTriple grid_metrics(const LogitGrid& logits, const LabeledGrid& gt,
                                   const ClassTable& table) {
  const LabeledGrid pred = argmax_labels(logits);
  metrics::Region all;
  all.hi = gt.dims;
  return metrics::metrics_from_counts(metrics::confusion_counts(pred, gt, all, table));
}

}  // namespace

std::vector<double> frequency_weights(const LabeledGrid& gt, const ClassTable& table) {
  std::vector<int64_t> hist(table.count(), 0);
  int64_t valid = 0;
  for (uint16_t l : gt.labels) {
    if (l == table.ignore_label) continue;
    hist[l]++;
    ++valid;
  }
  std::vector<double> w(table.count());
  for (size_t c = 0; c < table.count(); ++c) {
    const double freq = valid > 0 ? static_cast<double>(hist[c]) / static_cast<double>(valid) : 0.0;
    w[c] = 1.0 / std::log(1.02 + freq);
  }
  return w;
}

TrainResult train_toy(const RunConfig& config, const LabeledGrid& gt, const std::string& out_dir) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();

  const GridDims dims = config.grid_dims();
  if (gt.dims != dims.target)
    throw std::invalid_argument("ground-truth grid dims do not match target_dims");

  ClassTable table = config.num_classes == 20 ? ClassTable::semantic_kitti()
                                              : ClassTable::generic(static_cast<size_t>(config.num_classes));
  gt.validate(table);

  std::optional<std::vector<double>> ce_weights;
  if (config.ce_weighting == "frequency") {
    ce_weights = frequency_weights(gt, table);
    table.frequency_weights = ce_weights;
  }

  const model::ScanModuleConfig mcfg = config.module_config();
  model::ScanModuleParams params = model::init_params(mcfg, config.seed);
  const model::ScanMasks scan_masks = model::build_masks(mcfg);
  const loss::ScanLossConfig lcfg = config.scan_loss_config();
  const loss::LossWeights weights{config.lambda_d, config.lambda_scan};

  // learnable input volume
  Rng feat_rng(config.seed ^ 0x5eedf00dULL);
  std::vector<double> feat(static_cast<size_t>(dims.proposal_voxels() * dims.channels));
  for (double& v : feat) v = feat_rng.uniform(-0.5, 0.5);
  Tensor feature = Tensor::constant({dims.proposal[0], dims.proposal[1], dims.proposal[2],
                                     dims.channels}, std::move(feat));

  auto forward = [&](ad::Tape& tape, Tensor& feat_leaf,
                     model::ScanModuleParams& bound) -> ForwardResult {
    feat_leaf = tape.leaf(feature);
    bound = model::bind_to_tape(params, tape);
    const Tensor mixed = model::scan_module_forward(feat_leaf, scan_masks, bound);
    const Tensor logits = model::predict_head(mixed, bound.head, dims, mcfg.layer_norm_epsilon);
    loss::TotalLossResult lr =
        loss::total_loss(logits, gt, table, lcfg, weights, config.depth_term, ce_weights);
    return {logits, std::move(lr)};
  };

  TrainResult result;

  // momentum state: one velocity buffer per learnable tensor (feature first)
  std::vector<std::vector<double>> velocity;
  {
    auto named = model::collect_params(params);
    velocity.resize(named.size() + 1);
    velocity[0].assign(feature.data().size(), 0.0);
    for (size_t i = 0; i < named.size(); ++i)
      velocity[i + 1].assign(named[i].tensor->data().size(), 0.0);
  }

  LogitGrid last_logits;
  for (int64_t step = 0;; ++step) {
    ad::Tape tape;
    Tensor feat_leaf;
    model::ScanModuleParams bound;
    ForwardResult fr = forward(tape, feat_leaf, bound);

    if (!std::isfinite(fr.loss.report.total)) {
      result.diverged = true;
      result.diverged_step = step;
      break;
    }
    result.reports.push_back(fr.loss.report);
    last_logits = LogitGrid::from_tensor(fr.logits.detached());
    if (step == 0) result.initial_metrics = grid_metrics(last_logits, gt, table);
    if (step >= config.steps) break;

    tape.backward(fr.loss.total);

    // SGD with momentum: v = mu*v - lr*g; p += v
    auto update = [&](Tensor& master, const Tensor& leaf, std::vector<double>& vel) {
      const std::vector<double> g = tape.grad(leaf);
      std::vector<double> next = master.data();
      for (size_t i = 0; i < next.size(); ++i) {
        vel[i] = config.momentum * vel[i] - config.learning_rate * g[i];
        next[i] += vel[i];
      }
      master = Tensor::constant(master.shape(), std::move(next));
    };
    update(feature, feat_leaf, velocity[0]);
    auto master_named = model::collect_params(params);
    auto bound_named = model::collect_params(bound);
    for (size_t i = 0; i < master_named.size(); ++i)
      update(*master_named[i].tensor, *bound_named[i].tensor, velocity[i + 1]);
  }

  if (!result.diverged) {
    result.final_logits = last_logits;
    result.final_metrics = grid_metrics(last_logits, gt, table);
  }

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    std::string jsonl;
    for (const loss::LossReport& r : result.reports) jsonl += r.to_json() + "\n";
    io::write_text_file((dir / "loss_log.jsonl").string(), jsonl);
    io::write_text_file((dir / "config.txt").string(), config.serialize());

    if (!result.diverged) {
      int64_t occupied_gt = 0;
      for (uint16_t l : gt.labels)
        if (l != table.ignore_label && l != 0) ++occupied_gt;
      io::write_logit_grid((dir / "final_logits.sscl").string(), result.final_logits);
      io::write_text_file((dir / "metrics_initial.json").string(),
                          io::global_metrics_json(result.initial_metrics, occupied_gt));
      io::write_text_file((dir / "metrics_final.json").string(),
                          io::global_metrics_json(result.final_metrics, occupied_gt));
      const LabeledGrid pred = argmax_labels(result.final_logits);
      for (int a = 0; a < 3; ++a) {
        const Axis axis = static_cast<Axis>(a);
        if (gt.dims[static_cast<size_t>(a)] < 4) continue;  // segment tables need 4 slabs
        const auto rep = metrics::segment_report(pred, gt, axis, table);
        io::write_text_file((dir / (std::string("segments_") + axis_name(axis) + ".csv")).string(),
                            io::segment_report_csv(rep));
      }
    }

    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t_start);
    std::string log = "steps=" + std::to_string(result.reports.empty() ? 0 : result.reports.size() - 1) +
                      " elapsed_ms=" + std::to_string(elapsed.count()) + "\n";
    if (result.diverged)
      log += "diverged at step " + std::to_string(result.diverged_step) + "\n";
    io::write_text_file((dir / "run.log").string(), log);
  }
  return result;
}

}  // namespace scanssc::train
