#include "scanssc/gradcheck_runner.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "scanssc/objective.hpp"
#include "scanssc/rng.hpp"
#include "scanssc/scan_module.hpp"
#include "scanssc/train.hpp"

namespace scanssc::train {

namespace {

using ad::Tape;
using ad::Tensor;

Tensor rand_tensor(ad::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(static_cast<size_t>(ad::shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::constant(std::move(shape), std::move(v));
}

// keeps |x| away from the relu kink so central differences stay valid
Tensor rand_tensor_off_kink(ad::Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(ad::shape_numel(shape)));
  for (double& x : v) {
    x = rng.uniform(0.05, 2.0);
    if (rng.unit() < 0.5) x = -x;
  }
  return Tensor::constant(std::move(shape), std::move(v));
}

double check(const ad::ScalarFn& f, const std::vector<Tensor>& params) {
  return ad::grad_check(f, params, 1e-5).max_rel_error;
}

// weights a tensor against fixed random constants so the scalar objective
// is sensitive to every entry
Tensor weighted_sum(const Tensor& t, Rng& rng) {
  std::vector<double> w(t.data().size());
  for (double& x : w) x = rng.uniform(0.5, 1.5);
  return ad::sum_all(ad::mul(t, Tensor::constant(t.shape(), std::move(w))));
}

std::vector<GradCheckGroup> primitive_groups(uint64_t seed) {
  std::vector<GradCheckGroup> out;
  Rng rng(seed);
  auto add_group = [&](const std::string& name, double err) { out.push_back({name, err}); };

  {
    const Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({3, 4}, rng);
    const Tensor bs = rand_tensor({1, 4}, rng);  // broadcast operand
    add_group("prim.add", check([](Tape&, const std::vector<Tensor>& p) {
                return ad::sum_all(ad::add(p[0], p[1]));
              }, {a, b}));
    add_group("prim.sub", check([](Tape&, const std::vector<Tensor>& p) {
                return ad::sum_all(ad::sub(p[0], p[1]));
              }, {a, b}));
    add_group("prim.mul", check([](Tape&, const std::vector<Tensor>& p) {
                return ad::sum_all(ad::mul(p[0], p[1]));
              }, {a, bs}));
  }
  {
    Tensor a = rand_tensor({3, 4}, rng);
    std::vector<double> bv(4);
    for (double& x : bv) {
      x = rng.uniform(0.5, 2.0);
      if (rng.unit() < 0.5) x = -x;
    }
    const Tensor b = Tensor::constant({1, 4}, std::move(bv));
    add_group("prim.div", check([](Tape&, const std::vector<Tensor>& p) {
                return ad::sum_all(ad::div(p[0], p[1]));
              }, {a, b}));
  }
  {
    const Tensor a = rand_tensor_off_kink({4, 5}, rng);
    add_group("prim.relu", check([](Tape&, const std::vector<Tensor>& p) {
                return ad::sum_all(ad::relu(p[0]));
              }, {a}));
    const Tensor pos = rand_tensor({4, 3}, rng, 0.5, 3.0);
    add_group("prim.log", check([](Tape&, const std::vector<Tensor>& p) {
                return ad::sum_all(ad::log(p[0]));
              }, {pos}));
    add_group("prim.scale_neg", check([](Tape&, const std::vector<Tensor>& p) {
                return ad::sum_all(ad::scale(ad::neg(ad::add_scalar(p[0], 0.3)), 1.7));
              }, {a}));
  }
  {
    const Tensor a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({2, 4, 2}, rng);
    const Tensor b2 = rand_tensor({4, 2}, rng);
    add_group("prim.matmul", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(7);
                return weighted_sum(ad::matmul(p[0], p[1]), local);
              }, {a, b}));
    add_group("prim.matmul_bcast", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(8);
                return weighted_sum(ad::matmul(p[0], p[1]), local);
              }, {a, b2}));
  }
  {
    const Tensor x = rand_tensor({2, 3, 4}, rng), w = rand_tensor({4, 3}, rng),
                 b = rand_tensor({3}, rng);
    add_group("prim.linear", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(9);
                return weighted_sum(ad::linear(p[0], p[1], p[2]), local);
              }, {x, w, b}));
  }
  {
    const Tensor x = rand_tensor({3, 5}, rng);
    add_group("prim.softmax", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(10);
                return weighted_sum(ad::softmax(p[0], 1), local);
              }, {x}));
    add_group("prim.log_softmax", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(11);
                return weighted_sum(ad::log_softmax(p[0], 1), local);
              }, {x}));
  }
  {
    const Tensor x = rand_tensor({4, 6}, rng), g = rand_tensor({6}, rng, 0.5, 1.5),
                 b = rand_tensor({6}, rng);
    add_group("prim.layer_norm", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(12);
                return weighted_sum(ad::layer_norm(p[0], p[1], p[2], 1e-5), local);
              }, {x, g, b}));
  }
  {
    const Tensor x = rand_tensor({3, 4, 2}, rng);
    add_group("prim.reductions", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(13);
                const Tensor m = ad::mean(p[0], 1);
                const Tensor s = ad::sum(p[0], 0, true);
                return ad::add(weighted_sum(m, local), ad::mean_all(s));
              }, {x}));
  }
  {
    const Tensor a = rand_tensor({2, 2, 3}, rng), b = rand_tensor({2, 3, 3}, rng);
    add_group("prim.concat_narrow", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(14);
                const Tensor cat = ad::concat({p[0], p[1]}, 1);
                return weighted_sum(ad::narrow(cat, 1, 1, 3), local);
              }, {a, b}));
  }
  {
    const Tensor x = rand_tensor({2, 3, 4}, rng);
    add_group("prim.layout", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(15);
                const Tensor t = ad::permute(p[0], {2, 0, 1});
                const Tensor r = ad::reshape(t, {4, 6});
                return weighted_sum(ad::reverse_axis(r, 1), local);
              }, {x}));
  }
  {
    const Tensor x = rand_tensor({3, 3, 2, 2}, rng);
    const Tensor w = rand_tensor({2, 2, 3, 3, 3}, rng, -0.5, 0.5);
    const Tensor b = rand_tensor({2}, rng);
    add_group("prim.conv3d_zero", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(16);
                return weighted_sum(ad::conv3d(p[0], p[1], p[2], ad::PaddingMode::zero), local);
              }, {x, w, b}));
    add_group("prim.conv3d_reflect", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(17);
                return weighted_sum(ad::conv3d(p[0], p[1], p[2], ad::PaddingMode::reflect), local);
              }, {x, w, b}));
  }
  {
    const Tensor x = rand_tensor({3, 4, 2, 2}, rng);
    add_group("prim.avgpool", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(18);
                return weighted_sum(ad::avgpool_half(p[0]), local);
              }, {x}));
    add_group("prim.resize_up", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(19);
                return weighted_sum(ad::resize_trilinear(p[0], {5, 6, 3}), local);
              }, {x}));
    add_group("prim.resize_down", check([](Tape&, const std::vector<Tensor>& p) {
                Rng local(20);
                return weighted_sum(ad::resize_trilinear(p[0], {2, 3, 1}), local);
              }, {x}));
  }
  {
    const Tensor x = rand_tensor({4, 5, 3, 2}, rng);
    const ad::CumMode modes[4] = {ad::CumMode::prefix, ad::CumMode::suffix, ad::CumMode::width_lo,
                                  ad::CumMode::width_hi};
    const char* names[4] = {"prefix", "suffix", "width_lo", "width_hi"};
    for (int m = 0; m < 4; ++m) {
      double worst = 0.0;
      for (int axis = 0; axis < 3; ++axis) {
        const ad::CumMode mode = modes[m];
        worst = std::max(worst, check([axis, mode](Tape&, const std::vector<Tensor>& p) {
                           Rng local(21);
                           return weighted_sum(ad::cumavg(p[0], axis, mode), local);
                         }, {x}));
      }
      add_group(std::string("prim.cumavg_") + names[m], worst);
    }
  }
  {
    const Tensor scores = rand_tensor({2, 4, 4}, rng);
    std::vector<uint8_t> blocked(16, 0);
    for (auto& v : blocked) v = rng.unit() < 0.4 ? 1 : 0;
    for (int i = 0; i < 4; ++i) blocked[static_cast<size_t>(i * 4 + i)] = 0;  // keep rows alive
    add_group("prim.masked_softmax", check([blocked](Tape&, const std::vector<Tensor>& p) {
                Rng local(22);
                const Tensor s = ad::masked_fill_blocked(p[0], blocked, 4);
                return weighted_sum(ad::softmax(s, 2), local);
              }, {scores}));
  }
  return out;
}

struct Fixture {
  RunConfig cfg;
  ClassTable table;
  GridDims dims;
  LabeledGrid gt;
  model::ScanModuleConfig mcfg;
  model::ScanModuleParams params;
  model::ScanMasks masks;
  Tensor feature;
  loss::ScanLossConfig lcfg;
  loss::LossWeights weights;
};

Fixture make_fixture(const RunConfig& cfg) {
  Fixture fx;
  fx.cfg = cfg;
  fx.cfg.validate();
  for (int64_t e : cfg.target_dims)
    if (e > 4) throw std::invalid_argument("gradcheck requires tiny dims (every extent <= 4)");
  if (cfg.channels > 8) throw std::invalid_argument("gradcheck requires channels <= 8");

  fx.dims = cfg.grid_dims();
  fx.table = cfg.num_classes == 20 ? ClassTable::semantic_kitti()
                                   : ClassTable::generic(static_cast<size_t>(cfg.num_classes));
  Rng rng(cfg.seed ^ 0x67a4dc3cULL);
  fx.gt = LabeledGrid::filled(fx.dims.target, 0);
  for (auto& l : fx.gt.labels)
    l = rng.unit() < 0.15 ? fx.table.ignore_label
                          : static_cast<uint16_t>(rng.below(static_cast<int64_t>(fx.table.count())));

  fx.mcfg = cfg.module_config();
  fx.params = model::init_params(fx.mcfg, cfg.seed);
  fx.masks = model::build_masks(fx.mcfg);
  fx.feature = rand_tensor({fx.dims.proposal[0], fx.dims.proposal[1], fx.dims.proposal[2],
                            fx.dims.channels}, rng, -1.0, 1.0);
  fx.lcfg = cfg.scan_loss_config();
  fx.weights = {cfg.lambda_d, cfg.lambda_scan};
  return fx;
}

Tensor random_logits(const Fixture& fx, uint64_t seed) {
  Rng rng(seed);
  return rand_tensor({fx.dims.target[0], fx.dims.target[1], fx.dims.target[2],
                      static_cast<int64_t>(fx.table.count())}, rng);
}

GradCheckGroup scan_loss_group(const Fixture& fx) {
  const Tensor logits = random_logits(fx, fx.cfg.seed + 101);
  const double err = check(
      [&fx](Tape&, const std::vector<Tensor>& p) {
        return loss::scan_loss_total(p[0], fx.gt, fx.table, fx.lcfg).total;
      },
      {logits});
  return {"scan-loss", err};
}

GradCheckGroup objective_group(const Fixture& fx) {
  const Tensor logits = random_logits(fx, fx.cfg.seed + 202);
  const double err = check(
      [&fx](Tape&, const std::vector<Tensor>& p) {
        return loss::total_loss(p[0], fx.gt, fx.table, fx.lcfg, fx.weights, fx.cfg.depth_term)
            .total;
      },
      {logits});
  return {"objective", err};
}

std::vector<GradCheckGroup> module_groups(const Fixture& fx) {
  // group names by parameter prefix, e.g. block.dep or head; the feature
  // volume forms its own group
  model::ScanModuleParams scratch = fx.params;
  auto named = model::collect_params(scratch);
  std::map<std::string, std::vector<int>> groups;
  groups["feature"] = {-1};
  for (size_t i = 0; i < named.size(); ++i) {
    const std::string& n = named[i].name;
    const size_t first = n.find('.');
    const size_t second = n.find('.', first + 1);
    const std::string key = second == std::string::npos ? n.substr(0, first) : n.substr(0, second);
    groups[key].push_back(static_cast<int>(i));
  }

  std::vector<GradCheckGroup> out;
  for (const auto& [key, members] : groups) {
    std::vector<Tensor> init;
    for (int id : members)
      init.push_back(id < 0 ? fx.feature : *named[static_cast<size_t>(id)].tensor);

    const auto fn = [&fx, &members](Tape& tape, const std::vector<Tensor>& leaves) -> Tensor {
      (void)tape;
      model::ScanModuleParams p = fx.params;
      Tensor feat = fx.feature;
      auto local_named = model::collect_params(p);
      for (size_t k = 0; k < members.size(); ++k) {
        if (members[k] < 0)
          feat = leaves[k];
        else
          *local_named[static_cast<size_t>(members[k])].tensor = leaves[k];
      }
      if (p.config.share_branch_params) {
        p.blocks[1] = p.blocks[0];
        p.blocks[2] = p.blocks[0];
        p.mixers[1] = p.mixers[0];
        p.mixers[2] = p.mixers[0];
      }
      const Tensor mixed = model::scan_module_forward(feat, fx.masks, p);
      const Tensor logits = model::predict_head(mixed, p.head, fx.dims, p.config.layer_norm_epsilon);
      return loss::total_loss(logits, fx.gt, fx.table, fx.lcfg, fx.weights, fx.cfg.depth_term)
          .total;
    };
    out.push_back({"module." + key, check(fn, init)});
  }
  return out;
}

// forward x^2 with a deliberately wrong backward (3x instead of 2x); the
// negative control for the gradcheck exit path
Tensor bad_square(const Tensor& x) {
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] * dx[i];
  if (!x.on_tape()) return Tensor::constant(x.shape(), std::move(out));
  const int nx = x.node();
  auto px = x.shared_data();
  return x.tape()->record(x.shape(), std::move(out),
                          [nx, px](Tape& t, const std::vector<double>& g) {
                            for (size_t i = 0; i < g.size(); ++i)
                              t.accumulate(nx, static_cast<int64_t>(i), 3.0 * (*px)[i] * g[i]);
                          });
}

GradCheckGroup fixture_bad_group(uint64_t seed) {
  Rng rng(seed);
  const Tensor x = rand_tensor({3, 3}, rng, 0.5, 2.0);
  const double err = check(
      [](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(bad_square(p[0])); }, {x});
  return {"fixture-bad", err};
}

}  // namespace

GradCheckRun run_gradient_checks(const RunConfig& config, const std::string& module_filter) {
  GradCheckRun run;
  run.threshold = 1e-3;

  const bool all = module_filter.empty() || module_filter == "all";
  if (module_filter == "fixture-bad") {
    run.groups.push_back(fixture_bad_group(config.seed));
  } else {
    if (all || module_filter == "primitives") {
      auto prim = primitive_groups(config.seed);
      run.groups.insert(run.groups.end(), prim.begin(), prim.end());
    }
    if (all || module_filter == "scan-loss" || module_filter == "objective" ||
        module_filter == "scan-module") {
      const Fixture fx = make_fixture(config);
      if (all || module_filter == "scan-loss") run.groups.push_back(scan_loss_group(fx));
      if (all || module_filter == "objective") run.groups.push_back(objective_group(fx));
      if (all || module_filter == "scan-module") {
        auto mg = module_groups(fx);
        run.groups.insert(run.groups.end(), mg.begin(), mg.end());
      }
    }
    if (run.groups.empty())
      throw std::invalid_argument(
          "unknown gradcheck module '" + module_filter +
          "' (primitives|scan-loss|objective|scan-module|fixture-bad|all)");
  }

  run.passed = true;
  for (const GradCheckGroup& g : run.groups) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-24s max_rel_err = %.3e%s\n", g.name.c_str(),
                  g.max_rel_error, g.max_rel_error <= run.threshold ? "" : "  FAIL");
    run.text_report += line;
    if (g.max_rel_error > run.threshold) run.passed = false;
  }
  return run;
}

}  // namespace scanssc::train
