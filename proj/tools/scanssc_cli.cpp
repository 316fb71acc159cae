// Command-line driver for the scanssc shared library. Talks to the core
// exclusively through the C API.
//
// Exit codes: 0 success, 2 usage/input error, 3 training divergence,
// 4 gradient-check failure, 5 oracle deviation.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scanssc/scanssc_c.h"

namespace {

int status_to_exit(scanssc_status s) {
  switch (s) {
    case SCANSSC_OK:
      return 0;
    case SCANSSC_ERR_USAGE:
      return 2;
    case SCANSSC_ERR_DIVERGENCE:
      return 3;
    case SCANSSC_ERR_GRADCHECK:
      return 4;
    case SCANSSC_ERR_ORACLE:
      return 5;
    default:
      return 1;
  }
}

int finish(scanssc_status s) {
  if (s != SCANSSC_OK) std::cerr << "error: " << scanssc_last_error() << "\n";
  return status_to_exit(s);
}

struct ConfigHandle {
  scanssc_config* ptr = nullptr;
  ~ConfigHandle() { scanssc_config_free(ptr); }
};

// Loads --config if given, otherwise defaults; applies --set overrides.
int open_config(const std::string& path, const std::vector<std::string>& overrides,
                ConfigHandle& out) {
  const scanssc_status st =
      path.empty() ? scanssc_config_create(&out.ptr) : scanssc_config_load(path.c_str(), &out.ptr);
  if (st != SCANSSC_OK) return finish(st);
  for (const std::string& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      return 2;
    }
    const scanssc_status set_st =
        scanssc_config_set(out.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (set_st != SCANSSC_OK) return finish(set_st);
  }
  return 0;
}

std::string render_mask_ascii(const scanssc_mask* mask) {
  const int64_t L = scanssc_mask_length(mask);
  std::string out;
  for (int64_t i = 0; i < L; ++i) {
    for (int64_t j = 0; j < L; ++j) out += scanssc_mask_blocked(mask, i, j) == 1 ? '#' : '.';
    out += '\n';
  }
  return out;
}

std::string render_mask_pgm(const scanssc_mask* mask) {
  const int64_t L = scanssc_mask_length(mask);
  std::string out = "P2\n" + std::to_string(L) + " " + std::to_string(L) + "\n255\n";
  for (int64_t i = 0; i < L; ++i) {
    for (int64_t j = 0; j < L; ++j) {
      out += scanssc_mask_blocked(mask, i, j) == 1 ? "0" : "255";
      out += (j + 1 == L) ? '\n' : ' ';
    }
  }
  return out;
}

bool write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << content;
  return static_cast<bool>(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scanssc: cascade attention masks, scan losses, toy training and axis-binned "
               "analysis for semantic scene completion"};
  app.require_subcommand(1);

  // ---- masks ----
  std::string mask_axis, mask_out, mask_width_mode = "same_side", mask_margin_rule = "both";
  int64_t mask_length = 0;
  double mask_margin = 0.0;
  bool mask_flip = false, mask_pgm = false;
  auto* masks_cmd = app.add_subcommand("masks", "dump an axis mask as an ASCII grid (and PGM)");
  masks_cmd->add_option("--axis", mask_axis, "dep|wid|hgt")->required();
  masks_cmd->add_option("--length", mask_length, "sequence length L")->required();
  masks_cmd->add_option("--margin", mask_margin, "margin ratio in [0,1]")->default_val(0.0);
  masks_cmd->add_flag("--flip", mask_flip, "flip the mask along the axis");
  masks_cmd->add_option("--width-mode", mask_width_mode, "same_side|distance_rank");
  masks_cmd->add_option("--margin-rule", mask_margin_rule, "both|either");
  masks_cmd->add_flag("--pgm", mask_pgm, "also write a .pgm image next to the ASCII file");
  masks_cmd->add_option("--out", mask_out, "output path (ASCII grid)")->required();

  // ---- synth ----
  std::string synth_preset, synth_dims, synth_out;
  uint64_t synth_seed = 1;
  auto* synth_cmd = app.add_subcommand("synth", "generate a deterministic synthetic scene");
  synth_cmd->add_option("--preset", synth_preset, "corridor|blocks|random")->required();
  synth_cmd->add_option("--dims", synth_dims, "X,Y,Z")->required();
  synth_cmd->add_option("--seed", synth_seed, "RNG seed")->default_val(1);
  synth_cmd->add_option("--out", synth_out, "output .sscg path")->required();

  // ---- train-toy ----
  std::string train_config, train_gt, train_out;
  std::vector<std::string> train_sets;
  auto* train_cmd = app.add_subcommand("train-toy", "overfit the model to one scene");
  train_cmd->add_option("--config", train_config, "run config file (defaults when omitted)");
  train_cmd->add_option("--gt", train_gt, "ground-truth .sscg file")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--set", train_sets, "override config keys (key=value, repeatable)");

  // ---- gradcheck ----
  std::string gc_config, gc_module;
  std::vector<std::string> gc_sets;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--config", gc_config, "run config file (tiny default when omitted)");
  gc_cmd->add_option("--module", gc_module,
                     "primitives|scan-loss|objective|scan-module|fixture-bad|all");
  gc_cmd->add_option("--set", gc_sets, "override config keys (key=value, repeatable)");

  // ---- analyze ----
  std::string an_pred, an_gt, an_logits, an_axes = "dep,wid,hgt", an_bins = "256,256,32", an_out;
  bool an_norm = false;
  auto* an_cmd = app.add_subcommand("analyze", "axis-binned recall/IoU/mIoU reports and plots");
  an_cmd->add_option("--pred", an_pred, "prediction .sscg (optional when --logits is given)");
  an_cmd->add_option("--gt", an_gt, "ground-truth .sscg")->required();
  an_cmd->add_option("--logits", an_logits, "prediction logits .sscl");
  an_cmd->add_option("--axes", an_axes, "comma list of dep,wid,hgt")->capture_default_str();
  an_cmd->add_option("--bins", an_bins, "bin counts per axis")->capture_default_str();
  an_cmd->add_flag("--normalize", an_norm, "per-curve max normalization in the SVG");
  an_cmd->add_option("--out", an_out, "output directory")->required();

  // ---- oracle ----
  std::string or_suite, or_replay, or_repro = "oracle_repro.json";
  int64_t or_trials = 100;
  uint64_t or_seed = 1;
  auto* or_cmd = app.add_subcommand("oracle", "run brute-force comparison suites");
  or_cmd->add_option("--suite", or_suite, "masks|scanloss|cumavg|fusion");
  or_cmd->add_option("--trials", or_trials, "trial count")->default_val(100);
  or_cmd->add_option("--seed", or_seed, "base seed")->default_val(1);
  or_cmd->add_option("--repro", or_repro, "repro file path on failure")->capture_default_str();
  or_cmd->add_option("--replay", or_replay, "replay a repro file instead of running a suite");

  // ---- convert ----
  std::string cv_in, cv_out;
  auto* cv_cmd = app.add_subcommand("convert", "convert between .sscg/.sscl and flat CSV");
  cv_cmd->add_option("--in", cv_in, "input file")->required();
  cv_cmd->add_option("--out", cv_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (masks_cmd->parsed()) {
    scanssc_mask* mask = nullptr;
    const scanssc_status st =
        scanssc_mask_build(mask_axis.c_str(), mask_length, mask_margin, mask_flip ? 1 : 0,
                           mask_width_mode.c_str(), mask_margin_rule.c_str(), &mask);
    if (st != SCANSSC_OK) return finish(st);
    const bool ok = write_file(mask_out, render_mask_ascii(mask));
    bool pgm_ok = true;
    if (mask_pgm) pgm_ok = write_file(mask_out + ".pgm", render_mask_pgm(mask));
    scanssc_mask_free(mask);
    if (!ok || !pgm_ok) {
      std::cerr << "error: cannot write " << mask_out << "\n";
      return 2;
    }
    return 0;
  }

  if (synth_cmd->parsed()) {
    int64_t d[3] = {0, 0, 0};
    if (std::sscanf(synth_dims.c_str(), "%" SCNd64 ",%" SCNd64 ",%" SCNd64, &d[0], &d[1], &d[2]) != 3) {
      std::cerr << "error: --dims expects X,Y,Z\n";
      return 2;
    }
    return finish(scanssc_synth(synth_preset.c_str(), d[0], d[1], d[2], synth_seed,
                                synth_out.c_str()));
  }

  if (train_cmd->parsed()) {
    ConfigHandle cfg;
    if (const int rc = open_config(train_config, train_sets, cfg)) return rc;
    int64_t diverged_step = -1;
    const scanssc_status st =
        scanssc_train(cfg.ptr, train_gt.c_str(), train_out.c_str(), &diverged_step);
    if (st == SCANSSC_ERR_DIVERGENCE)
      std::cerr << "error: training diverged at step " << diverged_step << "\n";
    else if (st != SCANSSC_OK)
      std::cerr << "error: " << scanssc_last_error() << "\n";
    return status_to_exit(st);
  }

  if (gc_cmd->parsed()) {
    ConfigHandle cfg;
    if (gc_config.empty()) {
      // tiny default configuration for gradient checking
      if (const int rc = open_config("", {}, cfg)) return rc;
      const char* tiny[][2] = {{"target_dims", "4,4,2"}, {"proposal_dims", "4,4,2"},
                               {"channels", "8"},        {"num_classes", "5"}};
      for (const auto& kv : tiny)
        if (scanssc_config_set(cfg.ptr, kv[0], kv[1]) != SCANSSC_OK)
          return finish(SCANSSC_ERR_USAGE);
    } else if (const int rc = open_config(gc_config, {}, cfg)) {
      return rc;
    }
    for (const std::string& kv : gc_sets) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "error: --set expects key=value\n";
        return 2;
      }
      if (scanssc_config_set(cfg.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) !=
          SCANSSC_OK)
        return finish(SCANSSC_ERR_USAGE);
    }
    char* report = nullptr;
    const scanssc_status st = scanssc_gradcheck(cfg.ptr, gc_module.c_str(), &report);
    if (report != nullptr) {
      std::cout << report;
      scanssc_string_free(report);
    }
    if (st == SCANSSC_ERR_GRADCHECK) {
      std::cerr << "error: gradient check failed\n";
      return 4;
    }
    return finish(st);
  }

  if (an_cmd->parsed()) {
    return finish(scanssc_analyze(an_pred.empty() ? nullptr : an_pred.c_str(), an_gt.c_str(),
                                  an_logits.empty() ? nullptr : an_logits.c_str(),
                                  an_axes.c_str(), an_bins.c_str(), an_norm ? 1 : 0,
                                  an_out.c_str()));
  }

  if (or_cmd->parsed()) {
    double dev = 0.0;
    if (!or_replay.empty()) {
      const scanssc_status st = scanssc_oracle_replay(or_replay.c_str(), &dev);
      std::cout << "replay deviation = " << dev << "\n";
      return finish(st);
    }
    if (or_suite.empty()) {
      std::cerr << "error: --suite or --replay required\n";
      return 2;
    }
    const scanssc_status st =
        scanssc_oracle(or_suite.c_str(), or_trials, or_seed, or_repro.c_str(), &dev);
    std::cout << "suite " << or_suite << ": max deviation = " << dev << "\n";
    if (st == SCANSSC_ERR_ORACLE)
      std::cerr << "error: deviation exceeded tolerance; repro written to " << or_repro << "\n";
    return finish(st);
  }

  if (cv_cmd->parsed()) {
    return finish(scanssc_convert(cv_in.c_str(), cv_out.c_str()));
  }

  return 2;
}
