#include "scanssc/scanssc_c.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>

#include "scanssc/analyze.hpp"
#include "scanssc/formats.hpp"
#include "scanssc/gradcheck_runner.hpp"
#include "scanssc/masks.hpp"
#include "scanssc/oracle.hpp"
#include "scanssc/run_config.hpp"
#include "scanssc/synth.hpp"
#include "scanssc/train.hpp"

using namespace scanssc;

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

scanssc_status usage_error(const std::string& msg) {
  set_error(msg);
  return SCANSSC_ERR_USAGE;
}

// Runs fn, translating exceptions into status codes. std::invalid_argument
// marks caller mistakes; anything else is internal.
template <typename Fn>
scanssc_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    set_error(e.what());
    return SCANSSC_ERR_USAGE;
  } catch (const std::runtime_error& e) {
    set_error(e.what());
    return SCANSSC_ERR_USAGE;
  } catch (const std::exception& e) {
    set_error(e.what());
    return SCANSSC_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

struct scanssc_mask {
  masks::AttentionMask m;
};

struct scanssc_config {
  RunConfig cfg;
};

extern "C" {

const char* scanssc_last_error(void) { return g_last_error.c_str(); }

void scanssc_string_free(char* s) { std::free(s); }

scanssc_status scanssc_mask_build(const char* axis, int64_t length, double margin_ratio,
                                  int flipped, const char* width_mode, const char* margin_rule,
                                  scanssc_mask** out) {
  if (out == nullptr || axis == nullptr) return usage_error("mask_build: null argument");
  *out = nullptr;
  return guarded([&]() -> scanssc_status {
    const auto ax = axis_from_name(axis);
    if (!ax) return usage_error(std::string("unknown axis '") + axis + "' (dep|wid|hgt)");
    masks::WidthMode wm = masks::WidthMode::same_side;
    if (width_mode != nullptr && std::strlen(width_mode) > 0) {
      if (std::strcmp(width_mode, "distance_rank") == 0)
        wm = masks::WidthMode::distance_rank;
      else if (std::strcmp(width_mode, "same_side") != 0)
        return usage_error("width_mode must be same_side or distance_rank");
    }
    masks::MarginRule mr = masks::MarginRule::both;
    if (margin_rule != nullptr && std::strlen(margin_rule) > 0) {
      if (std::strcmp(margin_rule, "either") == 0)
        mr = masks::MarginRule::either;
      else if (std::strcmp(margin_rule, "both") != 0)
        return usage_error("margin_rule must be both or either");
    }
    auto* handle = new scanssc_mask{
        masks::build_axis_mask(*ax, length, margin_ratio, flipped != 0, wm, mr)};
    *out = handle;
    return SCANSSC_OK;
  });
}

int64_t scanssc_mask_length(const scanssc_mask* mask) { return mask ? mask->m.length : 0; }

int scanssc_mask_blocked(const scanssc_mask* mask, int64_t i, int64_t j) {
  if (mask == nullptr || i < 0 || j < 0 || i >= mask->m.length || j >= mask->m.length) return -1;
  return mask->m.is_blocked(i, j) ? 1 : 0;
}

void scanssc_mask_free(scanssc_mask* mask) { delete mask; }

scanssc_status scanssc_config_create(scanssc_config** out) {
  if (out == nullptr) return usage_error("config_create: null out pointer");
  return guarded([&]() -> scanssc_status {
    *out = new scanssc_config{};
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_config_load(const char* path, scanssc_config** out) {
  if (out == nullptr || path == nullptr) return usage_error("config_load: null argument");
  *out = nullptr;
  return guarded([&]() -> scanssc_status {
    *out = new scanssc_config{RunConfig::load(path)};
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_config_set(scanssc_config* config, const char* key, const char* value) {
  if (config == nullptr || key == nullptr || value == nullptr)
    return usage_error("config_set: null argument");
  // full-config validation happens when a command consumes the config
  return guarded([&]() -> scanssc_status {
    config->cfg.set(key, value);
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_config_dump(const scanssc_config* config, char** out) {
  if (config == nullptr || out == nullptr) return usage_error("config_dump: null argument");
  return guarded([&]() -> scanssc_status {
    *out = dup_string(config->cfg.serialize());
    return *out ? SCANSSC_OK : SCANSSC_ERR_INTERNAL;
  });
}

void scanssc_config_free(scanssc_config* config) { delete config; }

scanssc_status scanssc_synth(const char* preset, int64_t x, int64_t y, int64_t z, uint64_t seed,
                             const char* out_path) {
  if (preset == nullptr || out_path == nullptr) return usage_error("synth: null argument");
  return guarded([&]() -> scanssc_status {
    const LabeledGrid g = synth_scene(preset, {x, y, z}, seed, ClassTable::semantic_kitti());
    io::write_voxel_grid(out_path, g);
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_train(const scanssc_config* config, const char* gt_path,
                             const char* out_dir, int64_t* diverged_step) {
  if (config == nullptr || gt_path == nullptr || out_dir == nullptr)
    return usage_error("train: null argument");
  if (diverged_step != nullptr) *diverged_step = -1;
  return guarded([&]() -> scanssc_status {
    const LabeledGrid gt = io::read_voxel_grid(gt_path);
    const train::TrainResult res = train::train_toy(config->cfg, gt, out_dir);
    if (res.diverged) {
      if (diverged_step != nullptr) *diverged_step = res.diverged_step;
      set_error("training diverged at step " + std::to_string(res.diverged_step));
      return SCANSSC_ERR_DIVERGENCE;
    }
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_gradcheck(const scanssc_config* config, const char* module, char** report) {
  if (config == nullptr) return usage_error("gradcheck: null config");
  return guarded([&]() -> scanssc_status {
    const train::GradCheckRun run =
        train::run_gradient_checks(config->cfg, module == nullptr ? "" : module);
    if (report != nullptr) {
      *report = dup_string(run.text_report);
      if (*report == nullptr) return SCANSSC_ERR_INTERNAL;
    }
    if (!run.passed) {
      set_error("gradient check exceeded threshold");
      return SCANSSC_ERR_GRADCHECK;
    }
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_analyze(const char* pred_path, const char* gt_path,
                               const char* logits_path, const char* axes, const char* bins,
                               int normalize_svg, const char* out_dir) {
  if (gt_path == nullptr || out_dir == nullptr) return usage_error("analyze: null argument");
  return guarded([&]() -> scanssc_status {
    AnalyzeOptions opt;
    opt.pred_path = pred_path ? pred_path : "";
    opt.gt_path = gt_path;
    opt.logits_path = logits_path ? logits_path : "";
    opt.out_dir = out_dir;
    opt.normalize_svg = normalize_svg != 0;

    if (axes != nullptr && std::strlen(axes) > 0) {
      opt.axes.clear();
      std::stringstream ss(axes);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        const auto ax = axis_from_name(cell);
        if (!ax) return usage_error("unknown axis '" + cell + "' (dep|wid|hgt)");
        opt.axes.push_back(*ax);
      }
      if (opt.axes.empty()) return usage_error("no axes given");
    }
    if (bins != nullptr && std::strlen(bins) > 0) {
      std::stringstream ss(bins);
      std::string cell;
      for (int i = 0; i < 3; ++i) {
        if (!std::getline(ss, cell, ',')) return usage_error("bins must be a comma triple");
        try {
          opt.bins[static_cast<size_t>(i)] = std::stoll(cell);
        } catch (const std::exception&) {
          return usage_error("bad bin count '" + cell + "'");
        }
        if (opt.bins[static_cast<size_t>(i)] < 1) return usage_error("bin counts must be >= 1");
      }
    }
    run_analyze(opt);
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_oracle(const char* suite, int64_t trials, uint64_t seed,
                              const char* repro_out_path, double* max_deviation) {
  if (suite == nullptr) return usage_error("oracle: null suite");
  return guarded([&]() -> scanssc_status {
    const oracle::OracleOutcome out = oracle::run_oracle_suite(suite, trials, seed);
    if (max_deviation != nullptr) *max_deviation = out.max_deviation;
    if (!out.passed()) {
      if (repro_out_path != nullptr)
        io::write_text_file(repro_out_path, oracle::repro_json(out));
      set_error("oracle suite '" + out.suite + "' deviated by " +
                std::to_string(out.max_deviation));
      return SCANSSC_ERR_ORACLE;
    }
    return SCANSSC_OK;
  });
}

scanssc_status scanssc_oracle_replay(const char* repro_path, double* max_deviation) {
  if (repro_path == nullptr) return usage_error("oracle_replay: null path");
  return guarded([&]() -> scanssc_status {
    const oracle::OracleOutcome out = oracle::replay_repro(io::read_text_file(repro_path));
    if (max_deviation != nullptr) *max_deviation = out.max_deviation;
    return out.passed() ? SCANSSC_OK : SCANSSC_ERR_ORACLE;
  });
}

scanssc_status scanssc_convert(const char* in_path, const char* out_path) {
  if (in_path == nullptr || out_path == nullptr) return usage_error("convert: null path");
  return guarded([&]() -> scanssc_status {
    const auto ext = [](const std::string& p) {
      return std::filesystem::path(p).extension().string();
    };
    const std::string ie = ext(in_path), oe = ext(out_path);
    if (ie == ".sscg" && oe == ".csv")
      io::write_voxel_grid_csv(out_path, io::read_voxel_grid(in_path));
    else if (ie == ".csv" && oe == ".sscg")
      io::write_voxel_grid(out_path, io::read_voxel_grid_csv(in_path));
    else if (ie == ".sscl" && oe == ".csv")
      io::write_logit_grid_csv(out_path, io::read_logit_grid(in_path));
    else if (ie == ".csv" && oe == ".sscl")
      io::write_logit_grid(out_path, io::read_logit_grid_csv(in_path));
    else
      return usage_error("convert: unsupported extension pair " + ie + " -> " + oe);
    return SCANSSC_OK;
  });
}

}  // extern "C"
