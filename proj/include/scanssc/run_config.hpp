#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "scanssc/scan_loss.hpp"
#include "scanssc/scan_module.hpp"

namespace scanssc {

// Flat key = value run configuration ('#' starts a comment). Every field
// is validated against the module preconditions at load time.
struct RunConfig {
  std::array<int64_t, 3> target_dims{16, 16, 4};
  std::array<int64_t, 3> proposal_dims{8, 8, 2};
  int64_t channels = 8;
  int64_t num_classes = 20;
  int64_t heads = 1;
  int64_t ffn_multiplier = 4;
  int64_t smn_units = 2;
  bool smn_pyramid = true;
  std::string conv_padding = "zero";        // zero | reflect
  std::string width_mask_mode = "same_side";  // same_side | distance_rank
  std::string margin_rule = "both";         // both | either
  std::array<double, 3> margins{0.5, 0.25, 0.0};
  std::array<bool, 3> mask_flips{false, false, false};
  std::array<bool, 3> loss_flips{false, false, false};
  std::array<bool, 3> module_axes{true, true, true};
  std::array<bool, 3> loss_axes{true, true, true};
  bool share_branch_params = false;
  double lambda_d = 0.001;
  double lambda_scan = 1.0;
  double depth_term = 0.0;
  std::string ce_weighting = "uniform";     // uniform | frequency
  uint64_t seed = 1;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int64_t steps = 200;

  static RunConfig load(const std::string& path);
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string serialize() const;

  model::ScanModuleConfig module_config() const;
  loss::ScanLossConfig scan_loss_config() const;
  GridDims grid_dims() const;
};

}  // namespace scanssc
