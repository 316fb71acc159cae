#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scanssc/autodiff.hpp"
#include "scanssc/masks.hpp"
#include "scanssc/voxel.hpp"

namespace scanssc::model {

using ad::Tensor;

// Deterministic parameter RNG; see rng.hpp for the generator contract.
struct InitRng;

// One axis branch's transformer block: pre-norm masked self-attention and
// a pre-norm 2-layer ReLU FFN, both residual.
struct ScanBlockParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;        // C -> C projections
  Tensor norm1_gamma, norm1_beta;
  Tensor norm2_gamma, norm2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;        // C -> Cff -> C
  int64_t heads = 1;
};

struct ResidualUnitParams {
  Tensor conv1_w, conv1_b;  // [C,C,3,3,3]
  Tensor conv2_w, conv2_b;
};

// Residual conv stack plus a two-level pyramid merge (pool 2x, process,
// resize back, sum).
struct MixerParams {
  std::vector<ResidualUnitParams> units;
  ResidualUnitParams half_unit;
  bool pyramid = true;
  ad::PaddingMode padding = ad::PaddingMode::zero;
};

// Voxelwise 3C -> 3 projection for the branch weights.
struct FusionParams {
  Tensor w, b;
};

// Conv -> norm -> linear -> trilinear upsample to the target grid.
struct HeadParams {
  Tensor conv_w, conv_b;
  Tensor norm_gamma, norm_beta;
  Tensor lin_w, lin_b;  // C -> P
};

struct ScanModuleConfig {
  GridDims dims;
  int64_t classes = 20;
  int64_t heads = 1;
  int64_t ffn_multiplier = 4;
  int64_t smn_units = 2;
  bool pyramid = true;
  ad::PaddingMode padding = ad::PaddingMode::zero;
  std::array<double, 3> margin_ratios{0.5, 0.25, 0.0};
  std::array<bool, 3> mask_flips{false, false, false};
  std::array<bool, 3> branch_enabled{true, true, true};
  masks::WidthMode width_mode = masks::WidthMode::same_side;
  masks::MarginRule margin_rule = masks::MarginRule::both;
  bool share_branch_params = false;
  double layer_norm_epsilon = 1e-5;
};

struct ScanModuleParams {
  ScanModuleConfig config;
  std::array<ScanBlockParams, 3> blocks;
  std::array<MixerParams, 3> mixers;
  FusionParams fusion;
  HeadParams head;
};

// Fan-in-scaled uniform init for projections, identity norms, zero fusion
// bias; the t=0 module is residual-dominated.
ScanModuleParams init_params(const ScanModuleConfig& config, uint64_t seed);

// Flat view over every learnable tensor, in a stable order.
struct NamedParam {
  std::string name;
  Tensor* tensor;
};
std::vector<NamedParam> collect_params(ScanModuleParams& p);

// Copies of p whose tensors are leaves of the given tape.
ScanModuleParams bind_to_tape(const ScanModuleParams& p, ad::Tape& tape);

// F_bar = F + MaskedSA(Norm1(F), M); out = F_bar + FFN(Norm2(F_bar)).
// f: [B, L, C] with L == mask length. Scores scale by 1/sqrt(C/heads).
Tensor scan_block(const Tensor& f, const masks::AttentionMask& mask, const ScanBlockParams& p,
                  double layer_norm_epsilon = 1e-5);

// Residual conv stack + pyramid merge; preserves [X,Y,Z,C].
Tensor spatial_mix(const Tensor& f, const MixerParams& p);

// Voxelwise convex combination of the three branch volumes with softmax
// weights from a linear projection of their channel concatenation.
Tensor fuse_tri_features(const Tensor& f_dep, const Tensor& f_wid, const Tensor& f_hgt,
                         const FusionParams& p);

// Returns the [X,Y,Z,3] softmax weights (diagnostics / convexity checks).
Tensor fusion_weights(const Tensor& f_dep, const Tensor& f_wid, const Tensor& f_hgt,
                      const FusionParams& p);

// Conv -> layer norm -> linear -> trilinear resize to dims.target.
Tensor predict_head(const Tensor& f, const HeadParams& p, const GridDims& dims,
                    double layer_norm_epsilon = 1e-5);

struct ScanMasks {
  std::array<masks::AttentionMask, 3> by_axis;
};
ScanMasks build_masks(const ScanModuleConfig& config);

// Per axis: flatten -> scan block -> unflatten -> spatial mix, then fuse.
// Disabled branches contribute the input volume unchanged.
Tensor scan_module_forward(const Tensor& f, const ScanMasks& masks, const ScanModuleParams& p);

}  // namespace scanssc::model
