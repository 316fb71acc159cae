#include "scanssc/scan_module.hpp"

#include <cmath>
#include <stdexcept>

#include "scanssc/rng.hpp"

namespace scanssc::model {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  const auto n = static_cast<size_t>(ad::shape_numel(shape));
  std::vector<double> data(n);
  for (size_t i = 0; i < n; ++i) data[i] = rng.uniform(-bound, bound);
  return Tensor::constant(std::move(shape), std::move(data));
}

Tensor fan_in_uniform(ad::Shape shape, int64_t fan_in, Rng& rng) {
  return uniform_tensor(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

ScanBlockParams init_block(int64_t c, int64_t ffn_mult, int64_t heads, Rng& rng) {
  ScanBlockParams b;
  b.heads = heads;
  b.wq = fan_in_uniform({c, c}, c, rng);
  b.bq = Tensor::zeros({c});
  b.wk = fan_in_uniform({c, c}, c, rng);
  b.bk = Tensor::zeros({c});
  b.wv = fan_in_uniform({c, c}, c, rng);
  b.bv = Tensor::zeros({c});
  b.wo = fan_in_uniform({c, c}, c, rng);
  b.bo = Tensor::zeros({c});
  b.norm1_gamma = Tensor::full({c}, 1.0);
  b.norm1_beta = Tensor::zeros({c});
  b.norm2_gamma = Tensor::full({c}, 1.0);
  b.norm2_beta = Tensor::zeros({c});
  const int64_t cff = c * ffn_mult;
  b.ffn_w1 = fan_in_uniform({c, cff}, c, rng);
  b.ffn_b1 = Tensor::zeros({cff});
  b.ffn_w2 = fan_in_uniform({cff, c}, cff, rng);
  b.ffn_b2 = Tensor::zeros({c});
  return b;
}

ResidualUnitParams init_unit(int64_t c, Rng& rng) {
  ResidualUnitParams u;
  const int64_t fan_in = c * 27;
  u.conv1_w = fan_in_uniform({c, c, 3, 3, 3}, fan_in, rng);
  u.conv1_b = Tensor::zeros({c});
  u.conv2_w = fan_in_uniform({c, c, 3, 3, 3}, fan_in, rng);
  u.conv2_b = Tensor::zeros({c});
  return u;
}

MixerParams init_mixer(const ScanModuleConfig& cfg, Rng& rng) {
  MixerParams m;
  m.pyramid = cfg.pyramid;
  m.padding = cfg.padding;
  for (int64_t i = 0; i < cfg.smn_units; ++i) m.units.push_back(init_unit(cfg.dims.channels, rng));
  m.half_unit = init_unit(cfg.dims.channels, rng);
  return m;
}

Tensor residual_unit(const Tensor& f, const ResidualUnitParams& u, ad::PaddingMode padding) {
  Tensor h = ad::relu(ad::conv3d(f, u.conv1_w, u.conv1_b, padding));
  h = ad::conv3d(h, u.conv2_w, u.conv2_b, padding);
  return ad::add(f, h);
}

}  // namespace

ScanModuleParams init_params(const ScanModuleConfig& config, uint64_t seed) {
  config.dims.validate();
  if (config.dims.channels % config.heads != 0)
    fail("channel count must be divisible by the head count");
  if (config.classes < 2) fail("need at least 2 classes");
  Rng rng(seed);

  ScanModuleParams p;
  p.config = config;
  const int64_t c = config.dims.channels;

  p.blocks[0] = init_block(c, config.ffn_multiplier, config.heads, rng);
  p.mixers[0] = init_mixer(config, rng);
  if (config.share_branch_params) {
    p.blocks[1] = p.blocks[0];
    p.blocks[2] = p.blocks[0];
    p.mixers[1] = p.mixers[0];
    p.mixers[2] = p.mixers[0];
  } else {
    p.blocks[1] = init_block(c, config.ffn_multiplier, config.heads, rng);
    p.mixers[1] = init_mixer(config, rng);
    p.blocks[2] = init_block(c, config.ffn_multiplier, config.heads, rng);
    p.mixers[2] = init_mixer(config, rng);
  }

  p.fusion.w = fan_in_uniform({3 * c, 3}, 3 * c, rng);
  p.fusion.b = Tensor::zeros({3});

  p.head.conv_w = fan_in_uniform({c, c, 3, 3, 3}, c * 27, rng);
  p.head.conv_b = Tensor::zeros({c});
  p.head.norm_gamma = Tensor::full({c}, 1.0);
  p.head.norm_beta = Tensor::zeros({c});
  p.head.lin_w = fan_in_uniform({c, config.classes}, c, rng);
  p.head.lin_b = Tensor::zeros({config.classes});
  return p;
}

namespace {

void collect_block(const std::string& prefix, ScanBlockParams& b, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".wq", &b.wq});
  out.push_back({prefix + ".bq", &b.bq});
  out.push_back({prefix + ".wk", &b.wk});
  out.push_back({prefix + ".bk", &b.bk});
  out.push_back({prefix + ".wv", &b.wv});
  out.push_back({prefix + ".bv", &b.bv});
  out.push_back({prefix + ".wo", &b.wo});
  out.push_back({prefix + ".bo", &b.bo});
  out.push_back({prefix + ".norm1_gamma", &b.norm1_gamma});
  out.push_back({prefix + ".norm1_beta", &b.norm1_beta});
  out.push_back({prefix + ".norm2_gamma", &b.norm2_gamma});
  out.push_back({prefix + ".norm2_beta", &b.norm2_beta});
  out.push_back({prefix + ".ffn_w1", &b.ffn_w1});
  out.push_back({prefix + ".ffn_b1", &b.ffn_b1});
  out.push_back({prefix + ".ffn_w2", &b.ffn_w2});
  out.push_back({prefix + ".ffn_b2", &b.ffn_b2});
}

void collect_unit(const std::string& prefix, ResidualUnitParams& u, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".conv1_w", &u.conv1_w});
  out.push_back({prefix + ".conv1_b", &u.conv1_b});
  out.push_back({prefix + ".conv2_w", &u.conv2_w});
  out.push_back({prefix + ".conv2_b", &u.conv2_b});
}

void collect_mixer(const std::string& prefix, MixerParams& m, std::vector<NamedParam>& out) {
  for (size_t i = 0; i < m.units.size(); ++i)
    collect_unit(prefix + ".unit" + std::to_string(i), m.units[i], out);
  if (m.pyramid) collect_unit(prefix + ".half", m.half_unit, out);
}

}  // namespace

std::vector<NamedParam> collect_params(ScanModuleParams& p) {
  std::vector<NamedParam> out;
  const char* axis_tag[3] = {"dep", "wid", "hgt"};
  const int branches = p.config.share_branch_params ? 1 : 3;
  for (int a = 0; a < branches; ++a) {
    collect_block(std::string("block.") + axis_tag[a], p.blocks[static_cast<size_t>(a)], out);
    collect_mixer(std::string("smn.") + axis_tag[a], p.mixers[static_cast<size_t>(a)], out);
  }
  out.push_back({"fusion.w", &p.fusion.w});
  out.push_back({"fusion.b", &p.fusion.b});
  out.push_back({"head.conv_w", &p.head.conv_w});
  out.push_back({"head.conv_b", &p.head.conv_b});
  out.push_back({"head.norm_gamma", &p.head.norm_gamma});
  out.push_back({"head.norm_beta", &p.head.norm_beta});
  out.push_back({"head.lin_w", &p.head.lin_w});
  out.push_back({"head.lin_b", &p.head.lin_b});
  return out;
}

ScanModuleParams bind_to_tape(const ScanModuleParams& p, ad::Tape& tape) {
  ScanModuleParams bound = p;
  auto named = collect_params(bound);
  for (NamedParam& np : named) *np.tensor = tape.leaf(*np.tensor);
  if (p.config.share_branch_params) {
    // one set of leaves drives all three branches
    bound.blocks[1] = bound.blocks[0];
    bound.blocks[2] = bound.blocks[0];
    bound.mixers[1] = bound.mixers[0];
    bound.mixers[2] = bound.mixers[0];
  }
  return bound;
}

Tensor scan_block(const Tensor& f, const masks::AttentionMask& mask, const ScanBlockParams& p,
                  double layer_norm_epsilon) {
  if (f.rank() != 3) fail("scan_block: expected [B,L,C], got " + ad::shape_str(f.shape()));
  const int64_t batch = f.dim(0), len = f.dim(1), c = f.dim(2);
  if (len != mask.length)
    fail("scan_block: sequence length " + std::to_string(len) + " does not match mask length " +
         std::to_string(mask.length));
  if (c % p.heads != 0) fail("scan_block: channels not divisible by head count");
  const int64_t hd = c / p.heads;

  const Tensor x = ad::layer_norm(f, p.norm1_gamma, p.norm1_beta, layer_norm_epsilon);
  Tensor q = ad::linear(x, p.wq, p.bq);
  Tensor k = ad::linear(x, p.wk, p.bk);
  Tensor v = ad::linear(x, p.wv, p.bv);

  Tensor att_out;
  if (p.heads == 1) {
    Tensor scores = ad::matmul(q, ad::permute(k, {0, 2, 1}));
    scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(hd)));
    scores = ad::masked_fill_blocked(scores, mask.blocked, len);
    const Tensor att = ad::softmax(scores, 2);
    att_out = ad::matmul(att, v);
  } else {
    auto split = [&](const Tensor& t) {
      return ad::permute(ad::reshape(t, {batch, len, p.heads, hd}), {0, 2, 1, 3});
    };
    const Tensor qh = split(q), kh = split(k), vh = split(v);
    Tensor scores = ad::matmul(qh, ad::permute(kh, {0, 1, 3, 2}));
    scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(hd)));
    scores = ad::masked_fill_blocked(scores, mask.blocked, len);
    const Tensor att = ad::softmax(scores, 3);
    att_out = ad::reshape(ad::permute(ad::matmul(att, vh), {0, 2, 1, 3}), {batch, len, c});
  }

  const Tensor f_bar = ad::add(f, ad::linear(att_out, p.wo, p.bo));
  const Tensor y = ad::layer_norm(f_bar, p.norm2_gamma, p.norm2_beta, layer_norm_epsilon);
  const Tensor h = ad::linear(ad::relu(ad::linear(y, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
  return ad::add(f_bar, h);
}

Tensor spatial_mix(const Tensor& f, const MixerParams& p) {
  if (f.rank() != 4) fail("spatial_mix: expected [X,Y,Z,C], got " + ad::shape_str(f.shape()));
  if (p.pyramid && (f.dim(0) < 2 || f.dim(1) < 2 || f.dim(2) < 2))
    fail("spatial_mix: every spatial extent must be >= 2 for the pyramid level; "
         "disable the pyramid for degenerate grids");

  Tensor h = f;
  for (const ResidualUnitParams& u : p.units) h = residual_unit(h, u, p.padding);
  if (!p.pyramid) return h;

  Tensor low = ad::avgpool_half(h);
  low = residual_unit(low, p.half_unit, p.padding);
  const Tensor up = ad::resize_trilinear(low, {f.dim(0), f.dim(1), f.dim(2)});
  return ad::add(h, up);
}

Tensor fusion_weights(const Tensor& f_dep, const Tensor& f_wid, const Tensor& f_hgt,
                      const FusionParams& p) {
  if (f_dep.shape() != f_wid.shape() || f_dep.shape() != f_hgt.shape())
    fail("fuse_tri_features: branch volumes disagree: " + ad::shape_str(f_dep.shape()) + " vs " +
         ad::shape_str(f_wid.shape()) + " vs " + ad::shape_str(f_hgt.shape()));
  const Tensor cat = ad::concat({f_dep, f_wid, f_hgt}, 3);
  return ad::softmax(ad::linear(cat, p.w, p.b), 3);
}

Tensor fuse_tri_features(const Tensor& f_dep, const Tensor& f_wid, const Tensor& f_hgt,
                         const FusionParams& p) {
  const Tensor w = fusion_weights(f_dep, f_wid, f_hgt, p);
  const Tensor* branches[3] = {&f_dep, &f_wid, &f_hgt};
  Tensor out;
  for (int i = 0; i < 3; ++i) {
    const Tensor wi = ad::narrow(w, 3, i, 1);  // [X,Y,Z,1], broadcast over channels
    const Tensor term = ad::mul(*branches[i], wi);
    out = i == 0 ? term : ad::add(out, term);
  }
  return out;
}

Tensor predict_head(const Tensor& f, const HeadParams& p, const GridDims& dims,
                    double layer_norm_epsilon) {
  Tensor h = ad::conv3d(f, p.conv_w, p.conv_b, ad::PaddingMode::zero);
  h = ad::layer_norm(h, p.norm_gamma, p.norm_beta, layer_norm_epsilon);
  h = ad::linear(h, p.lin_w, p.lin_b);
  return ad::resize_trilinear(h, dims.target);
}

ScanMasks build_masks(const ScanModuleConfig& config) {
  ScanMasks m;
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<size_t>(a);
    m.by_axis[ua] = masks::build_axis_mask(static_cast<Axis>(a), config.dims.proposal[ua],
                                           config.margin_ratios[ua], config.mask_flips[ua],
                                           config.width_mode, config.margin_rule);
  }
  return m;
}

Tensor scan_module_forward(const Tensor& f, const ScanMasks& masks, const ScanModuleParams& p) {
  if (f.rank() != 4) fail("scan_module_forward: expected [X,Y,Z,C]");
  const std::array<int64_t, 3> dims{f.dim(0), f.dim(1), f.dim(2)};
  std::array<Tensor, 3> branch;
  for (int a = 0; a < 3; ++a) {
    if (!p.config.branch_enabled[static_cast<size_t>(a)]) {
      branch[static_cast<size_t>(a)] = f;
      continue;
    }
    const Axis axis = static_cast<Axis>(a);
    Tensor seq = flatten_for_axis(f, axis);
    seq = scan_block(seq, masks.by_axis[static_cast<size_t>(a)], p.blocks[static_cast<size_t>(a)],
                     p.config.layer_norm_epsilon);
    Tensor vol = unflatten_for_axis(seq, axis, dims);
    branch[static_cast<size_t>(a)] = spatial_mix(vol, p.mixers[static_cast<size_t>(a)]);
  }
  return fuse_tri_features(branch[0], branch[1], branch[2], p.fusion);
}

}  // namespace scanssc::model
