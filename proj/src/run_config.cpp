#include "scanssc/run_config.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "scanssc/formats.hpp"

namespace scanssc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    fail("config key '" + key + "': bad integer '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    fail("config key '" + key + "': bad number '" + v + "'");
  }
  if (used != v.size()) fail("config key '" + key + "': bad number '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail("config key '" + key + "': bad boolean '" + v + "'");
}

std::array<int64_t, 3> parse_dims(const std::string& key, const std::string& v) {
  std::array<int64_t, 3> out{};
  std::istringstream ss(v);
  std::string cell;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, cell, ',')) fail("config key '" + key + "': expected X,Y,Z");
    out[static_cast<size_t>(i)] = parse_int(key, trim(cell));
  }
  if (std::getline(ss, cell, ',')) fail("config key '" + key + "': expected exactly 3 extents");
  return out;
}

const char* bool_str(bool b) { return b ? "true" : "false"; }

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  return parse(io::read_text_file(path), path);
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(origin + ":" + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  static const char* axis_suffix[3] = {"dep", "wid", "hgt"};
  // per-axis keys: <stem>_dep / _wid / _hgt
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<size_t>(a);
    const std::string s = axis_suffix[a];
    if (key == "margin_" + s) {
      margins[ua] = parse_real(key, value);
      return;
    }
    if (key == "mask_flip_" + s) {
      mask_flips[ua] = parse_bool(key, value);
      return;
    }
    if (key == "loss_flip_" + s) {
      loss_flips[ua] = parse_bool(key, value);
      return;
    }
    if (key == "module_" + s) {
      module_axes[ua] = parse_bool(key, value);
      return;
    }
    if (key == "loss_" + s) {
      loss_axes[ua] = parse_bool(key, value);
      return;
    }
  }
  if (key == "target_dims")
    target_dims = parse_dims(key, value);
  else if (key == "proposal_dims")
    proposal_dims = parse_dims(key, value);
  else if (key == "channels")
    channels = parse_int(key, value);
  else if (key == "num_classes")
    num_classes = parse_int(key, value);
  else if (key == "heads")
    heads = parse_int(key, value);
  else if (key == "ffn_multiplier")
    ffn_multiplier = parse_int(key, value);
  else if (key == "smn_units")
    smn_units = parse_int(key, value);
  else if (key == "smn_pyramid")
    smn_pyramid = parse_bool(key, value);
  else if (key == "conv_padding")
    conv_padding = value;
  else if (key == "width_mask_mode")
    width_mask_mode = value;
  else if (key == "margin_rule")
    margin_rule = value;
  else if (key == "share_branch_params")
    share_branch_params = parse_bool(key, value);
  else if (key == "lambda_d")
    lambda_d = parse_real(key, value);
  else if (key == "lambda_scan")
    lambda_scan = parse_real(key, value);
  else if (key == "depth_term")
    depth_term = parse_real(key, value);
  else if (key == "ce_weighting")
    ce_weighting = value;
  else if (key == "seed")
    seed = static_cast<uint64_t>(parse_int(key, value));
  else if (key == "learning_rate")
    learning_rate = parse_real(key, value);
  else if (key == "momentum")
    momentum = parse_real(key, value);
  else if (key == "steps")
    steps = parse_int(key, value);
  else
    fail("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  grid_dims().validate();
  if (channels % heads != 0) fail("channels must be divisible by heads");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (heads < 1 || ffn_multiplier < 1 || smn_units < 0) fail("bad model sizes");
  for (double m : margins)
    if (!(m >= 0.0 && m <= 1.0)) fail("margin ratios must lie in [0,1]");
  if (conv_padding != "zero" && conv_padding != "reflect")
    fail("conv_padding must be zero or reflect");
  if (width_mask_mode != "same_side" && width_mask_mode != "distance_rank")
    fail("width_mask_mode must be same_side or distance_rank");
  if (margin_rule != "both" && margin_rule != "either")
    fail("margin_rule must be both or either");
  if (ce_weighting != "uniform" && ce_weighting != "frequency")
    fail("ce_weighting must be uniform or frequency");
  if (lambda_d < 0.0 || lambda_scan < 0.0) fail("loss weights must be nonnegative");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0,1)");
  if (steps < 0) fail("steps must be nonnegative");
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  auto dims3 = [](const std::array<int64_t, 3>& d) {
    return std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]);
  };
  out << "target_dims = " << dims3(target_dims) << "\n";
  out << "proposal_dims = " << dims3(proposal_dims) << "\n";
  out << "channels = " << channels << "\n";
  out << "num_classes = " << num_classes << "\n";
  out << "heads = " << heads << "\n";
  out << "ffn_multiplier = " << ffn_multiplier << "\n";
  out << "smn_units = " << smn_units << "\n";
  out << "smn_pyramid = " << bool_str(smn_pyramid) << "\n";
  out << "conv_padding = " << conv_padding << "\n";
  out << "width_mask_mode = " << width_mask_mode << "\n";
  out << "margin_rule = " << margin_rule << "\n";
  const char* suffix[3] = {"dep", "wid", "hgt"};
  for (int a = 0; a < 3; ++a)
    out << "margin_" << suffix[a] << " = " << fmt_real(margins[static_cast<size_t>(a)]) << "\n";
  for (int a = 0; a < 3; ++a)
    out << "mask_flip_" << suffix[a] << " = " << bool_str(mask_flips[static_cast<size_t>(a)]) << "\n";
  for (int a = 0; a < 3; ++a)
    out << "loss_flip_" << suffix[a] << " = " << bool_str(loss_flips[static_cast<size_t>(a)]) << "\n";
  for (int a = 0; a < 3; ++a)
    out << "module_" << suffix[a] << " = " << bool_str(module_axes[static_cast<size_t>(a)]) << "\n";
  for (int a = 0; a < 3; ++a)
    out << "loss_" << suffix[a] << " = " << bool_str(loss_axes[static_cast<size_t>(a)]) << "\n";
  out << "share_branch_params = " << bool_str(share_branch_params) << "\n";
  out << "lambda_d = " << fmt_real(lambda_d) << "\n";
  out << "lambda_scan = " << fmt_real(lambda_scan) << "\n";
  out << "depth_term = " << fmt_real(depth_term) << "\n";
  out << "ce_weighting = " << ce_weighting << "\n";
  out << "seed = " << seed << "\n";
  out << "learning_rate = " << fmt_real(learning_rate) << "\n";
  out << "momentum = " << fmt_real(momentum) << "\n";
  out << "steps = " << steps << "\n";
  return out.str();
}

GridDims RunConfig::grid_dims() const {
  GridDims d;
  d.target = target_dims;
  d.proposal = proposal_dims;
  d.channels = channels;
  return d;
}

model::ScanModuleConfig RunConfig::module_config() const {
  model::ScanModuleConfig c;
  c.dims = grid_dims();
  c.classes = num_classes;
  c.heads = heads;
  c.ffn_multiplier = ffn_multiplier;
  c.smn_units = smn_units;
  c.pyramid = smn_pyramid;
  c.padding = conv_padding == "reflect" ? ad::PaddingMode::reflect : ad::PaddingMode::zero;
  c.margin_ratios = margins;
  c.mask_flips = mask_flips;
  c.branch_enabled = module_axes;
  c.width_mode = width_mask_mode == "distance_rank" ? masks::WidthMode::distance_rank
                                                    : masks::WidthMode::same_side;
  c.margin_rule = margin_rule == "either" ? masks::MarginRule::either : masks::MarginRule::both;
  c.share_branch_params = share_branch_params;
  return c;
}

loss::ScanLossConfig RunConfig::scan_loss_config() const {
  loss::ScanLossConfig c;
  c.axis_enabled = loss_axes;
  c.flipped = loss_flips;
  return c;
}

}  // namespace scanssc
