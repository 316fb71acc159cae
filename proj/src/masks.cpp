#include "scanssc/masks.hpp"

#include <cmath>
#include <stdexcept>

namespace scanssc::masks {

namespace {

void check_args(int64_t length, double margin_ratio) {
  if (length < 1) throw std::invalid_argument("mask length must be >= 1");
  if (!(margin_ratio >= 0.0 && margin_ratio <= 1.0))
    throw std::invalid_argument("margin ratio must lie in [0,1]");
}

int64_t margin_size(int64_t length, double margin_ratio) {
  return static_cast<int64_t>(std::floor(margin_ratio * static_cast<double>(length)));
}

// Clears blocks inside the margin set per the margin rule. in_margin is a
// 0/1 vector over indices.
void apply_margin(AttentionMask& m, const std::vector<uint8_t>& in_margin, MarginRule rule) {
  for (int64_t i = 0; i < m.length; ++i)
    for (int64_t j = 0; j < m.length; ++j) {
      const bool hit = rule == MarginRule::both
                           ? (in_margin[static_cast<size_t>(i)] && in_margin[static_cast<size_t>(j)])
                           : (in_margin[static_cast<size_t>(i)] || in_margin[static_cast<size_t>(j)]);
      if (hit) m.blocked[static_cast<size_t>(i * m.length + j)] = 0;
    }
}

}  // namespace

int64_t AttentionMask::allowed_in_row(int64_t i) const {
  int64_t n = 0;
  for (int64_t j = 0; j < length; ++j)
    if (!is_blocked(i, j)) ++n;
  return n;
}

AttentionMask build_depth_mask(int64_t length, double margin_ratio, MarginRule rule) {
  check_args(length, margin_ratio);
  AttentionMask m;
  m.length = length;
  m.axis = {Axis::depth, false};
  m.margin_ratio = margin_ratio;
  m.blocked.assign(static_cast<size_t>(length * length), 0);
  for (int64_t i = 0; i < length; ++i)
    for (int64_t j = i + 1; j < length; ++j) m.blocked[static_cast<size_t>(i * length + j)] = 1;

  const int64_t ms = margin_size(length, margin_ratio);
  std::vector<uint8_t> in_margin(static_cast<size_t>(length), 0);
  for (int64_t i = 0; i < ms; ++i) in_margin[static_cast<size_t>(i)] = 1;  // front of the scene
  apply_margin(m, in_margin, rule);
  return m;
}

AttentionMask build_width_mask(int64_t length, double margin_ratio, WidthMode mode,
                               MarginRule rule) {
  check_args(length, margin_ratio);
  AttentionMask m;
  m.length = length;
  m.axis = {Axis::width, false};
  m.margin_ratio = margin_ratio;
  m.blocked.assign(static_cast<size_t>(length * length), 1);

  const int64_t c = length / 2;  // last index (1-based) of the left half
  if (mode == WidthMode::same_side) {
    // left half (0-based i < c): keys i..c-1; right half: keys c..i
    for (int64_t i = 0; i < length; ++i) {
      if (i < c)
        for (int64_t j = i; j < c; ++j) m.blocked[static_cast<size_t>(i * length + j)] = 0;
      else
        for (int64_t j = c; j <= i; ++j) m.blocked[static_cast<size_t>(i * length + j)] = 0;
    }
  } else {
    // rank by distance from the center gap; ties allowed both ways
    auto rank = [&](int64_t i) { return i < c ? (c - 1 - i) : (i - c); };
    for (int64_t i = 0; i < length; ++i)
      for (int64_t j = 0; j < length; ++j)
        if (rank(j) <= rank(i)) m.blocked[static_cast<size_t>(i * length + j)] = 0;
  }

  // central margin: floor(ratio * L) indices on each side of the center
  const int64_t ms = margin_size(length, margin_ratio);
  std::vector<uint8_t> in_margin(static_cast<size_t>(length), 0);
  for (int64_t i = std::max<int64_t>(0, c - ms); i < std::min(length, c + ms); ++i)
    in_margin[static_cast<size_t>(i)] = 1;
  apply_margin(m, in_margin, rule);
  return m;
}

AttentionMask build_height_mask(int64_t length, double margin_ratio, MarginRule rule) {
  check_args(length, margin_ratio);
  AttentionMask m;
  m.length = length;
  m.axis = {Axis::height, false};
  m.margin_ratio = margin_ratio;
  m.blocked.assign(static_cast<size_t>(length * length), 0);
  for (int64_t i = 0; i < length; ++i)
    for (int64_t j = 0; j < i; ++j) m.blocked[static_cast<size_t>(i * length + j)] = 1;

  // near-to-far starts at the top of the scene, i.e. the highest indices
  const int64_t ms = margin_size(length, margin_ratio);
  std::vector<uint8_t> in_margin(static_cast<size_t>(length), 0);
  for (int64_t i = length - ms; i < length; ++i) in_margin[static_cast<size_t>(i)] = 1;
  apply_margin(m, in_margin, rule);
  return m;
}

AttentionMask flip_mask(const AttentionMask& m) {
  AttentionMask out = m;
  out.axis.flipped = !m.axis.flipped;
  for (int64_t i = 0; i < m.length; ++i)
    for (int64_t j = 0; j < m.length; ++j)
      out.blocked[static_cast<size_t>(i * m.length + j)] =
          m.blocked[static_cast<size_t>((m.length - 1 - i) * m.length + (m.length - 1 - j))];
  return out;
}

AttentionMask build_axis_mask(Axis axis, int64_t length, double margin_ratio, bool flipped,
                              WidthMode mode, MarginRule rule) {
  AttentionMask m;
  switch (axis) {
    case Axis::depth:
      m = build_depth_mask(length, margin_ratio, rule);
      break;
    case Axis::width:
      m = build_width_mask(length, margin_ratio, mode, rule);
      break;
    case Axis::height:
      m = build_height_mask(length, margin_ratio, rule);
      break;
  }
  return flipped ? flip_mask(m) : m;
}

std::string render_ascii(const AttentionMask& m) {
  std::string out;
  out.reserve(static_cast<size_t>(m.length * (m.length + 1)));
  for (int64_t i = 0; i < m.length; ++i) {
    for (int64_t j = 0; j < m.length; ++j) out += m.is_blocked(i, j) ? '#' : '.';
    out += '\n';
  }
  return out;
}

std::string render_pgm(const AttentionMask& m) {
  std::string out = "P2\n" + std::to_string(m.length) + " " + std::to_string(m.length) + "\n255\n";
  for (int64_t i = 0; i < m.length; ++i) {
    for (int64_t j = 0; j < m.length; ++j) {
      out += m.is_blocked(i, j) ? "0" : "255";
      out += (j + 1 == m.length) ? '\n' : ' ';
    }
  }
  return out;
}

}  // namespace scanssc::masks
