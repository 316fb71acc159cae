#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scanssc/voxel.hpp"

namespace scanssc::masks {

// Width-axis cascade geometry. same_side keeps each query on its own half
// (two triangles meeting at the center); distance_rank lets a query attend
// any key at most as far from the center as itself, including cross-side.
enum class WidthMode { same_side, distance_rank };

// both: a blocked pair is cleared only when query and key both lie in the
// margin set. either: cleared when at least one of them does.
enum class MarginRule { both, either };

// Boolean attention mask for one axis. blocked(i,j) == true forbids query
// i from attending key j (0-based, row-major L*L storage). The diagonal is
// never blocked.
struct AttentionMask {
  int64_t length = 0;
  std::vector<uint8_t> blocked;
  AxisDirection axis;
  double margin_ratio = 0.0;

  bool is_blocked(int64_t i, int64_t j) const {
    return blocked[static_cast<size_t>(i * length + j)] != 0;
  }
  int64_t allowed_in_row(int64_t i) const;
};

// Cascade toward the front: query i attends itself and nearer keys j <= i;
// the first floor(margin_ratio * L) indices form the margin set.
AttentionMask build_depth_mask(int64_t length, double margin_ratio,
                               MarginRule rule = MarginRule::both);

// Hourglass cascade toward the center; margin_ratio counts the margin per
// side, so the margin set is the central 2*floor(margin_ratio * L) indices.
AttentionMask build_width_mask(int64_t length, double margin_ratio,
                               WidthMode mode = WidthMode::same_side,
                               MarginRule rule = MarginRule::both);

// Cascade toward the top under bottom-to-top indexing: query i attends
// itself and higher keys j >= i; the margin set sits at the top indices.
AttentionMask build_height_mask(int64_t length, double margin_ratio,
                                MarginRule rule = MarginRule::both);

// blocked'(i,j) = blocked(L-1-i, L-1-j); an involution.
AttentionMask flip_mask(const AttentionMask& m);

AttentionMask build_axis_mask(Axis axis, int64_t length, double margin_ratio, bool flipped,
                              WidthMode mode = WidthMode::same_side,
                              MarginRule rule = MarginRule::both);

// '.' allowed, '#' blocked, one row per line.
std::string render_ascii(const AttentionMask& m);
// 8-bit PGM, allowed = 255 / blocked = 0.
std::string render_pgm(const AttentionMask& m);

}  // namespace scanssc::masks
